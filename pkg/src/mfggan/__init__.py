"""Mean-field-game GAN training on a from-scratch reverse-mode autodiff."""

__version__ = "0.1.0"
