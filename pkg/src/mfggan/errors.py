"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
machine-parseable prefix ``error:<category>:``.
"""


class MfgGanError(Exception):
    category = "internal"


class ShapeError(MfgGanError, ValueError):
    category = "shape"

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(MfgGanError, ValueError):
    category = "domain"


class PreconditionError(MfgGanError, ValueError):
    category = "precondition"


class GradientError(MfgGanError):
    category = "gradient"


class NonFiniteError(MfgGanError, FloatingPointError):
    category = "non-finite"


class NonFiniteLossError(NonFiniteError):
    """Raised when a loss term evaluates to NaN or Inf.

    ``breakdown`` holds the offending :class:`LossBreakdown`.
    """

    def __init__(self, breakdown, checkpoint=None):
        self.breakdown = breakdown
        self.checkpoint = checkpoint
        msg = f"non-finite loss {breakdown}"
        if checkpoint is not None:
            msg += f"; last good checkpoint: {checkpoint}"
        super().__init__(msg)


class NonFiniteGradientError(NonFiniteError):
    def __init__(self, layer):
        self.layer = layer
        super().__init__(f"non-finite gradient in parameter tensor {layer}")


class UnsupportedConfigurationError(MfgGanError, NotImplementedError):
    category = "unsupported"


class WidenGridError(MfgGanError):
    category = "grid"


class SpecError(MfgGanError, ValueError):
    category = "spec"


class CheckpointError(MfgGanError):
    category = "checkpoint"


class BadMagicError(CheckpointError):
    category = "bad-magic"


class TruncatedError(CheckpointError):
    category = "truncated"


class SpecMismatchError(CheckpointError):
    category = "spec-mismatch"


class IdxError(MfgGanError):
    category = "idx"


class IdxMagicError(IdxError):
    category = "idx-magic"


class IdxTruncatedError(IdxError):
    category = "idx-truncated"


class IdxDimensionError(IdxError):
    category = "idx-dims"


class ConfigError(MfgGanError, ValueError):
    category = "config"


class MissingDatasetError(MfgGanError, FileNotFoundError):
    category = "missing-dataset"
