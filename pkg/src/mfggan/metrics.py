"""Moment errors, Gaussian Wasserstein-2 and point-cloud export."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import networks
from .data import sample_noise
from .errors import PreconditionError, SpecError

METRICS_HEADER = ("step", "total", "interior", "terminal", "initial",
                  "mean_err", "cov_err", "w2", "hjb_residual", "wall_ms")


@dataclass
class MetricsRecord:
    step: int
    total: float
    interior: float
    terminal: float
    initial: float
    mean_err: float
    cov_err: float
    w2: float
    hjb_residual: float
    wall_ms: int = 0

    def row(self):
        values = asdict(self)
        out = []
        for key in METRICS_HEADER:
            v = values[key]
            out.append(str(v) if isinstance(v, int) else repr(float(v)))
        return out


def empirical_moments(samples):
    """Sample mean and unbiased (n - 1) covariance of an (n, d) array."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise PreconditionError("empirical_moments needs at least two samples")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (samples.shape[0] - 1)
    return mean, cov


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _check_sym(m, name):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.shape[0] != m.shape[1] or np.max(np.abs(m - m.T), initial=0.0) > 1e-9:
        raise SpecError(f"{name} must be symmetric")
    return 0.5 * (m + m.T)


def gaussian_w2(m1, cov1, m2, cov2):
    """Closed-form W2 (Bures-Wasserstein) distance between two Gaussians."""
    cov1 = _check_sym(cov1, "cov1")
    cov2 = _check_sym(cov2, "cov2")
    m1 = np.asarray(m1, dtype=np.float64).reshape(-1)
    m2 = np.asarray(m2, dtype=np.float64).reshape(-1)
    if cov1.shape != cov2.shape or m1.shape != m2.shape or m1.shape != (cov1.shape[0],):
        raise SpecError(f"dimension mismatch: means {m1.shape} / {m2.shape}, "
                        f"covariances {cov1.shape} / {cov2.shape}")
    diff = m1 - m2
    if np.array_equal(cov1, cov2):
        # tr(2S - 2S) vanishes exactly; skip the eigen-roundoff
        bures = 0.0
    else:
        root1 = _psd_sqrt(cov1)
        cross = root1 @ cov2 @ root1
        cross_eigs = np.clip(np.linalg.eigvalsh(0.5 * (cross + cross.T)), 0.0, None)
        bures = float(np.trace(cov1) + np.trace(cov2) - 2.0 * np.sum(np.sqrt(cross_eigs)))
    return float(np.sqrt(max(float(diff @ diff) + bures, 0.0)))


def moment_errors(samples, mean, cov):
    """``(mean_err, cov_err, w2)`` of samples against a reference Gaussian."""
    m, c = empirical_moments(samples)
    mean_err = float(np.max(np.abs(m - mean)))
    cov_err = float(np.linalg.norm(c - cov, ord="fro"))
    return mean_err, cov_err, gaussian_w2(m, c, mean, cov)


def generate(gen_spec, gen_params, t, n, rng):
    """``n`` generated points at time ``t``."""
    if not 0.0 <= t <= 1.0:
        raise PreconditionError(f"t must lie in [0, 1], got {t}")
    if n == 0:
        return np.zeros((0, gen_spec.output_dim))
    z = sample_noise(n, gen_spec.input_dim, rng)
    return networks.evaluate(gen_spec, gen_params, z, np.full((n, 1), float(t)))


def write_points(points, path):
    """CSV with a ``x0,x1,...`` header, then one ``%.9g`` point per row."""
    path = Path(path)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise PreconditionError("points must be an (n, d) array")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"x{j}" for j in range(points.shape[1])) + "\n")
        for row in points:
            fh.write(",".join("%.9g" % v for v in row) + "\n")
    return path


def read_points(path):
    with open(path) as fh:
        dim = len(fh.readline().strip().split(","))
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return np.array(rows, dtype=np.float64).reshape(-1, dim)


def export_samples(gen_spec, gen_params, t, n, path, rng):
    if not 0.0 <= t <= 1.0:
        raise PreconditionError(f"t must lie in [0, 1], got {t}")
    return write_points(generate(gen_spec, gen_params, t, n, rng), path)


def write_metrics_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for rec in records:
            writer.writerow(rec.row())
    return Path(path)


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            out.append(MetricsRecord(
                step=int(row["step"]), wall_ms=int(row["wall_ms"]),
                **{k: float(row[k]) for k in METRICS_HEADER if k not in ("step", "wall_ms")},
            ))
        return out
