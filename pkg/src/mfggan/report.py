"""Evaluation report for a trained run: one CSV row per time index."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import STREAM_EVAL, make_rng, sample_noise
from .metrics import generate, moment_errors
from .objective import HamiltonianSpec, hjb_residuals

REPORT_HEADER = ("t", "n", "mean_err", "cov_err", "w2", "hjb_residual")
REPORT_TIMES = (0.0, 0.5, 1.0)
REPORT_STREAM = 13


def evaluate_checkpoint(cfg, gen_spec, gen_params, disc_spec, disc_params, samples=10000):
    """Moment errors against the target at t = 0, 0.5, 1 and the HJB residual there."""
    rng = make_rng(cfg.seed, STREAM_EVAL, REPORT_STREAM)
    mean, cov = cfg.data_source().moments()
    h_spec = HamiltonianSpec(cfg.q)
    rows = []
    for t in REPORT_TIMES:
        pts = generate(gen_spec, gen_params, t, samples, rng)
        mean_err, cov_err, w2 = moment_errors(pts, mean, cov)
        n_hjb = min(samples, cfg.hjb_samples)
        z = sample_noise(n_hjb, gen_spec.input_dim, rng)
        res = hjb_residuals(gen_spec, gen_params, disc_spec, disc_params, z, np.full((n_hjb, 1), t), h_spec)
        rows.append({"t": t, "n": samples, "mean_err": mean_err, "cov_err": cov_err, "w2": w2,
                     "hjb_residual": float(res.mean())})
    return rows


def write_report(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return Path(path)
