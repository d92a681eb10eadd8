"""Command-line entry point: ``mfggan train|sample|eval|verify``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import metrics, networks
from .config import RunConfig, coerce, read_config_file, resolve, write_effective_config
from .data import STREAM_EVAL, make_rng
from .errors import ConfigError, MfgGanError, PreconditionError
from .trainer import train

log = logging.getLogger("mfggan")

SAMPLE_SEED_STREAM = 7


class _Parser(argparse.ArgumentParser):
    """argparse with the ``error:<category>:`` prefix on usage errors."""

    def error(self, message):
        if message.startswith("unrecognized arguments"):
            message += "; valid config keys: " + ", ".join(_flag(k) for k in RunConfig.keys())
        self.exit(2, f"error:usage: {message}\n")


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_run_flags(parser):
    for key in RunConfig.keys():
        if key == "experiment":
            continue
        parser.add_argument(_flag(key), dest=key, default=None, metavar=key.upper())


def _run_dir_config(run_dir):
    path = Path(run_dir) / "effective_config"
    if path.exists():
        return resolve(file_values=read_config_file(path), environ={})
    return None


def cmd_train(args):
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {k: coerce(k, getattr(args, k)) for k in RunConfig.keys()
                 if k != "experiment" and getattr(args, k) is not None}
    cfg = resolve(args.experiment, file_values, overrides)
    gen_spec, disc_spec = cfg.specs()
    data = cfg.data_source()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out)

    def progress(rec):
        print(f"step {rec.step}: total={rec.total:.5g} mean_err={rec.mean_err:.4g} "
              f"cov_err={rec.cov_err:.4g} w2={rec.w2:.4g} hjb={rec.hjb_residual:.4g}", flush=True)

    result = train(cfg.train_config(), gen_spec, disc_spec, data, out_dir=out,
                   resume=args.resume, progress=None if args.quiet else progress)
    rng = make_rng(cfg.seed, STREAM_EVAL, SAMPLE_SEED_STREAM)
    for t, name in ((0.0, "samples_t0.csv"), (1.0, "samples_t1.csv")):
        metrics.export_samples(gen_spec, result.gen_params, t, args.export_count, out / name, rng)
    if args.plot:
        from . import plotting

        for path in plotting.render_run(out, cfg, result.gen_params, result.metrics):
            print(f"figure: {path}")
    print(f"wrote {out}")
    return 0


def cmd_sample(args):
    cfg = _run_dir_config(Path(args.checkpoint).parent)
    head = args.head or ("sigmoid" if cfg is not None and cfg.experiment == "mnist" else "linear")
    expected = None
    if cfg is not None and Path(args.checkpoint).name.startswith("gen"):
        expected = cfg.specs()[0]
    spec, params = networks.load_checkpoint(args.checkpoint, expected, head=head)
    if spec.output_dim != spec.input_dim or not spec.time_augmented:
        raise PreconditionError(f"{args.checkpoint} is not a generator checkpoint (dims {spec.dims})")
    if args.count < 0:
        raise PreconditionError("count must be >= 0")
    seed = args.seed if args.seed is not None else int(os.environ.get("MFGAN_SEED", "0"))
    rng = make_rng(seed, STREAM_EVAL, SAMPLE_SEED_STREAM)
    metrics.export_samples(spec, params, args.t, args.count, args.out, rng)
    print(f"wrote {args.count} points at t={args.t} to {args.out}")
    return 0


def cmd_eval(args):
    run = Path(args.run)
    cfg = _run_dir_config(run)
    if cfg is None:
        raise ConfigError(f"{run} has no effective_config; not a run directory")
    gen_spec, disc_spec = cfg.specs()
    ckpt = Path(args.checkpoint) if args.checkpoint else run / "gen_final.ckpt"
    disc_ckpt = Path(str(ckpt).replace("gen_", "disc_", 1)) if ckpt.name.startswith("gen_") else None
    _, gen = networks.load_checkpoint(ckpt, gen_spec)
    if disc_ckpt is None or not disc_ckpt.exists():
        disc_ckpt = run / "disc_final.ckpt"
    _, disc = networks.load_checkpoint(disc_ckpt, disc_spec)
    from .report import evaluate_checkpoint, write_report

    rows = evaluate_checkpoint(cfg, gen_spec, gen, disc_spec, disc, samples=args.samples)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    path = write_report(rows, out / "eval.csv")
    for row in rows:
        print(",".join(str(v) for v in row.values()))
    print(f"report: {path}")
    if not args.no_plot:
        from . import plotting

        history = metrics.read_metrics_csv(run / "metrics.csv") if (run / "metrics.csv").exists() else []
        for fig in plotting.render_run(out, cfg, gen, history, samples=min(args.samples, 5000)):
            print(f"figure: {fig}")
    return 0


def cmd_verify(args):
    from .verify import run_all

    results = run_all(corrupt_hamiltonian=args.corrupt_hamiltonian)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.seconds:7.2f}s  {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        for r in failed:
            print(f"error:verify:{r.name} failed: {r.detail}", file=sys.stderr)
        return 1
    return 0


def build_parser():
    parser = _Parser(prog="mfggan", description="Mean-field-game GAN trainer")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a generator/discriminator pair")
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--experiment", choices=("syn1", "syn2", "syn3", "mnist", "custom"))
    p.add_argument("--resume", action="store_true", help="continue from the latest state in --out")
    p.add_argument("--plot", action="store_true", help="also render PNG figures")
    p.add_argument("--export-count", type=int, default=2000, help="points per endpoint sample file")
    p.add_argument("--quiet", action="store_true")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate points at time t from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--head", choices=networks.HEADS)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a run directory and render its report")
    p.add_argument("--run", required=True, help="run directory written by train")
    p.add_argument("--checkpoint", help="generator checkpoint (default gen_final.ckpt)")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--out", help="report directory (default: the run directory)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the gradient, Legendre, Adam and W2 property suites")
    p.add_argument("--corrupt-hamiltonian", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MfgGanError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

