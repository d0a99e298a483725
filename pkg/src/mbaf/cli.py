"""Command-line entry point: ``mbaf train | eval | bounds``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as config_io
from .checkpoint import load_checkpoint
from .errors import CheckpointVersionError, ConfigurationError
from .evaluation import emit_results, estimate_bler, reference_curves, tdma_baseline, write_bounds
from .model import MBAFSystem
from .training import Trainer, TrainingDiverged

log = logging.getLogger("mbaf")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _snr_range(text: str) -> list[float]:
    """``start:stop:num`` (inclusive, like numpy.linspace) or a comma list."""
    if ":" in text:
        try:
            start, stop, num = text.split(":")
            return [float(x) for x in np.linspace(float(start), float(stop), int(num))]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected start:stop:num, got {text!r}") from None
    return _float_list(text)


def _resolve_config(args) -> config_io.ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        cfg = config_io.load(path)
    else:
        cfg = config_io.preset(args.preset)
    if args.seed is not None:
        cfg = cfg.replace(train={"seed": args.seed}, eval={"seed": args.seed})
    return cfg


def _log_config(cfg):
    log.info("resolved config:\n%s", cfg.dumps())


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.max_batches is not None:
        cfg = cfg.replace(train={"total_batches": args.max_batches,
                                 "curriculum_batches": min(cfg.train.curriculum_batches,
                                                           args.max_batches)})
    _log_config(cfg)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.csv")
    trainer = Trainer(cfg)

    def progress(rec):
        log.info("batch %d snr %.3f dB loss %.5f grad_norm %.4f", rec["batch_idx"], rec["snr_db"],
                 rec["loss"], rec["grad_norm"])

    try:
        trainer.run(log_path=log_path, dump_path=out.with_name(out.name + ".diverged"),
                    progress=progress)
    except TrainingDiverged as exc:
        log.error("training aborted: %s; diagnostic state %s", exc, exc.state)
        return EXIT_RUNTIME
    trainer.save(out)
    log.info("wrote checkpoint %s and training log %s", out, log_path)
    return EXIT_OK


def _load_system(path) -> MBAFSystem:
    ckpt = load_checkpoint(path)
    system = MBAFSystem(ckpt.config)
    system.load_state_dict(ckpt.model_state)
    system.eval()
    return system


def cmd_eval(args) -> int:
    requested = None
    if args.config is not None:
        requested = _resolve_config(args)
    estimates = []
    for path in args.checkpoint:
        if not Path(path).exists():
            raise UsageError(f"checkpoint not found: {path}")
        system = _load_system(path)
        cfg = system.cfg
        if requested is not None and requested.code != cfg.code:
            warnings.warn(f"config {args.config} does not match checkpoint {path}; "
                          "using the checkpoint's config")
            log.warning("config/checkpoint mismatch for %s; using the checkpoint's config", path)
        _log_config(cfg)
        ev = cfg.eval
        trials = args.trials if args.trials is not None else ev.trials
        seed = args.seed if args.seed is not None else ev.seed
        snrs = args.snr if args.snr is not None else [cfg.channel.snr_ff_db]
        for snr in snrs:
            if args.tdma:
                est = tdma_baseline(system, snr, 2 * cfg.code.T, cfg.code.K, trials, seed,
                                    ev.stop_at_errors, ev.batch_size)
            else:
                est = estimate_bler(system, snr, trials, seed, ev.stop_at_errors, ev.batch_size)
            log.info("%s snr %.2f dB T=%d rate %s: bler %.3e over %d trials", path, snr, est.T,
                     est.rate, est.bler, est.trials)
            estimates.append(est)
    emit_results(estimates, path=args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _resolve_config(args)
    K, l, T_list = cfg.code.K, cfg.code.l, [cfg.code.T]
    K = args.K if args.K is not None else K
    l = args.l if args.l is not None else l
    T_list = args.T if args.T is not None else T_list
    if K % l:
        raise UsageError(f"K={K} must be a multiple of l={l}")
    rows = reference_curves(args.snr_range, l, T_list, args.epsilon)
    write_bounds(rows, args.out)
    log.info("wrote %d reference-curve rows to %s", len(rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbaf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help, default_preset="desk"):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--preset", default=default_preset, choices=sorted(config_io.PRESETS),
                       help=f"preset used when --config is not given (default: {default_preset})")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, help="override train.seed and eval.seed")

    p = sub.add_parser("train", help="train a code and write a checkpoint")
    common(p, "checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log.csv)")
    p.add_argument("--max-batches", type=int, help="cap total_batches (smoke runs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte Carlo BLER of trained checkpoints")
    common(p, "results CSV path")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint to evaluate (repeatable)")
    p.add_argument("--snr", type=_float_list, help="comma-separated SNR_ff values in dB")
    p.add_argument("--trials", type=int)
    p.add_argument("--tdma", action="store_true",
                   help="evaluate a single-user checkpoint as the time-division baseline")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bounds", help="normal-approximation and sum-capacity curves")
    common(p, "reference-curve CSV path", default_preset="paper")
    p.add_argument("--snr-range", type=_snr_range, default=_snr_range("-1:1:21"),
                   help="start:stop:num or comma list in dB (default -1:1:21)")
    p.add_argument("--K", type=int)
    p.add_argument("--l", type=int)
    p.add_argument("--T", type=_int_list, help="comma-separated round counts")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (CheckpointVersionError, OSError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
