"""``rkhsmeta`` command-line interface.

Every subcommand reads an optional JSON config (``--config``), applies
top-level flag overrides, and writes CSV files into the output directory
(``--output-dir``, else ``$RKHSMETA_OUTPUT_DIR``, else the config's
``output_dir``).  Failures exit nonzero after printing one line of the form
``error: {"type": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import harness as H
from .config import OUTPUT_DIR_ENV, ConfigError, RunConfig, default_run
from .linalg import KernelSingularError, PadeSingularError
from .objectives import ALGORITHMS

EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 2, 1, 3

COMMAND_EXPERIMENT = {
    "train": None,
    "evaluate": None,
    "gradcheck": "gradcheck",
    "theorem-sweep": "theorem-sweep",
    "attack-sweep": "attack-sweep",
    "timing": None,
    "expm-check": None,
}


def _parse_t(s: str) -> float:
    v = float(s)
    if not (v >= 0 or math.isinf(v)):
        raise argparse.ArgumentTypeError("t must be >= 0 or inf")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rkhsmeta", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_DIR_ENV})")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--algorithm", choices=ALGORITHMS)
        sp.add_argument("--experiment")
        sp.add_argument("--meta-iterations", type=int)
        sp.add_argument("--eval-tasks", type=int)
        sp.add_argument("--test-steps", type=int)
        sp.add_argument("--workers", type=int)
        return sp

    common(sub.add_parser("train", help="meta-train and write metrics.csv and checkpoint.json"))
    ev = common(sub.add_parser("evaluate", help="evaluate a checkpoint on held-out tasks"))
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--rule", choices=("gradient", "closed-form"),
                    help="adaptation rule (default: closed-form for meta-rkhs-2, else gradient)")
    common(sub.add_parser("gradcheck", help="derivatives against finite differences"))
    ts = common(sub.add_parser("theorem-sweep", help="Taylor-gap and objective-gap sweeps"))
    ts.add_argument("--seeds", type=int, default=10)
    at = common(sub.add_parser("attack-sweep", help="PGD robust accuracy over an epsilon grid"))
    at.add_argument("--checkpoint", type=Path, help="evaluate this checkpoint instead of training first")
    tm = common(sub.add_parser("timing", help="per-iteration timing ordinals"))
    tm.add_argument("--iterations", type=int, default=50)
    common(sub.add_parser("expm-check", help="Pade and scaling-and-squaring checks"))
    return p


def load_run(args) -> RunConfig:
    if args.config is not None:
        try:
            run = RunConfig.load(args.config)
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
    else:
        exp = args.experiment or COMMAND_EXPERIMENT.get(args.command) or "sine-regression"
        run = default_run(exp, args.algorithm or "meta-rkhs-2")
    try:
        run = run.with_overrides(
            experiment=args.experiment, algorithm=args.algorithm, seed=args.seed,
            meta_iterations=args.meta_iterations, eval_tasks=args.eval_tasks,
            test_steps=args.test_steps, workers=args.workers,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("<flags>", str(exc)) from None
    return run


def output_dir(args, run: RunConfig) -> Path:
    return Path(args.output_dir) if args.output_dir else Path(run.resolved_output_dir())


def _report(checks: dict) -> bool:
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return all(bool(v) for v in checks.values())


def run_command(args) -> int:
    run = load_run(args)
    out = output_dir(args, run)
    cmd = args.command
    if cmd == "train":
        res = H.train(run, out)
        print(f"wrote {res.metrics} and {res.checkpoint} (skipped {res.skipped} iterations)")
        return 0
    if cmd == "evaluate":
        rows = H.evaluate(args.checkpoint, run, out, rule=args.rule)
        for r in rows:
            print(f"{r['algorithm']} rule={r['rule']} t={r['t']} {r['metric']}={r['mean']:.6g} "
                  f"+/- {r['stderr']:.3g} over {r['n_tasks']} tasks")
        return 0
    if cmd == "gradcheck":
        rows, checks = H.gradcheck(run)
        H.write_csv(out / "gradcheck.csv", rows, H.GRADCHECK_COLUMNS)
    elif cmd == "theorem-sweep":
        rows, checks = H.theorem_sweep(run, range(args.seeds))
        H.write_csv(out / "theorem_sweep.csv", rows, H.SWEEP_COLUMNS)
    elif cmd == "attack-sweep":
        if args.checkpoint is not None:
            spec, theta, _ = H.load_checkpoint(args.checkpoint)
        else:
            res = H.train(run, out)
            spec, theta = res.spec, res.theta
        rows = H.attack_sweep(run, spec, theta)
        H.write_csv(out / "attack_sweep.csv", rows, H.ATTACK_COLUMNS)
        for r in rows:
            print(f"eps={r['epsilon']:g} clean={r['clean_acc']:.4f} robust={r['robust_acc']:.4f}")
        return 0
    elif cmd == "timing":
        rows, checks = H.timing_smoke(run, iterations=args.iterations)
        H.write_csv(out / "timing.csv", rows, H.TIMING_COLUMNS)
    elif cmd == "expm-check":
        rows, checks = H.expm_check(run)
        H.write_csv(out / "expm_check.csv", rows, H.EXPM_COLUMNS)
    else:  # pragma: no cover - argparse restricts the choices
        raise ValueError(f"unknown command {cmd}")
    return 0 if _report(checks) else EXIT_CHECK


def _error_line(kind: str, exc: BaseException, **extra) -> None:
    payload = {"type": kind, "message": str(exc), **extra}
    print("error: " + json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except ConfigError as exc:
        _error_line("config", exc, field=exc.path)
        return EXIT_CONFIG
    except H.SpecMismatchError as exc:
        _error_line("spec-mismatch", exc)
        return EXIT_CONFIG
    except KernelSingularError as exc:
        _error_line("kernel-singular", exc)
        return EXIT_RUNTIME
    except PadeSingularError as exc:
        _error_line("pade-singular", exc)
        return EXIT_RUNTIME
    except H.RunAborted as exc:
        _error_line("run-aborted", exc)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        _error_line(type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
