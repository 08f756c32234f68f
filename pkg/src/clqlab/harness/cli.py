"""``clq`` command line.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from clqlab.harness import config as config_mod
from clqlab.harness.config import ConfigError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    config_mod.apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def cmd_train(args) -> int:
    from clqlab.harness.training import train

    cfg = _load_config(args)
    out = Path(args.out or cfg.output_dir)
    res = train(cfg, out, progress_every=args.progress)
    config_mod.save(cfg, out / "config.txt")
    last = res.loss_rows[-1] if res.loss_rows else None
    print(f"checkpoint: {res.checkpoint_path}")
    print(f"loss curve: {res.loss_csv}")
    if last:
        print(f"final L_total: {last[4]:.6f} (iter {last[0]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    from clqlab.harness.training import RESULT_HEADER, evaluate, write_results

    ev = evaluate(args.checkpoint, split=args.split, use_lqe=not args.no_lqe, run_name=args.name)
    print(RESULT_HEADER)
    print(ev.row.csv())
    if args.out:
        write_results([ev.row], args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from clqlab.harness.ablation import format_table, run_ablation

    cfg = _load_config(args)
    seeds = _seeds(args.seeds)
    out = Path(args.out or Path(cfg.output_dir) / f"ablate_{args.axis}")
    res = run_ablation(cfg, args.axis, seeds, out)
    print(format_table(res))
    print(f"results: {res.results_csv}")
    print(f"summary: {res.summary_csv}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from clqlab.harness.gradchecks import REGISTRY, TOLERANCE, run_check

    names = args.only or list(REGISTRY)
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise ConfigError(f"unknown check(s): {', '.join(unknown)}")
    worst = 0.0
    for name in names:
        r = run_check(name, args.draws, args.seed)
        worst = max(worst, r.max_error)
        flag = "ok" if r.passed else "FAIL"
        print(f"{name:<26} max_rel_err={r.max_error:.3e}  draws={r.draws}  {r.seconds:6.2f}s  {flag}")
    print(f"worst: {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst <= TOLERANCE else EXIT_INVALID


def cmd_oracle_suite(args) -> int:
    from clqlab.harness.oracle_suite import run_suite

    ok = True
    for r in run_suite(args.nms_sets, args.ap_scenes, args.atss_scenes, args.seed):
        ok &= r.passed
        print(f"{r.name:<5} cases={r.cases:<4} mismatches={r.failures:<3} worst={r.worst:.2e}  "
              f"{r.seconds:6.2f}s  {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_plot(args) -> int:
    from clqlab.harness.plotting import plot_ablation, plot_loss_curves

    if not args.loss and not args.results:
        raise ConfigError("plot needs --loss and/or --results")
    out = Path(args.out)
    if args.loss:
        for p in plot_loss_curves(args.loss, out / "loss_curves", args.window):
            print(p)
    if args.results:
        for p in plot_ablation(args.results, out / "ablation"):
            print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="clq", description="CLQ detection head: training, evaluation and checks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_opts(sp, seed=True):
        sp.add_argument("--config", help="config document (key = type:value lines)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field; repeatable")
        if seed:
            sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("train", help="train one model")
    run_opts(sp)
    sp.add_argument("--progress", type=int, default=0, metavar="N", help="log every N iterations")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    sp.add_argument("checkpoint")
    sp.add_argument("--split", choices=("val", "train"), default="val")
    sp.add_argument("--no-lqe", action="store_true", help="rank by classification score alone")
    sp.add_argument("--name", help="run name for the result row")
    sp.add_argument("--out", help="write the result row to this CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="alpha or branch ablation over seeds")
    run_opts(sp, seed=False)
    sp.add_argument("--axis", choices=("alpha", "branch"), required=True)
    sp.add_argument("--seeds", default="1,2,3")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--draws", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--only", action="append", metavar="NAME")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("oracle-suite", help="compare fast paths to loop references")
    sp.add_argument("--nms-sets", type=int, default=200)
    sp.add_argument("--ap-scenes", type=int, default=200)
    sp.add_argument("--atss-scenes", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_oracle_suite)

    sp = sub.add_parser("plot", help="render loss curves and ablation bars (SVG + CSV)")
    sp.add_argument("--loss", nargs="+", metavar="LOSS_CSV")
    sp.add_argument("--results", metavar="RESULTS_CSV")
    sp.add_argument("--window", type=int, default=25, help="moving-average window")
    sp.add_argument("--out", default="plots")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    from clqlab.harness.checkpoint import CheckpointError
    from clqlab.harness.training import TrainingAborted

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose or getattr(args, "progress", 0) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingAborted, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
