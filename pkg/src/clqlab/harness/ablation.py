"""Alpha and branch ablations over several seeds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clqlab.harness import config as config_mod
from clqlab.harness.config import ConfigError, RunConfig
from clqlab.harness.training import ResultRow, evaluate, train, write_results

log = logging.getLogger(__name__)

ALPHAS = (0.2, 0.3, 0.4)
AXES = {"alpha": "alpha_sweep", "alpha_sweep": "alpha_sweep",
        "branch": "branch_sweep", "branch_sweep": "branch_sweep"}
SUMMARY_HEADER = "run,n,AP_mean,AP_std,AP50_mean,AP75_mean,spearman_mean,spearman_std,images_per_second,relative_speed"


def variants(base: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    """Named run configs for one ablation axis (seed not yet applied)."""
    kind = AXES.get(axis)
    if kind is None:
        raise ConfigError(f"unknown ablation axis {axis!r} (expected alpha or branch)")
    out = []
    if kind == "alpha_sweep":
        for a in ALPHAS:
            cfg = config_mod.clone(base)
            cfg.head.alpha = a
            out.append((f"alpha={a}", cfg))
    else:
        for name, lqe, align in (("qfl", False, False), ("qfl+lqe", True, False),
                                 ("qfl+lqe+align", True, True)):
            cfg = config_mod.clone(base)
            cfg.head.lqe_enabled = lqe
            cfg.head.align_enabled = align
            if cfg.assign.qe_target_mode == "hard":
                raise ConfigError("branch sweep needs soft quality targets (qe_target_mode != hard)")
            out.append((name, cfg))
    return out


@dataclass
class AblationResult:
    rows: list[ResultRow]
    images_per_second: dict  # run name -> mean eval throughput
    results_csv: Path | None = None
    summary_csv: Path | None = None

    def runs(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.run not in seen:
                seen.append(r.run)
        return seen

    def mean(self, run: str, field: str) -> float:
        vals = [getattr(r, field) for r in self.rows if r.run == run]
        return float(np.mean(vals)) if vals else float("nan")


def _std(vals) -> float:
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def summary_lines(result: AblationResult) -> list[str]:
    lines = [SUMMARY_HEADER]
    runs = result.runs()
    ref = result.images_per_second.get(runs[0], float("nan")) if runs else float("nan")
    for run in runs:
        rows = [r for r in result.rows if r.run == run]
        ap = [r.AP for r in rows]
        rho = [r.spearman for r in rows if not math.isnan(r.spearman)]
        ips = result.images_per_second.get(run, float("nan"))
        lines.append(",".join([
            run, str(len(rows)), f"{np.mean(ap):.6f}", f"{_std(ap):.6f}",
            f"{np.mean([r.AP50 for r in rows]):.6f}", f"{np.mean([r.AP75 for r in rows]):.6f}",
            f"{np.mean(rho) if rho else float('nan'):.6f}", f"{_std(rho):.6f}",
            f"{ips:.2f}", f"{ips / ref:.3f}",
        ]))
    return lines


def format_table(result: AblationResult) -> str:
    """Human-readable mean +- std table."""
    out = [f"{'run':<16} {'n':>2} {'AP':>17} {'AP50':>7} {'AP75':>7} {'spearman':>17} {'img/s':>8} {'rel':>6}"]
    for line in summary_lines(result)[1:]:
        f = line.split(",")
        out.append(f"{f[0]:<16} {f[1]:>2} {float(f[2]):>8.4f} +- {float(f[3]):.4f} {float(f[4]):>7.4f} "
                   f"{float(f[5]):>7.4f} {float(f[6]):>8.4f} +- {float(f[7]):.4f} {float(f[8]):>8.1f} {float(f[9]):>6.2f}")
    return "\n".join(out)


def run_ablation(base: RunConfig, axis: str, seeds, out_dir=None) -> AblationResult:
    """Train and evaluate every variant of ``axis`` for each seed.

    Writes ``results.csv`` (one row per run and seed, deterministic) and
    ``summary.csv`` (mean, std and measured eval throughput) under
    ``out_dir`` when given; a loss curve per run lands in a subdirectory.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("need at least one seed")
    plan = variants(base, axis)
    out = Path(out_dir) if out_dir is not None else None
    rows, speeds = [], {}
    for seed in seeds:
        for name, cfg in plan:
            cfg = config_mod.clone(cfg)
            cfg.seed = seed
            cfg.run_name = name
            run_dir = out / f"{_slug(name)}_seed{seed}" if out is not None else None
            log.info("ablation %s seed %d", name, seed)
            res = train(cfg, run_dir)
            ev = evaluate(res.checkpoint, run_name=name, train_seconds=res.seconds)
            rows.append(ev.row)
            speeds.setdefault(name, []).append(ev.images_per_second)
    result = AblationResult(rows, {k: float(np.mean(v)) for k, v in speeds.items()})
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        result.results_csv = out / "results.csv"
        result.summary_csv = out / "summary.csv"
        write_results(rows, result.results_csv)
        result.summary_csv.write_text("\n".join(summary_lines(result)) + "\n")
    return result


def _slug(name: str) -> str:
    return name.replace("+", "_").replace("=", "").replace(".", "p")
