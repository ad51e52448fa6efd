"""Wall-clock comparison of one system run against one specification run."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from swingtune import scenarios as scen
from swingtune.grid import GridModel, SpecModel
from swingtune.sim import SimConfig, fluct_grid, integrate_dual, kernel_args


@dataclass(frozen=True)
class BenchReport:
    sys_ms_mean: float
    sys_ms_std: float
    spec_ms_mean: float
    spec_ms_std: float
    speedup: float
    trials: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _time_runs(grid: GridModel, fluct: np.ndarray, cfg: SimConfig, trials: int, warmup: int) -> np.ndarray:
    args = kernel_args(grid)
    for _ in range(warmup):
        integrate_dual(args, fluct, cfg)
    out = np.empty(trials)
    for i in range(trials):
        t0 = time.perf_counter()
        integrate_dual(args, fluct, cfg)
        out[i] = (time.perf_counter() - t0) * 1e3
    return out


def benchmark(model, spec, scenario_kind: str = "modes", cfg: SimConfig = SimConfig(), trials: int = 20,
              warmup: int = 3, seed: int = 0) -> BenchReport:
    """Time single-scenario integrations of ``model`` and ``spec``.

    The demand series is tabulated once beforehand; only integration is
    timed. Both arguments may be a GridModel or a SpecModel, which allows a
    spec-against-spec sanity run. Runs are strictly sequential.
    """
    if trials < 10:
        raise ValueError("use at least 10 trials")
    params = {"horizon": cfg.T_horizon, "dt": cfg.h} if scenario_kind == "demand" else {}
    scenario = scen.generate(scenario_kind, seed, 1, **params)[0]
    fluct = fluct_grid(scenario, cfg)
    a = model.to_grid() if isinstance(model, SpecModel) else model
    b = spec.to_grid() if isinstance(spec, SpecModel) else spec
    ts = _time_runs(a, fluct, cfg, trials, warmup)
    tq = _time_runs(b, fluct, cfg, trials, warmup)
    return BenchReport(
        sys_ms_mean=float(ts.mean()), sys_ms_std=float(ts.std(ddof=1)),
        spec_ms_mean=float(tq.mean()), spec_ms_std=float(tq.std(ddof=1)),
        speedup=float(ts.mean() / tq.mean()), trials=trials,
    )


def format_table(reports: dict) -> str:
    """Rows System / Specification / speed-up, one column per controller."""
    cols = list(reports)
    lines = ["| | " + " | ".join(c.upper() for c in cols) + " |", "|---" * (len(cols) + 1) + "|"]
    lines.append("| System | " + " | ".join(
        f"{reports[c].sys_ms_mean:.3f} ms ± {reports[c].sys_ms_std:.3f} ms" for c in cols) + " |")
    lines.append("| Specification | " + " | ".join(
        f"{reports[c].spec_ms_mean:.3f} ms ± {reports[c].spec_ms_std:.3f} ms" for c in cols) + " |")
    lines.append("| Relative speed-up | " + " | ".join(f"≈ {reports[c].speedup:.2f}" for c in cols) + " |")
    return "\n".join(lines)
