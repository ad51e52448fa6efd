"""Command line entry point: ``swingtune {run,bench,baseline}``.

Exit codes: 0 success, 1 configuration error, 2 pipeline failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from typing import Optional

import jsonschema
import numpy as np

from swingtune import bench as _bench
from swingtune.baseline import baseline_from_grid, baseline_spec
from swingtune.gradients import ParamVector, apply_spec, apply_system
from swingtune.grid import BusParams, ControllerKind, GridModel, InvalidModel, default_grid
from swingtune.sim import SimConfig, fluct_grid, integrate_dual, kernel_args, write_pair_csv
from swingtune.tuning import OptConfig, PipelineConfig, PipelineError, result_to_dict, run_pipeline

log = logging.getLogger("swingtune")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_BUS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["H", "D"],
    "properties": {k: _NUM for k in ("H", "D", "K", "T", "G", "P_fix", "P_load")},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "controller": {"enum": ["p", "pi", "pli"]},
                "n_internal": {"type": "integer", "minimum": 1},
                "b_internal": _POS, "b_pcc": _POS, "H_ext": _POS, "D_ext": _NUM,
                "D": _POS, "K": _POS, "T": _POS, "G": _POS, "export": _NUM,
                "tau_act": _NUM,
                "buses": {"type": "array", "items": _BUS, "minItems": 2},
                "coupling": {"type": "array", "items": {"type": "array", "items": _NUM}},
                "pcc_index": {"type": "integer", "minimum": 0},
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["modes", "demand"]},
                "seed": {"type": "integer"},
                "resample_seed": {"type": ["integer", "null"]},
                "N": {"type": "integer", "minimum": 1},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_freq": {"type": "integer", "minimum": 1}, "amp_scale": _POS,
                        "gamma": _POS, "eps": _NUM, "mu_mb": _NUM,
                        "n_processes": {"type": "integer", "minimum": 1}, "dt": _POS,
                    },
                },
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"horizon": _POS, "step": _POS, "n_samples": {"type": "integer", "minimum": 1}},
        },
        "tune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _POS,
                "q_iters": {"type": "integer", "minimum": 0},
                "joint_iters": {"type": "integer", "minimum": 0},
                "patience": {"type": "integer", "minimum": 1},
                "rel_tol": _NUM,
                "reduction": _NUM,
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "retries": {"type": "integer", "minimum": 0},
                "per_scenario_q": {"type": "boolean"},
                "reoptimize_resampled": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "trajectories": {"type": "boolean"}},
        },
        "bench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trials": {"type": "integer", "minimum": 10}},
        },
    },
}


class ConfigError(ValueError):
    pass


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return doc


def build_grid(section: dict, controller: Optional[str] = None) -> GridModel:
    section = dict(section)
    kind = ControllerKind(controller or section.pop("controller", "p"))
    section.pop("controller", None)
    try:
        if "buses" in section:
            if "coupling" not in section:
                raise ConfigError("explicit buses need an explicit coupling matrix")
            buses = []
            for b in section["buses"]:
                b = dict(b)
                if kind is not ControllerKind.PI:
                    b.pop("K", None)
                if kind is not ControllerKind.PLI:
                    b.pop("T", None)
                    b.pop("G", None)
                buses.append(BusParams(**b))
            return GridModel(
                buses=tuple(buses), coupling=np.array(section["coupling"], dtype=float),
                controller=kind, pcc_index=section.get("pcc_index", 0),
                tau_act=section.get("tau_act", 0.0),
            )
        extra = set(section) - {"n_internal", "b_internal", "b_pcc", "H_ext", "D_ext", "D", "K", "T",
                                "G", "export", "tau_act"}
        if extra:
            raise ConfigError(f"grid keys {sorted(extra)} need explicit buses")
        n = section.pop("n_internal", 5)
        return default_grid(kind, n, **section)
    except (InvalidModel, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid grid: {exc}") from exc


def pipeline_config(doc: dict, args) -> PipelineConfig:
    grid_doc = doc.get("grid", {})
    model = build_grid(grid_doc, args.controller)
    sc = doc.get("scenario", {})
    sim_doc = doc.get("sim", {})
    tune = doc.get("tune", {})
    try:
        sim = SimConfig(T_horizon=sim_doc.get("horizon", 50.0), step=sim_doc.get("step", 1e-2),
                        n_samples=sim_doc.get("n_samples", 5000))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    opt = OptConfig(**{k: tune[k] for k in ("lr", "q_iters", "joint_iters", "patience", "rel_tol", "reduction",
                                             "beta1", "beta2", "retries")
                        if k in tune})
    seed = args.seed if args.seed is not None else sc.get("seed", 42)
    return PipelineConfig(
        controller=model.controller.value,
        n_internal=model.n_internal,
        model=model,
        scenario=args.scenario or sc.get("kind", "modes"),
        scenario_params=dict(sc.get("params", {})),
        seed=seed,
        resample_seed=sc.get("resample_seed"),
        n_samples=args.samples if args.samples is not None else sc.get("N", 20),
        sim=sim,
        opt=opt,
        per_scenario_q=tune.get("per_scenario_q", False),
        reoptimize_resampled=tune.get("reoptimize_resampled", False),
    )


def _distance_table(res) -> str:
    rows = [("Baseline o_base", res.o_base), ("Initial d_init", res.d_init),
            ("Tuned d_end", res.d_end), ("Resampled d_re", res.d_re)]
    width = max(len(r[0]) for r in rows)
    ctrl = res.config["controller"].upper()
    out = [f"{'':<{width}}  {ctrl}"]
    out += [f"{name:<{width}}  {rep.value:.6g} ± {rep.std:.3g}" for name, rep in rows]
    return "\n".join(out)


def _write_trajectories(outdir: str, cfg: PipelineConfig, res) -> None:
    model = cfg.build_model()
    spec = baseline_spec(model)
    train = cfg.scenario_set(cfg.seed)
    tdir = os.path.join(outdir, "trajectories")
    os.makedirs(tdir, exist_ok=True)
    times = cfg.sim.sample_times()
    nq = len(spec.controller.spec_params)
    for tag, p, q in (("init", res.p_base, res.q_init), ("end", res.p_opt, res.q_opt)):
        sys_args = kernel_args(apply_system(model, p))
        for k, s in enumerate(train):
            fl = fluct_grid(s, cfg.sim)
            qk = q if not cfg.per_scenario_q else ParamVector(spec.controller.spec_params,
                                                              q.x[k * nq:(k + 1) * nq])
            w_sys = integrate_dual(sys_args, fl, cfg.sim, k)[:, 0]
            w_spec = integrate_dual(kernel_args(apply_spec(spec, qk).to_grid()), fl, cfg.sim, k)[:, 0]
            write_pair_csv(os.path.join(tdir, f"{k}_{tag}.csv"), times, w_sys, w_spec)


def cmd_run(args) -> int:
    try:
        doc = load_config(args.config)
        cfg = pipeline_config(doc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = doc.get("output", {})
    outdir = args.out or out.get("dir", "out")
    try:
        res = run_pipeline(cfg)
    except PipelineError as exc:
        print(f"pipeline failed at step '{exc.step}': {exc.__cause__}", file=sys.stderr)
        return 2
    os.makedirs(outdir, exist_ok=True)
    doc_out = result_to_dict(res)
    doc_out["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    with open(os.path.join(outdir, "result.json"), "w") as fh:
        json.dump(doc_out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if out.get("trajectories", True):
        _write_trajectories(outdir, cfg, res)
    print(_distance_table(res))
    print(f"d_end/d_init = {res.ratio():.4g}; results in {outdir}")
    return 0


def cmd_bench(args) -> int:
    try:
        doc = load_config(args.config)
        grid_doc = doc.get("grid", {})
        trials = args.trials or doc.get("bench", {}).get("trials", 20)
        if trials < 10:
            raise ConfigError("--trials must be at least 10")
        sim_doc = doc.get("sim", {})
        sim = SimConfig(T_horizon=sim_doc.get("horizon", 50.0), step=sim_doc.get("step", 1e-2),
                        n_samples=sim_doc.get("n_samples", 5000))
        kinds = [args.controller] if args.controller else ["p", "pi", "pli"]
        models = {k: build_grid(grid_doc, k) for k in kinds}
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    scenario = args.scenario or doc.get("scenario", {}).get("kind", "modes")
    reports = {}
    for k, model in models.items():
        reports[k] = _bench.benchmark(model, baseline_spec(model), scenario, sim, trials)
    print(_bench.format_table(reports))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench.json"), "w") as fh:
            json.dump({k: json.loads(r.to_json()) for k, r in reports.items()}, fh, indent=2)
    return 0


def cmd_baseline(args) -> int:
    try:
        doc = load_config(args.config)
        grid_doc = doc.get("grid", {})
        kinds = [args.controller] if args.controller else ["p", "pi", "pli"]
        models = {k: build_grid(grid_doc, k) for k in kinds}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = {}
    for k, model in models.items():
        b = baseline_from_grid(model)
        out[k] = b.as_dict()
        print(f"{k.upper():>4}: H_spec={b.H_spec:g} D_base={b.D_base:g}"
              + (f" K_base={b.K_base:g}" if b.K_base is not None else "")
              + (f" G_base={b.G_base:g} T_spec={b.T_spec:g}" if b.G_base is not None else "")
              + f"  omega* per unit mismatch={b.omega_star:.6g}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "baseline.json"), "w") as fh:
            json.dump(out, fh, indent=2)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swingtune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("bench", cmd_bench), ("baseline", cmd_baseline)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--controller", choices=["p", "pi", "pli"])
        p.add_argument("--scenario", choices=["modes", "demand"])
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--out")
        p.add_argument("--trials", type=int)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
