"""Command line entry point: ``deeplcc {collect,analyze,simulate,compare}``.

Exit codes: 0 ok, 2 config error, 3 runtime failure (collision or solver),
4 prerequisite missing. Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .controller import DeepLccController
from .data import (
    CollectionError, TrajectoryDataset, collect_dataset, is_persistently_exciting, min_data_length, partition,
)
from .linear_model import (
    LinearizationCoeffs, analyze_controllability, analyze_observability, build_model, model_from_config,
    discretize,
)
from .mpc import MpcController, MpcParams
from .plotting import figure_bytes, fuel_figure, spacing_figure, tidy_rows, velocity_figure
from .scenarios import run_comparison, summarize
from .vehicle import simulate_closed_loop

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PREREQ = 0, 2, 3, 4

log = logging.getLogger("deeplcc")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def write_atomic(path: Path, data) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _load(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc)) from exc
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(args, cfg: RunConfig) -> list[int]:
    return [args.seed] if args.seed is not None else list(cfg.scenario["seeds"])


def _load_dataset(args, cfg: RunConfig) -> TrajectoryDataset:
    d = Path(args.dataset) if args.dataset else Path(args.out or cfg.output)
    csv_path, meta_path = d / "dataset.csv", d / "dataset.json"
    if not csv_path.exists() or not meta_path.exists():
        raise CliError(EXIT_PREREQ, "missing_dataset",
                       f"no dataset in {d}; run `deeplcc collect --out {d}` first", dir=str(d))
    ds = TrajectoryDataset.from_files(csv_path, meta_path)
    p = cfg.platoon
    if ds.n != p.n or ds.cav_set != p.cav_set or abs(ds.dt - p.dt_control) > 1e-12:
        raise CliError(EXIT_CONFIG, "config",
                       f"dataset in {d} was recorded for n={ds.n}, cav_set={list(ds.cav_set)}, dt={ds.dt}; "
                       f"config has n={p.n}, cav_set={list(p.cav_set)}, dt={p.dt_control}")
    return ds


# -- subcommands ---------------------------------------------------------------

def cmd_collect(args) -> dict:
    cfg = _load(args)
    col = cfg.collection
    seed = args.seed if args.seed is not None else col["seed"]
    if args.T is not None:
        pr = cfg.controller
        need = min_data_length(cfg.platoon.m, pr.Tini, pr.N, cfg.platoon.n)
        if args.T < need:
            raise CliError(EXIT_CONFIG, "config", f"T={args.T} is below the persistent-excitation "
                           f"minimum {need} = (m+1)(Tini+N+2n)-1", required_min=need)
    T = args.T or int(col["T"])
    out = _out_dir(args, cfg)
    try:
        ds = collect_dataset(cfg.platoon, cfg.v_star, T, excitation=float(col["excitation"]), seed=seed,
                             cav_spacing=cfg.cav_spacing, head_rate=float(col["head_rate"]),
                             noise=bool(col["noise"]))
    except CollectionError as exc:
        raise CliError(EXIT_RUNTIME, "collision", str(exc), seed=exc.seed) from exc
    pr = cfg.controller
    order = pr.Tini + pr.N + 2 * cfg.platoon.n
    pe = is_persistently_exciting(ds.u_hat, order)
    meta = ds.metadata() | {"excitation": float(col["excitation"]),
                            "persistently_exciting": {"order": order, "verdict": pe.verdict,
                                                      "rank": pe.rank, "sigma_min": pe.sigma_min}}
    if not pe:
        raise CliError(EXIT_RUNTIME, "excitation", f"combined input is not persistently exciting of "
                       f"order {order} ({pe.reason})")
    write_atomic(out / "dataset.csv", ds.to_csv())
    write_atomic(out / "dataset.json", json.dumps(meta, indent=2))
    return {"dataset": str(out / "dataset.csv"), "T": T, "seed": seed}


def cmd_analyze(args) -> dict:
    cfg = _load(args)
    p = cfg.platoon
    if args.coeffs:
        c = LinearizationCoeffs(*args.coeffs)
        model = build_model(p.n, p.cav_set, {i: c for i in p.hdv_indices}, cfg.v_star)
    else:
        model = model_from_config(p, cfg.v_star, cfg.cav_spacing)
    choice = "combined" if args.combined else "cav_only"
    ctrb = analyze_controllability(model, choice)
    obs = analyze_observability(model)
    report = {
        "n": p.n, "m": p.m, "cav_set": list(p.cav_set),
        "input": choice,
        "condition7": ctrb.predicted["coupling_condition"],
        "controllability": {"rank": ctrb.rank, "controllable": ctrb.controllable,
                            "dim_uncontrollable": ctrb.dim_uncontrollable, "stabilizable": ctrb.stabilizable,
                            "uncontrolled_vehicles": ctrb.uncontrolled_vehicles},
        "observability": {"rank": obs.rank, "observable": obs.observable},
        "pbh": ctrb.pbh,
        "predicted": ctrb.predicted,
    }
    text = json.dumps(report, indent=2, default=float)
    if args.out:
        out = _out_dir(args, cfg)
        write_atomic(out / "analysis.json", text)
    print(text)
    return report


def _controller_for(name: str, cfg: RunConfig, args):
    if name == "none":
        return cfg.platoon.all_hdv(), None
    if name == "deeplcc":
        ds = _load_dataset(args, cfg)
        blocks = partition(ds, cfg.controller.Tini, cfg.controller.N)
        return cfg.platoon, DeepLccController(cfg.platoon, blocks, cfg.controller, cfg.cav_spacing)
    dm = discretize(model_from_config(cfg.platoon, cfg.v_star, cfg.cav_spacing), cfg.platoon.dt_control)
    return cfg.platoon, MpcController(cfg.platoon, dm, MpcParams.from_controller(cfg.controller), cfg.cav_spacing)


def cmd_simulate(args) -> dict:
    cfg = _load(args)
    profile = cfg.profile(args.profile)
    seed = _seeds(args, cfg)[0]
    run_cfg, ctrl = _controller_for(args.controller, cfg, args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    lg = simulate_closed_loop(run_cfg, ctrl, profile, profile.duration, seed=seed, cav_spacing=cfg.cav_spacing)
    tag = f"{args.controller}_{args.profile or cfg.scenario['profile']}"
    write_atomic(out / f"trajectory_{tag}.csv", lg.to_csv())
    if ctrl is not None:
        lines = []
        for info in lg.step_info:
            rec = {"t": info["t"], "status": info.get("status")}
            for k in ("iterations", "objective", "norm_g", "norm_sigma_y"):
                if k in info:
                    rec[k] = info[k]
            lines.append(json.dumps(rec))
        write_atomic(out / f"solver_{tag}.jsonl", "\n".join(lines) + "\n")
    name = "hdv" if args.controller == "none" else args.controller
    key = (name, seed)
    write_atomic(out / f"velocity_{tag}.png",
                 figure_bytes(velocity_figure({key: lg}, cfg.platoon.cav_set), "png"))
    summary = summarize(name, seed, lg, profile, cfg.platoon, cfg.cav_spacing,
                        getattr(ctrl, "failures", 0), cfg.fuel)
    result = vars(summary) | {"runtime_s": time.perf_counter() - t0}
    write_atomic(out / f"summary_{tag}.json", json.dumps(result, indent=2, default=float))
    if not lg.ok:
        raise CliError(EXIT_RUNTIME, "collision" if lg.collision else "solver", summary.failure,
                       t=float(lg.times[-1]) if len(lg.times) else 0.0)
    return result


def cmd_compare(args) -> dict:
    cfg = _load(args)
    profile_name = args.profile or cfg.scenario["profile"]
    profile = cfg.profile(profile_name)
    seeds = _seeds(args, cfg)
    ds = _load_dataset(args, cfg)
    out = _out_dir(args, cfg)
    blocks = partition(ds, cfg.controller.Tini, cfg.controller.N)
    report, logs = run_comparison(cfg.platoon, blocks, cfg.controller, profile, seeds=seeds,
                                  cav_spacing=cfg.cav_spacing, model_v_star=cfg.v_star, keep_logs=True,
                                  fuel_model=cfg.fuel)
    if not args.phases:
        report.phases = []
        for r in report.runs:
            r.fuel = {"total": r.fuel["total"]}
    write_atomic(out / f"fuel_{profile_name}.json", report.to_json())
    write_atomic(out / f"fuel_{profile_name}.txt", report.table() + "\n")
    write_atomic(out / f"trajectories_{profile_name}.csv", tidy_rows(logs))
    first = {k: v for k, v in logs.items() if k[1] == seeds[0]}
    cav = cfg.platoon.cav_set
    pr = cfg.controller
    makers = {
        "velocity": lambda: velocity_figure(first, cav, f"{profile_name} profile"),
        "spacing": lambda: spacing_figure(first, cav, cfg.cav_spacing, (pr.s_tilde_min, pr.s_tilde_max)),
        "fuel": lambda: fuel_figure(report),
    }
    for stem, make in makers.items():
        for fmt in ("png", "svg"):
            write_atomic(out / f"{stem}_{profile_name}.{fmt}", figure_bytes(make(), fmt))
    print(report.table())
    failed = [r for r in report.runs if not r.ok]
    if failed and all(r.controller != "hdv" for r in failed):
        raise CliError(EXIT_RUNTIME, "run_failed", "; ".join(f"{r.controller} seed {r.seed}: {r.failure}"
                                                            for r in failed))
    return report.to_dict()


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (defaults to the bundled one)")
    common.add_argument("--seed", type=int, help="override the collection or scenario seed")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--verbose", "-v", action="store_true")

    ap = argparse.ArgumentParser(prog="deeplcc", description="DeeP-LCC for mixed traffic platoons")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", parents=[common], help="record an offline dataset")
    c.add_argument("--T", type=int, help="dataset length in control steps")
    c.set_defaults(func=cmd_collect)

    a = sub.add_parser("analyze", parents=[common], help="controllability/observability report")
    a.add_argument("--combined", action="store_true", help="treat the head velocity error as an input")
    a.add_argument("--coeffs", type=float, nargs=3, metavar=("A1", "A2", "A3"),
                   help="homogeneous linearisation coefficients instead of the configured platoon")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", parents=[common], help="closed-loop run of one controller")
    s.add_argument("--controller", choices=["none", "mpc", "deeplcc"], default="deeplcc")
    s.add_argument("--profile", choices=["eudc", "brake"])
    s.add_argument("--dataset", help="directory holding dataset.csv/json (default: --out)")
    s.set_defaults(func=cmd_simulate)

    k = sub.add_parser("compare", parents=[common], help="fuel comparison of all-HDV, MPC and DeeP-LCC")
    k.add_argument("--profile", choices=["eudc", "brake"])
    k.add_argument("--dataset", help="directory holding dataset.csv/json (default: --out)")
    k.add_argument("--phases", action="store_true", help="report fuel per profile phase")
    k.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        err = {"error": exc.kind, "message": str(exc), "exit_code": exc.code} | exc.extra
        print(json.dumps(err, default=float), file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
