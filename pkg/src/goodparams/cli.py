"""Command-line entry point: ``goodparams {simulate,scan,estimate,bounds,covid}``.

Every command reads one JSON config (a path, or the name of a bundled config)
and lets flags override its fields.  Primary outputs go to ``--out DIR`` (or
stdout), logs go to stderr, and the effective config is written next to the
outputs as ``config.json``.

Exit codes: 0 success (empty results included), 2 usage or config error,
3 data error, 4 runtime guard.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import bounds, covidpipe
from . import candidates as cand
from .dynsys import StateError, Trajectory, get_model, simulate
from .estimator import DEFAULT_SCAN_LIMIT, ScanLimitError, Target, exhaustive_scan, format_number, rejection_estimate
from .fitness import FitnessError, FitnessSpec
from .presets import SIR_GRIDS

log = logging.getLogger("goodparams")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GUARD = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


# -- config handling ------------------------------------------------------------


def bundled_configs() -> list[str]:
    root = resources.files("goodparams") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("goodparams") / "configs" / name))


def load_config(ref: str | None) -> tuple[dict, Path | None]:
    if ref is None:
        return {}, None
    path = Path(ref)
    if not path.exists():
        candidate = bundled_path(ref if ref.endswith(".json") else ref + ".json")
        if not candidate.exists():
            raise ConfigError(f"config {ref!r} not found (bundled: {', '.join(bundled_configs())})")
        path = candidate
    try:
        return json.loads(path.read_text(encoding="utf-8")), path
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def num(x) -> float:
    """Number from a JSON value; strings may be fractions such as ``"1/21"``."""
    if isinstance(x, bool):
        raise ConfigError(f"expected a number, got {x!r}")
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, str):
        try:
            return float(Fraction(x.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse number {x!r}") from exc
    raise ConfigError(f"expected a number, got {x!r}")


def parse_vector(text: str) -> list[float]:
    return [num(v) for v in text.split(",") if v.strip()]


def _section(cfg: dict, key: str) -> dict:
    sec = cfg.get(key)
    if not isinstance(sec, dict):
        raise ConfigError(f"config needs a {key!r} object")
    return sec


def _model(cfg: dict):
    name = cfg.get("model", "sir")
    try:
        return get_model(name, num(cfg.get("population_N", 1e6)) if name != "sir" else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _component_ids(model, names) -> tuple[int, ...]:
    comps = list(model.compartments)
    out = []
    for n in names:
        if isinstance(n, int):
            out.append(n)
        elif n in comps:
            out.append(comps.index(n))
        else:
            raise ConfigError(f"unknown compartment {n!r}; model has {comps}")
    return tuple(out)


def build_grid(spec: dict) -> cand.CandidateGrid:
    if "preset" in spec:
        if spec["preset"] not in SIR_GRIDS:
            raise ConfigError(f"unknown grid preset {spec['preset']!r}")
        from .presets import sir_grid

        return sir_grid(spec["preset"], num(spec.get("step", 0.001)))
    if "ranges" in spec:
        dims = []
        for name, r in spec["ranges"].items():
            dims.append((name, cand.build_range_grid(num(r["lo"]), num(r["hi"]), num(r["step"]),
                                                     r.get("convention", cand.HALF_OPEN))))
        return cand.build_explicit_grid(dims)
    if "values" in spec:
        return cand.build_explicit_grid([(k, [num(v) for v in vs]) for k, vs in spec["values"].items()])
    if spec.get("table") == "us":
        return covidpipe.grid_from_table(covidpipe.US_GRID_VALUES)
    raise ConfigError("grid needs one of 'preset', 'ranges', 'values' or 'table'")


def build_q(spec: dict | None, grid: cand.CandidateGrid) -> cand.DiscreteDist:
    spec = spec or {"kind": "uniform"}
    if spec.get("kind", "uniform") == "uniform":
        return cand.UNIFORM
    if spec["kind"] == "explicit":
        w = np.asarray([num(v) for v in spec["weights"]])
        q = cand.DiscreteDist("explicit", w / w.sum() if spec.get("normalize") else w)
        q.check(grid)
        return q
    raise ConfigError(f"unknown q kind {spec['kind']!r}")


def build_fitness(spec: dict, model) -> FitnessSpec:
    comps = spec.get("components", list(model.compartments))
    tol = spec.get("r", spec.get("delta_tolerance"))
    fs = FitnessSpec(
        spec["kind"],
        tuple(int(w) for w in spec["window"]),
        _component_ids(model, comps),
        r=None if "r" not in spec else num(spec["r"]),
        delta_tolerance=None if "delta_tolerance" not in spec else num(spec["delta_tolerance"]),
        reference=spec.get("reference", "observed"),
    )
    if tol is None:
        raise ConfigError("fitness needs 'r' or 'delta_tolerance'")
    fs.check_components(len(model.compartments))
    return fs


def _param_row(model, params) -> np.ndarray:
    if isinstance(params, dict):
        missing = [n for n in model.param_names if n not in params]
        if missing:
            raise ConfigError(f"missing parameter(s) {missing} for model {model.name}")
        return np.array([num(params[n]) for n in model.param_names])
    row = np.array([num(v) for v in params])
    if row.size != len(model.param_names):
        raise ConfigError(f"model {model.name} takes {len(model.param_names)} parameters "
                          f"{model.param_names}, got {row.size}")
    return row


def build_target(cfg: dict, model) -> Target:
    obs = _section(cfg, "observed")
    fitness = build_fitness(_section(cfg, "fitness"), model)
    start = int(obs.get("start_time", 1))
    x0 = np.array([num(v) for v in obs["initial_state"]])
    if "params" in obs:
        last = max(fitness.window[1], start)
        traj = simulate(model, _param_row(model, obs["params"]), x0, last - start, start_time=start)
    elif "data" in obs:
        data = np.asarray(obs["data"], dtype=float)
        traj = Trajectory(data, tuple(model.compartments), start)
    else:
        raise ConfigError("observed needs 'params' or 'data'")
    peak = obs.get("peak_component", cfg.get("peak_component"))
    return Target(model, traj, fitness, x0, start_time=start,
                  summary_end=cfg.get("summary_end"),
                  peak_component=None if peak is None else _component_ids(model, [peak])[0])


# -- output helpers ----------------------------------------------------------------


def _out_dir(args, cfg: dict) -> Path | None:
    out = args.out or cfg.get("out")
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(out: Path | None, cfg: dict) -> None:
    if out is not None:
        (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_json(out: Path | None, name: str, doc) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        (out / name).write_text(text, encoding="utf-8")
        log.info("wrote %s", out / name)


def _write_csv(path_or_stream, header, rows) -> None:
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(v) for v in row])

    if hasattr(path_or_stream, "write"):
        emit(path_or_stream)
    else:
        with open(path_or_stream, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def _apply_common(args, cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    sampling = cfg.setdefault("sampling", {})
    if args.seed is not None:
        sampling["seed"] = args.seed
    if getattr(args, "n", None) is not None:
        sampling["n"] = args.n
    if args.workers is not None:
        cfg["workers"] = args.workers
    if getattr(args, "r", None) is not None:
        cfg.setdefault("fitness", {})["r"] = args.r
    if args.out is not None:
        cfg["out"] = args.out
    return cfg


# -- commands ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg, _ = load_config(args.config)
    cfg = _apply_common(args, cfg)
    if args.model:
        cfg["model"] = args.model
    model = _model(cfg)
    sim = cfg.setdefault("simulate", {})
    if args.params:
        sim["params"] = parse_vector(args.params)
    if args.initial_state:
        sim["initial_state"] = parse_vector(args.initial_state)
    if args.horizon is not None:
        sim["horizon"] = args.horizon
    if "params" not in sim:
        raise UsageError("simulate needs --params or simulate.params in the config")
    if "initial_state" not in sim:
        sim["initial_state"] = [0.95, 0.05, 0.0] if model.name == "sir" else None
        if sim["initial_state"] is None:
            raise UsageError("simulate needs --initial-state for this model")
    horizon = int(sim.get("horizon", 40))
    if horizon < 0:
        raise UsageError("horizon must be non-negative")
    params = _param_row(model, sim["params"])
    start = int(sim.get("start_time", 1))
    traj = simulate(model, params, np.array([num(v) for v in sim["initial_state"]]), horizon, start)
    header = ["t", *model.compartments]
    rows = [[t, *state] for t, state in zip(traj.days, traj.states)]
    out = _out_dir(args, cfg)
    if out is None:
        _write_csv(sys.stdout, header, rows)
    else:
        _write_csv(out / "trajectory.csv", header, rows)
        _echo_config(out, cfg)
    return EXIT_OK


def _grid_target(cfg: dict):
    model = _model(cfg)
    grid = build_grid(_section(cfg, "grid"))
    if grid.ndim != len(model.param_names):
        raise ConfigError(f"grid has {grid.ndim} dimensions, model {model.name} takes {len(model.param_names)}")
    return model, grid, build_q(cfg.get("q"), grid), build_target(cfg, model)


def cmd_scan(args) -> int:
    cfg, _ = load_config(args.config)
    cfg = _apply_common(args, cfg)
    _, grid, q, target = _grid_target(cfg)
    limit = int(num(cfg.get("scan_limit", DEFAULT_SCAN_LIMIT)))
    log.info("scanning %d grid points", grid.cardinality)
    res = exhaustive_scan(grid, target, q, limit, int(cfg.get("workers", 1)))
    log.info("p=%d G=%.10g", res.p, res.G)
    out = _out_dir(args, cfg)
    doc = res.to_dict(grid)
    _write_json(out, "scan.json", doc)
    if out is not None:
        rows = [[i, *p.values()] for i, p in zip(doc["good_indices"], doc["good_params"])]
        _write_csv(out / "good_params.csv", ["index", *grid.names], rows)
        _echo_config(out, cfg)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg, _ = load_config(args.config)
    cfg = _apply_common(args, cfg)
    _, grid, q, target = _grid_target(cfg)
    sampling = cfg["sampling"]
    if "n" not in sampling:
        raise ConfigError("estimate needs sampling.n")
    n, seed = int(num(sampling["n"])), int(sampling.get("seed", 0))
    good = rejection_estimate(grid, target, n, seed, q, int(cfg.get("workers", 1)))
    log.info("%d draws, %d distinct good parameters", n, good.n_distinct_good)
    out = _out_dir(args, cfg)
    if out is None:
        sys.stdout.write(good.to_json() + "\n")
    else:
        (out / "goodset.json").write_text(good.to_json() + "\n", encoding="utf-8")
        good.write_csv(out / "goodset.csv")
        _echo_config(out, cfg)
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg, _ = load_config(args.config)
    cfg = copy.deepcopy(cfg)
    b = cfg.setdefault("bounds", {})
    for key in ("c", "delta", "G", "p", "epsilon", "h_card", "n", "c_min", "c_max", "c_step", "rounding"):
        val = getattr(args, key)
        if val is not None:
            b[key] = val
    if args.curve:
        b["curve"] = True
    if args.out is not None:
        cfg["out"] = args.out
    rounding = b.get("rounding", bounds.DEFAULT_ROUNDING)
    out = _out_dir(args, cfg)
    try:
        if b.get("curve"):
            need = [k for k in ("delta", "G", "p") if k not in b]
            if need:
                raise UsageError(f"--curve needs {need}")
            c_min, c_max, c_step = (num(b.get(k, d)) for k, d in (("c_min", 0.7), ("c_max", 0.99), ("c_step", 0.01)))
            cs = np.round(np.arange(c_min, c_max + c_step / 2, c_step), 10)
            rows = bounds.sample_size_curve(cs, num(b["delta"]), num(b["G"]), int(num(b["p"])), rounding)
            header = ["c", "m_general", "m_improved"]
            if out is None:
                _write_csv(sys.stdout, header, rows)
            else:
                _write_csv(out / "curve.csv", header, rows)
                _echo_config(out, cfg)
            return EXIT_OK
        doc = {}
        if all(k in b for k in ("c", "delta", "G", "p")):
            c, delta, G, p = num(b["c"]), num(b["delta"]), num(b["G"]), int(num(b["p"]))
            doc["eq9"] = bounds.eq9_sample_size(c, delta, G, p)
            doc["eq10"] = bounds.eq10_sample_size(c, delta, G, p, rounding)
            doc["min_meaningful_c"] = bounds.min_meaningful_c(delta, p)
            doc["rounding"] = rounding
            if "n" in b:
                doc["prop2"] = bounds.prop2_probability_bound(c, G, p, int(num(b["n"])), rounding)
        if all(k in b for k in ("epsilon", "h_card")):
            eps, h = num(b["epsilon"]), int(num(b["h_card"]))
            if "delta" in b:
                doc["corollary"] = bounds.corollary_sample_size(eps, num(b["delta"]), h)
            if "n" in b:
                doc["theorem1"] = bounds.theorem1_bound(int(num(b["n"])), eps, h)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not doc:
        raise UsageError("bounds needs (--c --delta --G --p), (--epsilon --h-card with --delta or --n) or --curve")
    for key in ("eq9", "eq10", "corollary"):
        if key in doc:
            doc[key + "_ceil"] = math.ceil(doc[key])
    _write_json(out, "bounds.json", doc)
    _echo_config(out, cfg)
    return EXIT_OK


def cmd_covid(args) -> int:
    cfg, cfg_path = load_config(args.config)
    cfg = _apply_common(args, cfg)
    pipe = cfg.setdefault("pipeline", {})
    if args.data is not None:
        cfg["data"] = args.data
    population_N = num(pipe.get("population_N", 1e6))
    smooth = bool(pipe.get("smooth", True))
    out = _out_dir(args, cfg)
    if "synthetic" in cfg:
        syn = cfg["synthetic"]
        obs = covidpipe.synthetic_series({k: num(v) for k, v in syn["params"].items()}, int(syn["n_days"]),
                                         [int(d) for d in syn["restart_days"]], population_N,
                                         p_D0=num(syn.get("p_D0", 0.03)), p_D_mode=pipe.get("p_D_mode", "weekly"))
        smooth = False
        if out is not None:
            covidpipe.write_series(obs, out / "synthetic_data.csv")
    elif "data" in cfg:
        data = Path(cfg["data"])
        if not data.is_absolute() and not data.exists() and cfg_path is not None:
            data = cfg_path.parent / data
        obs = covidpipe.load_series(data, smooth=smooth)
    else:
        raise ConfigError("covid needs 'data' (or --data) or a 'synthetic' section")
    grid = build_grid(cfg.get("grid", {"table": "us"}))
    if grid.names != covidpipe.GRID_PARAMS:
        raise ConfigError(f"covid grid dimensions must be {covidpipe.GRID_PARAMS}")
    q = build_q(cfg.get("q"), grid)
    sampling = cfg["sampling"]
    start = pipe.get("start", obs.dates[covidpipe.FIT_DAYS - 1 + (covidpipe.SMOOTH_HALF_WIDTH if smooth else 0)].isoformat())
    end = pipe.get("end", start)
    results = covidpipe.weekly_sequence(
        grid, q, obs, start, end, int(pipe.get("stride", 7)),
        n=int(num(sampling.get("n", 500_000))), seed=int(sampling.get("seed", 0)),
        population_N=population_N, horizon=int(pipe.get("horizon", 730)),
        n_pre=int(num(pipe.get("n_pre", 100_000))), inflation=num(pipe.get("inflation", 1.1)),
        p_D_mode=pipe.get("p_D_mode", "weekly"), workers=int(cfg.get("workers", 1)),
    )
    doc = {"population_N": population_N, "smooth": smooth, "results": [r.to_dict() for r in results]}
    if out is None:
        _write_json(None, "", doc)
    else:
        _write_json(out, "results.json", doc)
        _write_csv(out / "peaks.csv", ["t0", "p2.5", "median", "p97.5"], covidpipe.peaks_table(results))
        _write_csv(out / "params_summary.csv", ["t0", "param", "count", "min", "q1", "median", "q3", "max"],
                   covidpipe.params_summary(results))
        for r in results:
            if r.good_set is not None:
                r.good_set.write_csv(out / f"goodset_{r.date.isoformat()}.csv")
        _echo_config(out, cfg)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="goodparams", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config path or bundled config name")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker threads; never changes results")
        p.add_argument("--out", help="output directory (default: stdout)")
        return p

    p = common(sub.add_parser("simulate", help="simulate one parameter vector"))
    p.add_argument("--model", choices=("sir", "seir-covid"))
    p.add_argument("--params", help="comma-separated parameters, fractions allowed (0.25,1/21)")
    p.add_argument("--initial-state", help="comma-separated initial state")
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("scan", help="exhaustive scan of the candidate grid"))
    p.add_argument("--r", type=float, help="override the fitness tolerance r")
    p.set_defaults(func=cmd_scan)

    p = common(sub.add_parser("estimate", help="rejection estimate of the good-parameter set"))
    p.add_argument("--n", type=int, help="sample size")
    p.add_argument("--r", type=float, help="override the fitness tolerance r")
    p.set_defaults(func=cmd_estimate)

    p = common(sub.add_parser("bounds", help="sample-size and probability bounds"))
    p.add_argument("--c", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--G", type=float)
    p.add_argument("--p", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--h-card", dest="h_card", type=int)
    p.add_argument("--rounding", choices=bounds.ROUNDINGS)
    p.add_argument("--curve", action="store_true", help="emit the (c, m) curve as CSV")
    p.add_argument("--c-min", dest="c_min", type=float)
    p.add_argument("--c-max", dest="c_max", type=float)
    p.add_argument("--c-step", dest="c_step", type=float)
    p.set_defaults(func=cmd_bounds)

    p = common(sub.add_parser("covid", help="weekly SEIR-COVID fits"))
    p.add_argument("--data", help="CSV with date,confirmed,deaths,recovered")
    p.add_argument("--n", type=int, help="sample size per week")
    p.set_defaults(func=cmd_covid, r=None)
    return parser


def _setup_logging(verbose: bool) -> None:
    pkg = logging.getLogger("goodparams")
    for h in list(pkg.handlers):
        pkg.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    pkg.addHandler(handler)
    pkg.setLevel(logging.DEBUG if verbose else logging.INFO)
    pkg.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    _setup_logging(args.verbose)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        log.error("--seed must be an unsigned 64-bit integer")
        return EXIT_USAGE
    if args.workers is not None and args.workers < 1:
        log.error("--workers must be at least 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (covidpipe.DataError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (ScanLimitError, covidpipe.CalibrationError) as exc:
        log.error("%s", exc)
        return EXIT_GUARD
    except (UsageError, ConfigError, FitnessError, StateError, KeyError, ValueError) as exc:
        log.error("usage: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
