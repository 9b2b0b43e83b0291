"""Command-line front end: ``python -m abi {run,eval,demo-curse,list-models}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import baselines, engine, models
from .engine import AbiConfig
from .mixture import FitConfig
from .msw import MswConfig
from .quantile_net import TrainConfig

logger = logging.getLogger("abi")

METHODS = ("abi", "wabc", "abc-ss", "rejection-abc")
_TAG_BASELINE, _TAG_DRAWS = 11, 12


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return 1


def _build(cls, block, where):
    if block is None:
        return cls()
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(block) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def resolve_config(raw: dict, seed_override=None, out_override=None) -> dict:
    """Validate a parsed config and fill every default explicitly."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object")
    allowed = {"model", "method", "seed", "output_dir", "abi", "schedule", "distance",
               "baseline", "x_star_path", "posterior_draws"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    name = raw.get("model")
    if name not in models.REGISTRY:
        raise ConfigError(f"model: unknown model {name!r}; registered: {', '.join(sorted(models.REGISTRY))}")
    method = raw.get("method", "abi")
    if method not in METHODS:
        raise ConfigError(f"method: must be one of {list(METHODS)}")
    seed = int(seed_override if seed_override is not None else raw.get("seed", 0))
    out = {
        "model": name,
        "method": method,
        "seed": seed,
        "output_dir": str(out_override if out_override is not None else raw.get("output_dir", "runs/" + name)),
        "x_star_path": raw.get("x_star_path"),
        "posterior_draws": int(raw.get("posterior_draws", 10000)),
    }
    if method == "abi":
        block = dict(raw.get("abi") or {})
        msw = _build(MswConfig, block.pop("msw", None), "abi.msw")
        net_block = dict(block.pop("net", None) or {})
        net_block.setdefault("seed", seed)
        net = _build(TrainConfig, net_block, "abi.net")
        dens_block = dict(block.pop("density", None) or {})
        dens_block.setdefault("seed", seed)
        if "component_range" in dens_block:
            dens_block["component_range"] = tuple(dens_block["component_range"])
        density = _build(FitConfig, dens_block, "abi.density")
        if "hidden" in block:
            block["hidden"] = tuple(block["hidden"])
        block["seed"] = seed
        cfg = _build(AbiConfig, {**block, "msw": msw, "net": net, "density": density}, "abi")
        out["abi"] = cfg.to_dict()
        schedule = raw.get("schedule")
        if schedule is not None:
            if not isinstance(schedule, list) or not schedule:
                raise ConfigError("schedule: expected a nonempty list of tolerances")
            if any(b > a for a, b in zip(schedule, schedule[1:])):
                raise ConfigError("schedule: tolerances must be nonincreasing")
            out["abi"]["iterations"] = len(schedule)
        out["schedule"] = schedule
        distance = raw.get("distance", "kernel")
        if distance not in ("kernel", "euclidean"):
            raise ConfigError("distance: must be 'kernel' or 'euclidean'")
        if distance == "euclidean" and schedule is None:
            raise ConfigError("distance: 'euclidean' requires an explicit schedule")
        out["distance"] = distance
    else:
        block = dict(raw.get("baseline") or {})
        if "baseline" not in raw:
            raise ConfigError(f"baseline: block required for method {method!r}")
        reg = dict(block.pop("regressor", None) or {})
        reg.setdefault("seed", seed)
        if "hidden" in reg:
            reg["hidden"] = tuple(reg["hidden"])
        regressor = _build(baselines.RegressorConfig, reg, "baseline.regressor")
        budget = int(block.pop("budget", 10000))
        keep = float(block.pop("keep_fraction", 0.01))
        if block:
            raise ConfigError(f"baseline: unknown keys {sorted(block)}")
        if budget < 2 or not 0.0 < keep <= 1.0:
            raise ConfigError("baseline: need budget >= 2 and keep_fraction in (0, 1]")
        rd = asdict(regressor)
        rd["hidden"] = list(rd["hidden"])
        out["baseline"] = {"budget": budget, "keep_fraction": keep, "regressor": rd}
    return out


def load_config(path, seed_override=None, out_override=None) -> dict:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    # a relative observation path is read from the config file's directory
    if isinstance(raw, dict) and isinstance(raw.get("x_star_path"), str):
        xp = Path(raw["x_star_path"])
        if not xp.is_absolute():
            raw["x_star_path"] = str((Path(path).parent / xp).resolve())
    try:
        return resolve_config(raw, seed_override, out_override)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0].split(".")[-1]
        raise ConfigError(f"{path}:{_line_of(text, key)}: {exc}") from exc


def _abi_config(block: dict) -> AbiConfig:
    d = dict(block)
    d["msw"] = MswConfig(**d["msw"])
    d["net"] = TrainConfig(**d["net"])
    dens = dict(d["density"])
    dens["component_range"] = tuple(dens["component_range"])
    d["density"] = FitConfig(**dens)
    d["hidden"] = tuple(d["hidden"])
    return AbiConfig(**d)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_samples(path, names, draws) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in np.atleast_2d(draws):
            w.writerow([_fmt(v) for v in row])


def read_samples(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path}: need a header and at least one row")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: ragged rows")
    return header, data


def _finite_or_none(obj):
    # strict JSON has no NaN; an untrained stage reports null
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_none(v) for v in obj]
    return obj


def _dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_finite_or_none(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def run_experiment(cfg: dict) -> dict:
    """Execute a resolved config; returns the report dictionary (also written to disk)."""
    model = models.get_model(cfg["model"])
    if cfg["x_star_path"]:
        x_star, _ = models.read_observation(cfg["x_star_path"])
    else:
        x_star = model.observation()
    if x_star.size != model.data_dim:
        raise ConfigError(f"x_star has {x_star.size} values, model expects {model.data_dim}")
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    report = {"model": cfg["model"], "method": cfg["method"], "seed": seed}
    started = time.perf_counter()
    if cfg["method"] == "abi":
        acfg = _abi_config(cfg["abi"])
        if cfg["schedule"] is not None:
            dist = engine.euclidean_distance if cfg["distance"] == "euclidean" else None
            res = engine.run_abi_fixed_schedule(model, x_star, cfg["schedule"], acfg, distance=dist)
        else:
            res = engine.run_abi(model, x_star, acfg)
        draws = res.sample(cfg["posterior_draws"], np.random.default_rng([seed, _TAG_DRAWS]))
        report["iterations"] = [
            {k: v for k, v in asdict(r).items() if k != "wall_clock"} for r in res.reports
        ]
        report["num_iterations"] = len(res.reports)
        report["mixture_components"] = res.posterior_model.n_components
    else:
        b = cfg["baseline"]
        rng = np.random.default_rng([seed, _TAG_BASELINE])
        if cfg["method"] == "wabc":
            out = baselines.wasserstein_abc(model, x_star, b["budget"], b["keep_fraction"], rng)
        elif cfg["method"] == "abc-ss":
            reg = dict(b["regressor"])
            reg["hidden"] = tuple(reg["hidden"])
            out = baselines.abc_ss(model, x_star, b["budget"], b["keep_fraction"], rng,
                                   baselines.RegressorConfig(**reg))
        else:
            out = baselines.rejection_abc(model, x_star, b["budget"], b["keep_fraction"], rng)
        draws = out.thetas
        report["epsilon"] = out.epsilon
        report["simulations"] = out.simulations
        report["retained_count"] = int(draws.shape[0])
    logger.info("finished %s/%s in %.1fs", cfg["model"], cfg["method"], time.perf_counter() - started)
    write_samples(out_dir / "posterior_samples.csv", model.param_names, draws)
    _dump(out_dir / "report.json", report)
    _dump(out_dir / "config_echo.json", cfg)
    return report


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.seed, args.out)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime abort
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    try:
        ha, a = read_samples(args.samples_a)
        hb, b = read_samples(args.samples_b)
        if a.shape[1] != b.shape[1]:
            raise ConfigError(f"column count mismatch: {a.shape[1]} vs {b.shape[1]}")
    except (ConfigError, OSError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    rep = baselines.evaluate(a, b, seed=args.seed if args.seed is not None else 0).to_dict()
    text = json.dumps(rep, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(text + "\n")
    return 0


def cmd_demo_curse(args) -> int:
    try:
        dims = [int(v) for v in args.dims.split(",") if v.strip()]
        if not dims:
            raise ValueError("dims must be nonempty")
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rows, slope = models.curse_of_dim_demo(dims, args.epsilon, args.trials,
                                            seed=args.seed if args.seed is not None else 0)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "curse.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "acceptance_rate"])
        for n, r in rows:
            w.writerow([n, _fmt(r)])
    print(f"log-acceptance slope: {slope:.6g}", file=sys.stderr)
    return 0


def cmd_list_models(args) -> int:
    for name in sorted(models.REGISTRY):
        b = models.get_model(name)
        print(f"{name}\ttheta_dim={b.theta_dim}\tdata_dim={b.data_dim}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abi", description="Adaptive Bayesian inference experiments")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="compare two posterior sample files")
    e.add_argument("samples_a")
    e.add_argument("samples_b")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("demo-curse", help="rejection acceptance versus data dimension")
    c.add_argument("--dims", default="1,2,4,8,16")
    c.add_argument("--epsilon", type=float, default=0.5)
    c.add_argument("--trials", type=int, default=100000)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_demo_curse)

    m = sub.add_parser("list-models", help="show registered benchmark models")
    m.set_defaults(func=cmd_list_models)
    return p


def main(argv=None) -> int:
    # allow --quiet after the subcommand as well
    argv = list(sys.argv[1:] if argv is None else argv)
    quiet = "--quiet" in argv
    argv = [a for a in argv if a != "--quiet"]
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    return args.func(args)
