"""Run every shipped experiment config, then compare each baseline with ABI on the same model.

    python3 scripts/run_benchmarks.py [--only NAME ...] [--out runs] [--seed S]
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from abi import baselines
from abi.cli import load_config, read_samples, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--only", nargs="*", help="config stems to run (default: all)")
    p.add_argument("--out", default=str(ROOT / "runs"))
    p.add_argument("--seed", type=int)
    args = p.parse_args(argv)

    configs = sorted((ROOT / "configs").glob("*.json"))
    if args.only:
        configs = [c for c in configs if c.stem in args.only]
    outputs = {}
    for path in configs:
        cfg = load_config(path, args.seed, str(Path(args.out) / path.stem))
        print(f"running {path.stem}", file=sys.stderr)
        run_experiment(cfg)
        outputs[path.stem] = (cfg["model"], cfg["method"], Path(cfg["output_dir"]))

    abi_runs = {model: out for model, method, out in outputs.values() if method == "abi"}
    table = []
    for stem, (model, method, out) in outputs.items():
        if method == "abi" or model not in abi_runs:
            continue
        _, ours = read_samples(abi_runs[model] / "posterior_samples.csv")
        _, theirs = read_samples(out / "posterior_samples.csv")
        row = {"model": model, "baseline": method, **baselines.evaluate(theirs, ours).to_dict()}
        table.append(row)
        print(json.dumps(row))
    if table:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "baseline_vs_abi.json").write_text(json.dumps(table, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
