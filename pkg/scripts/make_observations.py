"""Regenerate the shipped observed datasets x* under data/."""
import argparse
from pathlib import Path

from abi.models import OBSERVATION_SEED, REGISTRY, get_model, write_observation


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    p.add_argument("--seed", type=int, default=OBSERVATION_SEED)
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(REGISTRY):
        model = get_model(name)
        write_observation(out / f"x_star_{name}.csv", model.observation(args.seed), name, args.seed)
        print(f"wrote {out / f'x_star_{name}.csv'}")


if __name__ == "__main__":
    main()
