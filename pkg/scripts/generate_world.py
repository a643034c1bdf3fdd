"""Generate a synthetic PDNS world with the default generator settings.

    python scripts/generate_world.py data/world --days 45
"""
import argparse
import json
from pathlib import Path

from mantis.synth import WorldSpec, generate


def main():
    p = argparse.ArgumentParser()
    p.add_argument("out")
    p.add_argument("--days", type=int, default=WorldSpec.days)
    p.add_argument("--n-benign", type=int, default=WorldSpec.n_benign)
    p.add_argument("--seed", type=int, default=WorldSpec.rng_seed)
    a = p.parse_args()
    corpus = generate(WorldSpec(days=a.days, n_benign=a.n_benign, rng_seed=a.seed), Path(a.out))
    print(json.dumps({"out": str(corpus.root), "labels": len(corpus.read_labels())}))


if __name__ == "__main__":
    main()
