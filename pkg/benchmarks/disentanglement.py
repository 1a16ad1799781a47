"""Domain probes on the invariant and specific branches of trained REFeD models.

For each seed: generate the default benchmark, train REFeD on its target
split, then fit the held-out linear domain probe on each branch's features.

    python benchmarks/disentanglement.py [--seeds 5] [--epochs 50] [--out benchmarks/disentanglement.json]
"""
import argparse
import json
import time

from refed.config import RunConfig
from refed.experiment import preprocess_pair
from refed.preprocessing import polygon_split
from refed.probe import branch_domain_probes
from refed.refed import fit
from refed.synth import GeneratorConfig, generate

LEVELS = (0, 1, 2)


def run_seed(seed, epochs, generator=None):
    cfg = GeneratorConfig.from_dict({**(generator or {}), "seed": seed})
    source, target = preprocess_pair(*generate(cfg))
    train, val, _ = polygon_split(target, seed=seed).partition(target)
    model, _ = fit(source, train, val, RunConfig(mode="refed", epochs=epochs, seed=seed))
    row = {"seed": seed}
    for level in LEVELS:
        res = branch_domain_probes(model, source, target, level=level, seed=seed)
        row[f"level{level}"] = {b: r.test_accuracy for b, r in res.items()}
    return row


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--out", default="benchmarks/disentanglement.json")
    args = ap.parse_args()
    rows = []
    for seed in range(args.seeds):
        started = time.perf_counter()
        rows.append(run_seed(seed, args.epochs))
        print(json.dumps(rows[-1]), f"{time.perf_counter() - started:.0f}s", flush=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"epochs": args.epochs, "probe_level": 1, "seeds": rows}, fh, indent=1)


if __name__ == "__main__":
    main()
