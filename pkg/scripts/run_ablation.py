"""Benchmark ablation over several seeds: DS, DS+DP, DS+DP+JI.

    python3 scripts/run_ablation.py --seeds 10 --out results/ablation_seeds.json
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from dpl.data import split_dataset
from dpl.jsonio import dump_json
from dpl.learning import EmOptions, fit
from dpl.logic import load_program
from dpl.metrics import evaluate
from dpl.prediction import decide
from dpl.synth import SynthSpec, generate

ROOT = Path(__file__).resolve().parents[1]
SYSTEMS = (("DS", ["DS"]), ("DS+DP", ["DS", "DP"]), ("DS+DP+JI", ["DS", "DP", "JI"]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spec", default=ROOT / "configs" / "benchmark_spec.json")
    ap.add_argument("--program", default=ROOT / "configs" / "benchmark.dpl")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--train-fraction", type=float, default=0.8)
    ap.add_argument("--classifier", choices=("logreg", "mlp1"), default="logreg")
    ap.add_argument("--supervision-only", action="store_true",
                    help="refine weights without the classifier priors")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    spec = SynthSpec.load(args.spec)
    opts = EmOptions(predictor_evidence=not args.supervision_only)
    rows = []
    start = time.perf_counter()
    print(f"{'seed':>4} " + " ".join(f"{name:>9}" for name, _ in SYSTEMS))
    for seed in range(args.seeds):
        ds, schema = generate(replace(spec, seed=seed))
        train, test = split_dataset(ds, args.train_fraction, seed)
        program = load_program(args.program, schema)
        row = {"seed": seed}
        for name, tags in SYSTEMS:
            c, _, _ = fit(program.subset(tags), train, opts, seed=seed, kind=args.classifier)
            row[name] = evaluate(decide(c.predict_proba(test.X)[:, 1]), test.gold).f1
        rows.append(row)
        print(f"{seed:>4} " + " ".join(f"{row[name]:9.4f}" for name, _ in SYSTEMS))
    means = {name: float(np.mean([r[name] for r in rows])) for name, _ in SYSTEMS}
    print("mean " + " ".join(f"{means[name]:9.4f}" for name, _ in SYSTEMS))
    print(f"{time.perf_counter() - start:.1f}s")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(dump_json({"per_seed": rows, "mean_f1": means}))


if __name__ == "__main__":
    main()
