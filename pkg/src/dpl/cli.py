"""Command-line entry point: ``dpl {synth,train,ablate,infer,stats}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
All randomness derives from ``--seed`` (or the synth spec's seed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import DatasetError, dump_dataset, load_dataset, split_dataset
from .grounding import GroundingError, graph_stats, ground
from .inference import BpOptions, InferenceError
from .jsonio import dump_json
from .learning import EmOptions, fit, sub_seed, trace_to_list
from .logic import ProgramError, RuleSyntaxError, load_program, render_program
from .metrics import evaluate
from .prediction import TrainOptions, decide, load_classifier, save_classifier
from .synth import SynthSpec, SynthSpecError, generate

ABLATION_TAGS = ("DS", "DP", "JI")
SPLIT_SEED_OFFSET = 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    program_path: Path
    data_path: Path
    output_dir: Path
    seed: int
    test_path: Optional[Path] = None
    em: EmOptions = field(default_factory=EmOptions)
    classifier: str = "logreg"
    hidden: int = 16
    threshold: float = 0.5

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        em = EmOptions(
            em_iterations=args.em_iters,
            bp=BpOptions(max_iterations=args.bp_iters, tolerance=args.bp_tol, damping=args.damping),
            train=TrainOptions(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                               l2=args.l2, seed=args.seed),
            weight_steps=args.weight_steps,
            weight_learning_rate=args.weight_lr,
            line_search=not args.no_line_search,
        )
        return cls(Path(args.program), Path(args.data), Path(args.out), args.seed,
                   Path(args.test) if args.test else None, em, args.classifier, args.hidden, args.threshold)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_inputs(cfg: RunConfig):
    for path, what in ((cfg.program_path, "program"), (cfg.data_path, "data"), (cfg.test_path, "test data")):
        if path is not None and not path.is_file():
            raise UsageError(f"{what} not found: {path}")
    ds = load_dataset(cfg.data_path)
    program = load_program(cfg.program_path, ds.schema)
    test = load_dataset(cfg.test_path) if cfg.test_path else None
    if test is not None and test.d != ds.d:
        raise UsageError(f"test data has d={test.d}, training data has d={ds.d}")
    return program, ds, test


def _evaluate(c, test, threshold) -> dict:
    p1 = c.predict_proba(test.X)[:, 1]
    return evaluate(decide(p1, threshold), test.gold).to_dict()


def cmd_synth(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        raise UsageError(f"spec not found: {spec_path}")
    spec = SynthSpec.load(spec_path)
    ds, _ = generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    parts = [(out, ds)]
    if args.test_out:
        train, test = split_dataset(ds, 1.0 - args.test_fraction, sub_seed(spec.seed, SPLIT_SEED_OFFSET))
        parts = [(out, train), (Path(args.test_out), test)]
    for path, part in parts:
        dump_dataset(part, path)
        gold = "".join(json.dumps({"gold": inst.gold, "id": inst.id}) + "\n" for inst in part.instances)
        _write(path.with_name(path.stem + ".gold.jsonl"), gold)
        print(f"wrote {len(part)} instances to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.from_args(args)
    program, ds, test = _load_inputs(cfg)
    c, refined, trace = fit(program, ds, cfg.em, cfg.seed, kind=cfg.classifier, hidden=cfg.hidden)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_classifier(c, out / "model.json")
    _write(out / "trace.json", dump_json(trace_to_list(trace)))
    _write(out / "program.dpl", render_program(refined))
    _write(out / "weights.json", dump_json(refined.weight_values()))
    if test is not None:
        report = _evaluate(c, test, cfg.threshold)
        _write(out / "report.json", dump_json(report))
        print(dump_json(report), end="")
    print(f"trained {c.kind} for {len(trace)} EM iterations; outputs in {out}")
    return 0


def ablation_rows(program, ds, test, cfg: RunConfig) -> list:
    rows = []
    for k in range(1, len(ABLATION_TAGS) + 1):
        tags = ABLATION_TAGS[:k]
        c, refined, _ = fit(program.subset(tags), ds, cfg.em, cfg.seed, kind=cfg.classifier, hidden=cfg.hidden)
        row = {"system": "+".join(tags), "rules": len(program.subset(tags).rules)}
        row.update(_evaluate(c, test, cfg.threshold))
        row["weights"] = refined.weight_values()
        rows.append(row)
    return rows


def format_table(rows) -> str:
    lines = [f"{'System':<12} {'Acc.':>6} {'F1':>6} {'Prec.':>6} {'Rec.':>6}"]
    for r in rows:
        lines.append(f"{r['system']:<12} {r['accuracy']:6.3f} {r['f1']:6.3f} {r['precision']:6.3f} {r['recall']:6.3f}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    cfg = RunConfig.from_args(args)
    if cfg.test_path is None:
        raise UsageError("ablate needs --test with gold labels")
    program, ds, test = _load_inputs(cfg)
    if not any(r.tags for r in program.rules):
        raise UsageError("program has no '# tag:' annotations")
    rows = ablation_rows(program, ds, test, cfg)
    table = format_table(rows)
    _write(cfg.output_dir / "ablation.json", dump_json(rows))
    _write(cfg.output_dir / "ablation.txt", table)
    print(table, end="")
    return 0


def cmd_infer(args) -> int:
    for path, what in ((Path(args.model), "model"), (Path(args.data), "data")):
        if not path.is_file():
            raise UsageError(f"{what} not found: {path}")
    c = load_classifier(args.model)
    ds = load_dataset(args.data)
    if len(ds) and ds.d != c.d:
        raise UsageError(f"dimension mismatch: data has d={ds.d}, model expects d={c.d}")
    p1 = c.predict_proba(ds.X)[:, 1] if len(ds) else []
    lines = [
        dump_json({"id": inst.id, "label": int(decide(float(p), args.threshold)), "p1": float(p)}, indent=None)
        for inst, p in zip(ds.instances, p1)
    ]
    _write(Path(args.out), "".join(lines))
    print(f"wrote {len(lines)} predictions to {args.out}")
    return 0


def cmd_stats(args) -> int:
    ds = load_dataset(args.data)
    program = load_program(args.program, ds.schema)
    print(dump_json(graph_stats(ground(program, ds))), end="")
    return 0


def _add_run_flags(p):
    p.add_argument("--program", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--em-iters", type=int, default=3)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--bp-iters", type=int, default=50)
    p.add_argument("--bp-tol", type=float, default=1e-6)
    p.add_argument("--damping", type=float, default=0.3)
    p.add_argument("--weight-steps", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--no-line-search", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--classifier", choices=("logreg", "mlp1"), default="logreg")
    p.add_argument("--hidden", type=int, default=16)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpl", description="Probabilistic-logic weak supervision with variational EM.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a classifier with variational EM")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="cumulative DS / DS+DP / DS+DP+JI ablation")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="score a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("stats", help="print factor graph statistics as JSON")
    p.add_argument("--program", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DPL_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InferenceError, GroundingError) as e:
        print(f"dpl {args.command}: {e}", file=sys.stderr)
        return 1
    except (UsageError, SynthSpecError, RuleSyntaxError, ProgramError, DatasetError, ValueError, OSError) as e:
        print(f"dpl {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
