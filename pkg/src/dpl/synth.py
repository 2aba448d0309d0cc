"""Synthetic weak-supervision benchmarks.

Features are Gaussian; the gold label comes from a hidden concept. Indirect
supervision is emitted as instance fields:

* ``kb_match``: knowledge-base hit, true on a ``kb_coverage`` fraction of
  positives and a ``kb_noise`` fraction of negatives; ``kb_miss`` is its
  complement
* one boolean field per labeling function
* ``group_id``: groups of co-occurring instances, each holding at least one
  gold positive
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Instance, build_dataset


class SynthSpecError(ValueError):
    pass


@dataclass
class LabelingFunction:
    name: str
    accuracy: float
    coverage: float
    polarity: str = "+"


@dataclass
class SynthSpec:
    n: int = 1000
    d: int = 20
    concept: str = "linear"  # linear | xor2
    margin: float = 0.1
    kb_coverage: float = 0.5
    kb_noise: float = 0.15
    lfs: list = field(default_factory=list)
    group_rate: float = 0.0
    mean_group_size: float = 3.0
    seed: int = 0

    def validate(self):
        if self.n < 0 or self.d < 1:
            raise SynthSpecError("n must be >= 0 and d >= 1")
        if self.concept not in ("linear", "xor2"):
            raise SynthSpecError(f"unknown concept {self.concept!r}")
        if self.concept == "xor2" and self.d < 2:
            raise SynthSpecError("xor2 needs d >= 2")
        if self.margin < 0:
            raise SynthSpecError("margin must be >= 0")
        for name in ("kb_coverage", "kb_noise", "group_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SynthSpecError(f"{name} must be in [0, 1]")
        if self.mean_group_size < 1:
            raise SynthSpecError("mean_group_size must be >= 1")
        names = set()
        for lf in self.lfs:
            if not 0.0 < lf.coverage <= 1.0 or not 0.0 <= lf.accuracy <= 1.0:
                raise SynthSpecError(f"labeling function {lf.name!r}: coverage in (0, 1], accuracy in [0, 1]")
            if lf.polarity not in ("+", "-"):
                raise SynthSpecError(f"labeling function {lf.name!r}: polarity must be '+' or '-'")
            if lf.name in names or lf.name in ("kb_match", "kb_miss", "group_id"):
                raise SynthSpecError(f"duplicate field name {lf.name!r}")
            names.add(lf.name)
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        concept = doc.pop("concept", "linear")
        if isinstance(concept, dict):
            concept = dict(concept)
            doc.setdefault("margin", concept.pop("margin", 0.1))
            concept = concept["kind"]
        rename = {"kbCoverage": "kb_coverage", "kbNoise": "kb_noise", "groupRate": "group_rate",
                  "meanGroupSize": "mean_group_size"}
        kwargs = {rename.get(k, k): v for k, v in doc.items()}
        try:
            kwargs["lfs"] = [LabelingFunction(**lf) for lf in kwargs.get("lfs", [])]
            return cls(concept=concept, **kwargs).validate()
        except TypeError as e:
            raise SynthSpecError(str(e)) from None

    @classmethod
    def load(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as e:
                raise SynthSpecError(f"malformed spec: {e}") from None


def _features(spec: SynthSpec, rng) -> tuple:
    direction = rng.normal(size=spec.d)
    direction /= np.linalg.norm(direction)
    X = rng.normal(size=(spec.n, spec.d))

    def margin_of(X):
        if spec.concept == "linear":
            return X @ direction
        return np.minimum(np.abs(X[:, 0]), np.abs(X[:, 1])) * np.sign(X[:, 0] * X[:, 1])

    # resample points inside the margin band
    for _ in range(1000):
        bad = np.abs(margin_of(X)) < spec.margin
        if not bad.any():
            break
        X[bad] = rng.normal(size=(int(bad.sum()), spec.d))
    else:
        raise SynthSpecError("margin too large to sample")
    m = margin_of(X)
    gold = (m > 0).astype(int) if spec.concept == "linear" else (m < 0).astype(int)
    return X, gold


def _groups(spec: SynthSpec, gold, rng) -> list:
    n_groups = int(round(spec.group_rate * spec.n / spec.mean_group_size))
    if n_groups == 0:
        return []
    positives = list(rng.permutation(np.flatnonzero(gold == 1)))
    if not positives:
        raise SynthSpecError("infeasible spec: groups requested but no gold positives")
    free = np.ones(spec.n, dtype=bool)
    pool = list(rng.permutation(spec.n))
    groups = []
    for _ in range(n_groups):
        while positives and not free[positives[-1]]:
            positives.pop()
        if not positives:
            break
        anchor = positives.pop()
        free[anchor] = False
        members = [int(anchor)]
        size = 1 + int(rng.poisson(spec.mean_group_size - 1))
        while len(members) < size and pool:
            j = pool.pop()
            if free[j]:
                free[j] = False
                members.append(int(j))
        groups.append(sorted(members))
    return groups


def generate(spec: SynthSpec):
    """Returns ``(dataset, schema)``; gold labels are set on every instance."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    X, gold = _features(spec, rng)
    pos = gold == 1

    u = rng.random(spec.n)
    kb = np.where(pos, u < spec.kb_coverage, u < spec.kb_noise)

    lf_fields = {}
    for lf in spec.lfs:
        covered = rng.random(spec.n) < lf.coverage
        correct = rng.random(spec.n) < lf.accuracy
        vote = np.where(correct, gold, 1 - gold)
        target = 1 if lf.polarity == "+" else 0
        lf_fields[lf.name] = covered & (vote == target)

    group_of = {}
    for g, members in enumerate(_groups(spec, gold, rng)):
        for i in members:
            group_of[i] = f"g{g}"

    schema = {"kb_match": "bool", "kb_miss": "bool", **{lf.name: "bool" for lf in spec.lfs}}
    if spec.group_rate > 0:
        schema["group_id"] = "key"
    instances = []
    for i in range(spec.n):
        fields = {"kb_match": bool(kb[i]), "kb_miss": not kb[i]}
        fields.update({name: bool(v[i]) for name, v in lf_fields.items()})
        if i in group_of:
            fields["group_id"] = group_of[i]
        instances.append(Instance(f"i{i}", X[i], fields, int(gold[i])))
    return build_dataset(schema, spec.d, instances), schema


def baseline_labels(ds: Dataset, rule_fields=("kb_match",)) -> np.ndarray:
    """Hard labels from raw supervision fields: 1 iff any of them is true."""
    for name in rule_fields:
        if name not in ds.schema:
            raise KeyError(f"field {name!r} missing from dataset schema")
    labels = np.zeros(len(ds), dtype=int)
    for name in rule_fields:
        labels |= ds.flag(name).astype(int)
    return labels
