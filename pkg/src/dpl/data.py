"""Instances, datasets and the JSONL dataset format.

The first line of a dataset file is a header::

    {"d": 2, "fields": {"kb_match": "bool", "group_id": "key", "coref": "pairs"}}

followed by one instance per line::

    {"id": "i0", "x": [0.1, -0.3], "fields": {"kb_match": true, "group_id": "g7"}, "gold": 1}

``key`` fields group instances (a missing or null key means no group).
``pairs`` fields hold a list of other instance ids to link with.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .logic import FIELD_TYPES


class DatasetError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(eq=False)
class Instance:
    id: str
    x: np.ndarray
    fields: dict = field(default_factory=dict)
    gold: Optional[int] = None


@dataclass
class Dataset:
    schema: dict
    d: int
    instances: list
    groups: dict = field(default_factory=dict)  # key field -> {key: [indices]}
    pairs: dict = field(default_factory=dict)  # pairs field -> [(i, j)] with i < j

    def __len__(self):
        return len(self.instances)

    @property
    def X(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, self.d))
        return np.stack([inst.x for inst in self.instances])

    @property
    def ids(self) -> list:
        return [inst.id for inst in self.instances]

    @property
    def gold(self) -> np.ndarray:
        g = [inst.gold for inst in self.instances]
        if any(v is None for v in g):
            raise DatasetError("gold label missing on some instances")
        return np.asarray(g, dtype=int)

    def flag(self, name: str) -> np.ndarray:
        """Boolean field as an array (absent means false)."""
        return np.array([bool(inst.fields.get(name, False)) for inst in self.instances], dtype=bool)


def _check_schema(schema: Mapping[str, str]) -> dict:
    for name, kind in schema.items():
        if kind not in FIELD_TYPES:
            raise DatasetError(f"field {name!r} has unknown type {kind!r}")
    return dict(schema)


def _check_value(name: str, kind: str, value, line):
    if value is None:
        return
    ok = {
        "bool": isinstance(value, bool),
        "real": isinstance(value, (int, float)) and not isinstance(value, bool),
        "key": isinstance(value, (str, int)) and not isinstance(value, bool),
        "pairs": isinstance(value, list) and all(isinstance(v, str) for v in value),
    }[kind]
    if not ok:
        raise DatasetError(f"field {name!r}: value {value!r} is not of type {kind}", line)


def build_dataset(schema: Mapping[str, str], d: int, instances: list) -> Dataset:
    """Index groups and pairs over ``instances`` and check consistency."""
    schema = _check_schema(schema)
    index = {}
    for i, inst in enumerate(instances):
        if inst.id in index:
            raise DatasetError(f"duplicate id {inst.id!r}", getattr(inst, "_line", None))
        index[inst.id] = i
        if inst.x.shape != (d,):
            raise DatasetError(
                f"instance {inst.id!r} has {inst.x.size} features, expected {d}", getattr(inst, "_line", None)
            )

    groups = {}
    pairs = {}
    for name, kind in schema.items():
        if kind == "key":
            g: dict = {}
            for i, inst in enumerate(instances):
                key = inst.fields.get(name)
                if key is not None:
                    g.setdefault(str(key), []).append(i)
            groups[name] = g
        elif kind == "pairs":
            seen = set()
            for i, inst in enumerate(instances):
                for other in inst.fields.get(name) or ():
                    if other not in index:
                        raise DatasetError(f"field {name!r} links unknown id {other!r}", getattr(inst, "_line", None))
                    j = index[other]
                    if i != j:
                        seen.add((min(i, j), max(i, j)))
            pairs[name] = sorted(seen)
    return Dataset(schema, d, list(instances), groups, pairs)


def parse_dataset(lines) -> Dataset:
    lines = iter(lines)
    try:
        header = json.loads(next(lines))
    except StopIteration:
        raise DatasetError("empty file, expected a header line", 1) from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed header: {e.msg}", 1) from None
    if not isinstance(header, dict) or not isinstance(header.get("d"), int) or header["d"] < 0:
        raise DatasetError('header must be {"d": int, "fields": {...}}', 1)
    d = header["d"]
    try:
        schema = _check_schema(header.get("fields", {}))
    except DatasetError as e:
        raise DatasetError(str(e), 1) from None

    instances = []
    for lineno, raw in enumerate(lines, start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise DatasetError(f"malformed line: {e.msg}", lineno) from None
        if not isinstance(obj, dict) or "id" not in obj or "x" not in obj:
            raise DatasetError('instance must be an object with "id" and "x"', lineno)
        x = obj["x"]
        if not isinstance(x, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
            raise DatasetError('"x" must be a list of numbers', lineno)
        if len(x) != d:
            raise DatasetError(f"dimension error: {len(x)} features, header declares d={d}", lineno)
        if not all(math.isfinite(v) for v in x):
            raise DatasetError("non-finite feature value", lineno)
        fields = obj.get("fields", {})
        if not isinstance(fields, dict):
            raise DatasetError('"fields" must be an object', lineno)
        for name, kind in schema.items():
            _check_value(name, kind, fields.get(name), lineno)
        gold = obj.get("gold")
        if gold is not None and gold not in (0, 1):
            raise DatasetError('"gold" must be 0 or 1', lineno)
        inst = Instance(str(obj["id"]), np.asarray(x, dtype=float), fields, None if gold is None else int(gold))
        inst._line = lineno
        instances.append(inst)
    return build_dataset(schema, d, instances)


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh)


def dump_dataset(ds: Dataset, path, with_gold: bool = True):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"d": ds.d, "fields": ds.schema}, sort_keys=True) + "\n")
        for inst in ds.instances:
            obj = {"id": inst.id, "x": [float(v) for v in inst.x], "fields": inst.fields}
            if with_gold and inst.gold is not None:
                obj["gold"] = int(inst.gold)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _units(ds: Dataset) -> list:
    """Connected components of instances under group and pair links."""
    parent = list(range(len(ds)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for g in ds.groups.values():
        for members in g.values():
            for j in members[1:]:
                union(members[0], j)
    for plist in ds.pairs.values():
        for i, j in plist:
            union(i, j)
    comps: dict = {}
    for i in range(len(ds)):
        comps.setdefault(find(i), []).append(i)
    return list(comps.values())


def subset(ds: Dataset, indices) -> Dataset:
    indices = sorted(indices)
    return build_dataset(ds.schema, ds.d, [ds.instances[i] for i in indices])


def split_dataset(ds: Dataset, fraction: float, seed: int):
    """Split into (first, second) with about ``fraction`` of instances in first.

    Instances linked through a group or pair always land on the same side.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    units = _units(ds)
    order = np.random.default_rng(seed).permutation(len(units))
    target = round(fraction * len(ds))
    first, second = [], []
    for u in order:
        (first if len(first) < target else second).extend(units[u])
    return subset(ds, first), subset(ds, second)
