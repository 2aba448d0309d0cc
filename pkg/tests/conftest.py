from pathlib import Path

import numpy as np
import pytest

from dpl.data import Instance, build_dataset
from dpl.grounding import ground
from dpl.logic import Rule, Weight, validate_program
from dpl.logic import Agree, AtLeastOne, Vote

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

TREE_SCHEMA = {"a": "bool", "b": "bool", "p": "pairs", "g1": "key", "g2": "key"}


def make_dataset(rows, schema, d=1):
    """rows: list of field dicts; instance ids are i0, i1, ..."""
    insts = [Instance(f"i{k}", np.zeros(d), dict(f)) for k, f in enumerate(rows)]
    return build_dataset(schema, d, insts)


def random_tree_program(rng, weight_range=3.0):
    def w():
        return Weight.fixed(float(rng.uniform(-weight_range, weight_range)))

    rules = [
        Rule("va", w(), Vote("a", "+")),
        Rule("vb", w(), Vote("b", "-")),
        Rule("ag", w(), Agree("p")),
        Rule("g1", w(), AtLeastOne("g1")),
        Rule("g2", w(), AtLeastOne("g2")),
    ]
    return validate_program(rules, TREE_SCHEMA)


def random_tree_rows(rng, n_max=15):
    """Fields whose grounding is a tree: each new factor attaches fresh variables
    to exactly one variable already in the tree."""
    rows = [{"a": bool(rng.random() < 0.5), "b": bool(rng.random() < 0.5), "p": []}]
    n_groups = 0
    while len(rows) < n_max:
        v = int(rng.integers(len(rows)))
        kind = rng.choice(["agree", "g1", "g2"])
        if kind != "agree" and kind in rows[v]:
            kind = "agree"
        size = 1 if kind == "agree" else int(rng.integers(1, 4))
        size = min(size, n_max - len(rows))
        new = []
        for _ in range(size):
            new.append(len(rows))
            rows.append({"a": bool(rng.random() < 0.5), "b": bool(rng.random() < 0.5), "p": []})
        if kind == "agree":
            rows[new[0]]["p"].append(f"i{v}")
        else:
            for j in [v] + new:
                rows[j][kind] = f"k{n_groups}"
            n_groups += 1
        if rng.random() < 0.15:
            break
    return rows


def random_tree_graph(rng, n_max=15, weight_range=3.0, prior=False):
    rows = random_tree_rows(rng, n_max)
    ds = make_dataset(rows, TREE_SCHEMA)
    program = random_tree_program(rng, weight_range)
    logp = None
    if prior:
        p1 = rng.uniform(0.05, 0.95, len(rows))
        logp = np.log(np.column_stack([1 - p1, p1]))
    return ground(program, ds, logp)


def random_loopy_graph(rng, n=None, coupling=1.0):
    n = n or int(rng.integers(4, 13))
    rows = [{"a": bool(rng.random() < 0.5), "b": bool(rng.random() < 0.5), "p": []} for _ in range(n)]
    edges = set()
    for i in range(1, n):
        edges.add((int(rng.integers(i)), i))
    for _ in range(int(rng.integers(1, n))):
        i, j = sorted(rng.choice(n, 2, replace=False))
        edges.add((int(i), int(j)))
    for i, j in edges:
        rows[j]["p"].append(f"i{i}")
    ds = make_dataset(rows, TREE_SCHEMA)
    rules = [
        Rule("va", Weight.fixed(float(rng.uniform(-3, 3))), Vote("a", "+")),
        Rule("vb", Weight.fixed(float(rng.uniform(-3, 3))), Vote("b", "-")),
        Rule("ag", Weight.fixed(float(rng.uniform(-coupling, coupling))), Agree("p")),
    ]
    return ground(validate_program(rules, TREE_SCHEMA), ds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
