import numpy as np
import pytest

from dpl.grounding import GroundingError, graph_stats, ground
from dpl.logic import parse_rule, parse_rules, validate_program
from tests.conftest import make_dataset, random_tree_graph

SCHEMA = {"kb_match": "bool", "lf": "bool", "group_id": "key", "p": "pairs"}


def program(text):
    return validate_program(parse_rules(text), SCHEMA)


def test_single_vote():
    ds = make_dataset([{"kb_match": True}], SCHEMA)
    g = ground(program("2.0: vote(+kb_match)"), ds)
    assert g.n_vars == 1
    [f] = g.factors
    assert f.kind == "SingletonVote" and f.vars == (0,) and f.target == 1


def test_group_gives_one_at_least_one():
    ds = make_dataset([{"group_id": "g"}] * 3, SCHEMA)
    g = ground(program("hard: at_least_one(group_id)"), ds)
    assert [(f.kind, f.vars) for f in g.factors] == [("AtLeastOne", (0, 1, 2))]
    stats = graph_stats(g)
    assert stats["variables"] == 3
    assert stats["AtLeastOne"] == 1
    assert stats["max_arity"] == 3
    assert stats["is_tree"] is True


def test_votes_fire_only_on_true_fields():
    ds = make_dataset([{"kb_match": False}, {"kb_match": False}], SCHEMA)
    g = ground(program("1.0: vote(+kb_match)"), ds)
    assert g.factors == []


def test_singleton_group_becomes_positive_vote():
    ds = make_dataset([{"group_id": "a"}, {"group_id": "b"}, {"group_id": "b"}], SCHEMA)
    g = ground(program("1.5: at_least_one(group_id)"), ds)
    kinds = [(f.kind, f.vars, f.target) for f in g.factors]
    assert kinds == [("SingletonVote", (0,), 1), ("AtLeastOne", (1, 2), None)]


def test_empty_dataset_stats():
    g = ground(program("1.0: vote(+kb_match)"), make_dataset([], SCHEMA))
    stats = graph_stats(g)
    assert stats["variables"] == 0 and stats["factors"] == 0


def _chain_ds(cycle=False):
    rows = [{"p": []}, {"p": ["i0"]}, {"p": ["i1"]}]
    if cycle:
        rows[2]["p"].append("i0")
    return make_dataset(rows, SCHEMA)


def _has_cycle(edges, n):
    # independent check: a simple graph is a forest iff DFS never revisits
    adj = {i: [] for i in range(n)}
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))
    seen = set()
    for root in range(n):
        if root in seen:
            continue
        stack = [(root, -1)]
        while stack:
            v, via = stack.pop()
            if v in seen:
                return True
            seen.add(v)
            stack.extend((u, k) for u, k in adj[v] if k != via)
    return False


@pytest.mark.parametrize("cycle", [False, True])
def test_is_tree_on_agree_chain(cycle):
    g = ground(program("0.5: agree(p)"), _chain_ds(cycle))
    edges = list(zip(g.agree_a.tolist(), g.agree_b.tolist()))
    assert graph_stats(g)["is_tree"] is (not _has_cycle(edges, 3))
    assert graph_stats(g)["is_tree"] is (not cycle)


def test_at_least_one_plus_agree_inside_group_is_loopy():
    rows = [{"group_id": "g", "p": []}, {"group_id": "g", "p": ["i0"]}]
    g = ground(program("1.0: at_least_one(group_id)\n1.0: agree(p)"), make_dataset(rows, SCHEMA))
    assert not g.is_tree


def test_vote_count_invariant(rng):
    rows = [{"kb_match": bool(rng.random() < 0.3), "lf": bool(rng.random() < 0.6)} for _ in range(200)]
    ds = make_dataset(rows, SCHEMA)
    g = ground(program("1.0: vote(+kb_match)\n-2.0: vote(-lf)\nlearn(0.1): vote(+lf)"), ds)
    expected = 2 * sum(r["lf"] for r in rows) + sum(r["kb_match"] for r in rows)
    assert graph_stats(g)["SingletonVote"] == expected


def test_grounding_is_deterministic(rng):
    g1 = random_tree_graph(np.random.default_rng(3))
    g2 = random_tree_graph(np.random.default_rng(3))
    assert g1.factors == g2.factors


def test_predictor_prior_only_changes_prior_factors():
    rows = [{"kb_match": True, "group_id": "g"}, {"group_id": "g"}, {}]
    ds = make_dataset(rows, SCHEMA)
    prog = program("1.0: vote(+kb_match)\nhard: at_least_one(group_id)")
    logp = np.log(np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]]))
    bare = ground(prog, ds).factors
    with_prior = ground(prog, ds, logp).factors
    assert [f for f in with_prior if f.kind != "PredictorPrior"] == bare
    priors = [f for f in with_prior if f.kind == "PredictorPrior"]
    assert len(priors) == 3 and priors[0].logp == tuple(logp[0])


def test_prior_errors():
    ds = make_dataset([{}, {}], SCHEMA)
    prog = program("1.0: vote(+kb_match)")
    with pytest.raises(GroundingError, match="length"):
        ground(prog, ds, np.log(np.full((3, 2), 0.5)))
    with pytest.raises(GroundingError, match="normalized"):
        ground(prog, ds, np.log(np.full((2, 2), 0.6)))


def test_weights_are_tied_per_rule():
    ds = make_dataset([{"kb_match": True}] * 4, SCHEMA)
    g = ground(validate_program([parse_rule("learn(0.3): vote(+kb_match)")], SCHEMA), ds)
    assert len(g.weights) == 1
    assert np.all(g.vote_rule == 0)
    g2 = g.with_weights({"vote(+kb_match)": 50.0})
    assert g2.weights[0] == 20.0  # clamped
    assert g.weights[0] == 0.3
