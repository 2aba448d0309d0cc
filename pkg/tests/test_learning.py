import itertools
import math

import numpy as np
import pytest

from dpl.data import Instance, build_dataset
from dpl.grounding import ground
from dpl.inference import MarginalTable, brute_force_marginals, exact_log_partition, loopy_bp
from dpl.learning import EmOptions, e_step, fit, m_step_weights, trace_to_list, weight_gradient
from dpl.logic import Rule, Weight, parse_rules, validate_program
from dpl.logic import Agree, AtLeastOne, Vote
from dpl.metrics import evaluate
from dpl.prediction import Classifier, TrainOptions, decide, train_distill
from dpl.synth import LabelingFunction, SynthSpec, baseline_labels, generate
from dpl.data import split_dataset
from tests.conftest import TREE_SCHEMA, make_dataset, random_tree_rows

SCHEMA = {"f": "bool", "g": "key"}


def program(text, schema=SCHEMA):
    return validate_program(parse_rules(text), schema)


def biased_classifier(p1):
    c = Classifier.init("logreg", 1)
    c.params[-1] = math.log(p1 / (1 - p1))
    return c


# -- E-step ---------------------------------------------------------------------


def test_e_step_without_rules_returns_classifier():
    rng = np.random.default_rng(0)
    insts = [Instance(f"i{k}", rng.normal(size=2), {}) for k in range(5)]
    ds = build_dataset(SCHEMA, 2, insts)
    c = Classifier.init("logreg", 2)
    c.params = np.array([0.7, -1.2, 0.3])
    q = e_step(program(""), ds, c)
    np.testing.assert_allclose(q.q, c.predict_proba(ds.X), atol=1e-12)


def test_e_step_uniform_classifier_single_vote():
    ds = make_dataset([{"f": True}], SCHEMA)
    q = e_step(program(f"{math.log(9)!r}: vote(+f)"), ds, Classifier.init("logreg", 1))
    assert q.q1[0] == pytest.approx(0.9, abs=1e-12)


def test_e_step_prior_and_vote_add_log_odds():
    ds = make_dataset([{"f": True}], SCHEMA)
    prog = program(f"{math.log(9)!r}: vote(+f)")
    c = biased_classifier(0.8)
    q = e_step(prog, ds, c)
    assert q.q1[0] == pytest.approx(36 / 37, abs=1e-12)
    oracle = brute_force_marginals(ground(prog, ds, c.log_proba(ds.X)))
    assert q.q1[0] == pytest.approx(oracle.q1[0], abs=1e-12)


# -- weight M-step ----------------------------------------------------------------


def learnable_tree(rng, n_vars=None):
    while True:
        rows = random_tree_rows(rng, n_max=n_vars or 10)
        if n_vars is None or len(rows) == n_vars:
            break
    w = lambda: Weight.learnable(float(rng.uniform(-2, 2)))  # noqa: E731
    rules = [
        Rule("va", w(), Vote("a", "+")),
        Rule("vb", w(), Vote("b", "-")),
        Rule("ag", w(), Agree("p")),
        Rule("g1", w(), AtLeastOne("g1")),
        Rule("g2", Weight.hard(), AtLeastOne("g2")),
    ]
    return validate_program(rules, TREE_SCHEMA), make_dataset(rows, TREE_SCHEMA)


def test_stationary_when_q_is_the_model(rng):
    for _ in range(10):
        prog, ds = learnable_tree(rng)
        g = ground(prog, ds)
        q = loopy_bp(g)
        assert np.max(np.abs(weight_gradient(g, q))) <= 1e-6
        weights, trace = m_step_weights(prog, ds, q, None, EmOptions())
        assert weights == {r.name: r.weight.value for r in prog.rules if r.weight.is_learnable}
        assert len(trace) == 1


def test_single_vote_recovers_logit():
    ds = make_dataset([{"f": True}], SCHEMA)
    prog = program("learn(0.0): vote(+f)")
    weights, trace = m_step_weights(prog, ds, MarginalTable.from_p1([0.9]), None, EmOptions(weight_steps=50))
    assert abs(weights["vote(+f)"] - math.log(9)) <= 0.05
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))


def _counts(g, x):
    R = len(g.rule_names)
    c = np.zeros(R)
    np.add.at(c, g.vote_rule, x[g.vote_var] == g.vote_target)
    np.add.at(c, g.agree_rule, x[g.agree_a] == x[g.agree_b])
    for f in range(len(g.alo_rule)):
        c[g.alo_rule[f]] += x[g.alo_members[g.alo_ptr[f]:g.alo_ptr[f + 1]]].any()
    return c


def exact_objective(g, q1, w):
    """J(w) with E_q by enumerating the product distribution q and log Z enumerated."""
    gw = g.with_weights(w)
    e_q = np.zeros(len(w))
    for bits in itertools.product((0, 1), repeat=g.n_vars):
        x = np.array(bits)
        pq = np.prod(np.where(x == 1, q1, 1 - q1))
        e_q += pq * _counts(g, x)
    soft = ~g.rule_hard
    return float(np.dot(gw.weights[soft], e_q[soft])) - exact_log_partition(gw)


def test_weight_gradient_finite_differences(rng):
    eps = 1e-5
    for _ in range(20):
        prog, ds = learnable_tree(rng, n_vars=6)
        g = ground(prog, ds)
        q1 = rng.uniform(0.05, 0.95, g.n_vars)
        ana = weight_gradient(g, MarginalTable.from_p1(q1))
        num = np.zeros_like(ana)
        for k in np.flatnonzero(~g.rule_hard):
            up, down = g.weights.copy(), g.weights.copy()
            up[k] += eps
            down[k] -= eps
            num[k] = (exact_objective(g, q1, up) - exact_objective(g, q1, down)) / (2 * eps)
        rel = np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-8)
        assert rel <= 1e-4


def test_surrogate_non_decreasing_on_trees(rng):
    for _ in range(20):
        prog, ds = learnable_tree(rng)
        q = MarginalTable.from_p1(rng.uniform(0.05, 0.95, len(ds)))
        _, trace = m_step_weights(prog, ds, q, None, EmOptions(weight_steps=15))
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))


def test_hard_only_program_is_weight_noop():
    rng = np.random.default_rng(0)
    insts = [Instance(f"i{k}", rng.normal(size=2), {"g": "a" if k < 3 else "b"}) for k in range(6)]
    ds = build_dataset(SCHEMA, 2, insts)
    prog = program("hard: at_least_one(g)")
    weights, trace = m_step_weights(prog, ds, MarginalTable.from_p1(np.full(6, 0.4)), None, EmOptions())
    assert weights == {} and len(trace) == 1
    c, _, tr = fit(prog, ds, EmOptions(em_iterations=2), seed=1)
    assert len(tr) == 2 and c.trained_epochs == 20
    assert all(rec.weights == {} and rec.weight_steps_accepted == 0 for rec in tr)


# -- fit -------------------------------------------------------------------------


def small_spec(seed, n=2000, **kw):
    lfs = [
        LabelingFunction("lf_pos_a", 0.75, 0.3, "+"),
        LabelingFunction("lf_pos_b", 0.85, 0.3, "+"),
        LabelingFunction("lf_neg_a", 0.8, 0.3, "-"),
        LabelingFunction("lf_neg_b", 0.8, 0.3, "-"),
    ]
    base = dict(n=n, d=10, kb_coverage=0.5, kb_noise=0.15, lfs=lfs, group_rate=0.3, mean_group_size=3, seed=seed)
    base.update(kw)
    return SynthSpec(**base)


BENCH_RULES = """
# tag: DS
learn(1.0): vote(+kb_match)
learn(1.0): vote(-kb_miss)
# tag: DP
learn(1.0): vote(+lf_pos_a)
learn(1.0): vote(+lf_pos_b)
learn(1.0): vote(-lf_neg_a)
learn(1.0): vote(-lf_neg_b)
# tag: JI
hard: at_least_one(group_id)
"""


def test_fit_is_deterministic():
    ds, schema = generate(small_spec(3, n=600))
    prog = program(BENCH_RULES, schema)
    runs = [fit(prog, ds, EmOptions(), seed=9) for _ in range(2)]
    assert trace_to_list(runs[0][2]) == trace_to_list(runs[1][2])
    assert np.array_equal(runs[0][0].params, runs[1][0].params)
    assert len(runs[0][2]) == 3
    # input program untouched
    assert all(r.weight.value == 1.0 for r in prog.rules if r.weight.is_learnable)


def test_empty_program_is_self_distillation_fixed_point():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(1000, 3))
    teacher = Classifier.init("logreg", 3)
    teacher.params = np.array([1.0, -0.5, 0.8, 0.1])
    ds = build_dataset({}, 3, [Instance(f"i{k}", X[k], {}) for k in range(len(X))])
    c, _, _ = fit(program("", {}), ds, EmOptions(), seed=0, classifier=teacher)
    assert np.max(np.abs(c.predict_proba(X)[:, 1] - teacher.predict_proba(X)[:, 1])) <= 0.02


def _f1(c, test, threshold=0.5):
    return evaluate(decide(c.predict_proba(test.X)[:, 1], threshold), test.gold).f1


def test_joint_inference_never_hurts_on_average():
    with_ji, without = [], []
    for seed in range(10):
        ds, schema = generate(small_spec(seed))
        train, test = split_dataset(ds, 0.8, seed)
        prog = program(BENCH_RULES, schema)
        for subset, out in ((["DS", "DP"], without), (["DS", "DP", "JI"], with_ji)):
            c, _, _ = fit(prog.subset(subset), train, EmOptions(), seed=seed)
            out.append(_f1(c, test))
    assert np.mean(with_ji) >= np.mean(without)


def test_em_beats_distilling_raw_ds_labels():
    em, raw = [], []
    for seed in range(5):
        ds, schema = generate(small_spec(seed, kb_noise=0.05))
        train, test = split_dataset(ds, 0.8, seed)
        ds_only = program(BENCH_RULES, schema).subset(["DS"])
        c, _, _ = fit(ds_only, train, EmOptions(), seed=seed)
        em.append(_f1(c, test))
        c0 = Classifier.init("logreg", train.d)
        c0, _ = train_distill(c0, train, baseline_labels(train).astype(float), TrainOptions(epochs=30, seed=seed))
        raw.append(_f1(c0, test))
    assert np.mean(em) > np.mean(raw)
