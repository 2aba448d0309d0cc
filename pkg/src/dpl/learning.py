"""Variational EM over latent labels.

Each iteration runs

1. E-step: ground the program with the classifier's log-probabilities as
   per-instance priors and take BP marginals as the posterior ``q``;
2. distillation: fit the classifier to ``q`` by cross-entropy;
3. weight refinement: ascend ``J(w) = sum_f w_f E_q[f] - log Z(w)`` for the
   learnable rule weights, with the classifier's priors as fixed evidence.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .grounding import WEIGHT_CLAMP, FactorGraph, ground
from .inference import (
    BpOptions,
    MarginalTable,
    bethe_objective,
    factor_satisfaction,
    factorized_satisfaction,
    loopy_bp,
)
from .logic import Program
from .prediction import Classifier, TrainOptions, train_distill

log = logging.getLogger(__name__)

MAX_HALVINGS = 10
MAX_WEIGHT_STEP = 2.0
MIN_CURVATURE = 1e-3


@dataclass
class EmOptions:
    em_iterations: int = 3
    bp: BpOptions = field(default_factory=BpOptions)
    train: TrainOptions = field(default_factory=TrainOptions)
    weight_steps: int = 10
    weight_learning_rate: float = 0.1
    line_search: bool = True
    # hold the classifier's priors as fixed evidence while refining weights;
    # False fits weights on the supervision factors alone
    predictor_evidence: bool = True

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be >= 1")
        if self.weight_steps < 0:
            raise ValueError("weight_steps must be >= 0")


@dataclass
class IterationRecord:
    iteration: int
    q_mean: float
    q_entropy: float
    distill_loss: float
    weights: dict
    surrogate_objective: float
    bp_converged: bool
    bp_iterations: int
    weight_steps_accepted: int


def sub_seed(seed: int, offset: int) -> int:
    """Independent child seed for one consumer of the run seed."""
    return int(np.random.SeedSequence([seed, offset]).generate_state(1)[0])


# -- expectations -------------------------------------------------------------


def _rule_sums(g: FactorGraph, sat: dict) -> np.ndarray:
    R = len(g.rule_names)
    return (
        np.bincount(g.vote_rule, sat["vote"], minlength=R)
        + np.bincount(g.alo_rule, sat["alo"], minlength=R)
        + np.bincount(g.agree_rule, sat["agree"], minlength=R)
    )


def posterior_counts(g: FactorGraph, q: MarginalTable) -> np.ndarray:
    """E_q[number of satisfied groundings] per rule.

    Uses q's own factor beliefs when q came from BP on a graph with the same
    factors, otherwise treats q as a product of its marginals.
    """
    if q.has_state and _same_structure(q.graph, g):
        return _rule_sums(g, factor_satisfaction(q))
    return _rule_sums(g, factorized_satisfaction(g, q.q))


def _same_structure(a: FactorGraph, b: FactorGraph) -> bool:
    if a is b:
        return True
    pairs = [
        (a.vote_var, b.vote_var), (a.vote_rule, b.vote_rule), (a.vote_target, b.vote_target),
        (a.alo_members, b.alo_members), (a.alo_ptr, b.alo_ptr), (a.alo_rule, b.alo_rule),
        (a.agree_a, b.agree_a), (a.agree_b, b.agree_b), (a.agree_rule, b.agree_rule),
    ]
    return a.n_vars == b.n_vars and all(np.array_equal(x, y) for x, y in pairs)


def model_counts(m: MarginalTable) -> tuple:
    """Per-rule expected counts and summed per-grounding variances under BP beliefs."""
    g = m.graph
    sat = factor_satisfaction(m)
    var = {k: v * (1 - v) for k, v in sat.items()}
    return _rule_sums(g, sat), _rule_sums(g, var)


def surrogate_objective(g: FactorGraph, q_counts: np.ndarray, m: MarginalTable) -> float:
    """``sum_f w_f E_q[f] - log Z(w)``; log Z is the Bethe value (exact on trees)."""
    soft = ~g.rule_hard
    return float(np.dot(g.weights[soft], q_counts[soft]) - bethe_objective(g, m))


def weight_gradient(g: FactorGraph, q: MarginalTable, bp: BpOptions | None = None) -> np.ndarray:
    """dJ/dw per rule: E_q[f] - E_p[f], summed over a rule's groundings."""
    m = loopy_bp(g, bp)
    grad = posterior_counts(g, q) - model_counts(m)[0]
    grad[g.rule_hard] = 0.0
    return grad


# -- EM steps -------------------------------------------------------------------


def e_step(program: Program, ds: Dataset, c: Classifier, bp: BpOptions | None = None) -> MarginalTable:
    g = ground(program, ds, c.log_proba(ds.X) if len(ds) else np.zeros((0, 2)))
    return loopy_bp(g, bp)


def _learnable_index(program: Program) -> np.ndarray:
    return np.array([i for i, r in enumerate(program.rules) if r.weight.is_learnable], dtype=int)


def m_step_weights(program: Program, ds: Dataset, q: MarginalTable, c: Classifier | None, opts: EmOptions):
    """Refine learnable weights against the posterior ``q``.

    Steps are diagonal-Newton scaled (gradient over the summed grounding
    variances). With line search, a step is kept only if the surrogate
    objective does not decrease; it is halved up to ``MAX_HALVINGS`` times
    and otherwise abandoned. Returns ``(weights, objective_trace)`` where
    ``objective_trace[0]`` is the starting objective.
    """
    learn = _learnable_index(program)
    prior = c.log_proba(ds.X) if (opts.predictor_evidence and c is not None and len(ds)) else None
    g = ground(program, ds, prior)
    m = loopy_bp(g, opts.bp)
    q_counts = posterior_counts(g, q)
    objective = surrogate_objective(g, q_counts, m)
    trace = [objective]
    if learn.size == 0:
        return {}, trace

    for _ in range(opts.weight_steps):
        p_counts, p_var = model_counts(m)
        grad = (q_counts - p_counts)[learn]
        step = opts.weight_learning_rate * grad / np.maximum(p_var[learn], MIN_CURVATURE)
        step = np.clip(step, -MAX_WEIGHT_STEP, MAX_WEIGHT_STEP)
        if not np.any(step):
            break
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            w = g.weights.copy()
            w[learn] = np.clip(w[learn] + step, -WEIGHT_CLAMP, WEIGHT_CLAMP)
            g_new = g.with_weights(w)
            m_new = loopy_bp(g_new, opts.bp)
            obj_new = surrogate_objective(g_new, q_counts, m_new)
            if not opts.line_search or obj_new >= objective:
                accepted = True
                break
            step = step / 2
        if not accepted:
            break
        g, m, objective = g_new, m_new, obj_new
        trace.append(objective)

    weights = {g.rule_names[i]: float(g.weights[i]) for i in learn}
    return weights, trace


def _apply_weights(program: Program, weights: dict):
    for rule in program.rules:
        if rule.name in weights:
            rule.weight.value = weights[rule.name]


def _entropy(q1):
    q = np.clip(q1, 1e-300, 1.0)
    r = np.clip(1 - q1, 1e-300, 1.0)
    return -(q1 * np.log(q) + (1 - q1) * np.log(r))


def fit(
    program: Program,
    ds: Dataset,
    opts: EmOptions | None = None,
    seed: int = 0,
    classifier: Optional[Classifier] = None,
    kind: str = "logreg",
    hidden: int = 16,
):
    """Run variational EM; returns ``(classifier, program, trace)``.

    The returned program is a copy carrying the refined weights; the input
    program is not modified.
    """
    opts = opts or EmOptions()
    program = copy.deepcopy(program)
    c = classifier.copy() if classifier is not None else Classifier.init(kind, ds.d, hidden, sub_seed(seed, 1))
    trace = []
    for it in range(opts.em_iterations):
        q = e_step(program, ds, c, opts.bp)
        train = TrainOptions(**{**asdict(opts.train), "seed": sub_seed(seed, 100 + it)})
        c, distill_loss = train_distill(c, ds, q, train)
        weights, wtrace = m_step_weights(program, ds, q, c, opts)
        _apply_weights(program, weights)
        record = IterationRecord(
            iteration=it + 1,
            q_mean=float(np.mean(q.q1)) if len(q) else 0.0,
            q_entropy=float(np.mean(_entropy(q.q1))) if len(q) else 0.0,
            distill_loss=float(distill_loss),
            weights=program.weight_values(),
            surrogate_objective=float(wtrace[-1]),
            bp_converged=bool(q.converged),
            bp_iterations=int(q.iterations),
            weight_steps_accepted=len(wtrace) - 1,
        )
        log.info("EM iteration %d: %s", it + 1, record)
        trace.append(record)
    return c, program, trace


def trace_to_list(trace) -> list:
    return [asdict(r) for r in trace]
