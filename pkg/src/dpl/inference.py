"""Posterior marginals over a :class:`~dpl.grounding.FactorGraph`.

Messages are binary, so each one is stored as a single log-odds value
``log m(1) - log m(0)``; that is the message normalized in the log domain.
Hard constraints appear as log-odds of magnitude ~``HARD_PENALTY``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .grounding import HARD_PENALTY, FactorGraph

HARD = math.inf
MAX_BRUTE_FORCE_VARS = 20
_HARD_SEEN = HARD_PENALTY / 2


class InferenceError(RuntimeError):
    pass


@dataclass
class BpOptions:
    max_iterations: int = 50
    tolerance: float = 1e-6
    damping: float = 0.3
    schedule: str = "synchronous"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.schedule != "synchronous":
            raise ValueError(f"unsupported schedule {self.schedule!r}")


@dataclass
class MarginalTable:
    q: np.ndarray  # (n, 2): q[i] = (P(x_i = 0), P(x_i = 1))
    converged: bool = True
    iterations: int = 0
    max_residual: float = 0.0
    # BP state kept for factor beliefs and the Bethe objective
    graph: Optional[FactorGraph] = field(default=None, repr=False)
    agree_to_a: Optional[np.ndarray] = field(default=None, repr=False)
    agree_to_b: Optional[np.ndarray] = field(default=None, repr=False)
    alo_msg: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_p1(cls, p1) -> "MarginalTable":
        p1 = np.asarray(p1, dtype=float)
        return cls(np.column_stack([1.0 - p1, p1]))

    @property
    def q1(self) -> np.ndarray:
        return self.q[:, 1]

    @property
    def has_state(self) -> bool:
        return self.graph is not None and self.alo_msg is not None

    def __len__(self):
        return len(self.q)


def _softplus(u):
    return np.logaddexp(0.0, u)


def _log_expm1(x):
    """log(exp(x) - 1) for x >= 0; -inf at 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        big = x + np.log(-np.expm1(-np.maximum(x, 1e-300)))
        small = np.log(np.expm1(np.minimum(x, 1.0)))
    return np.where(x > 1.0, big, small)


def _alo_out(excl, sat, viol):
    """Log-odds message from an at-least-one factor to one member.

    ``excl`` is sum over the other members of softplus(incoming log-odds),
    i.e. -log P(all others are 0) under the incoming messages.
    """
    with np.errstate(divide="ignore"):
        return sat + excl - np.logaddexp(sat + _log_expm1(excl), viol)


def _exclusive_sums(vals):
    """For each row, sum of the other entries; rows are sums of non-negatives."""
    zero = np.zeros((vals.shape[0], 1))
    before = np.cumsum(np.hstack([zero, vals[:, :-1]]), axis=1)
    after = np.cumsum(np.hstack([zero, vals[:, :0:-1]]), axis=1)[:, ::-1]
    return before + after


def at_least_one_messages(incoming, w) -> np.ndarray:
    """Outgoing messages of one at-least-one factor in O(n).

    ``incoming`` is an (n, 2) array of variable-to-factor log-messages;
    ``w`` is the log-weight gained when some member is 1, or ``HARD`` to
    forbid the all-zero configuration. Returns (n, 2) normalized
    log-messages.
    """
    incoming = np.asarray(incoming, dtype=float)
    u = incoming[:, 1] - incoming[:, 0]
    sat, viol = (0.0, -HARD_PENALTY) if w == HARD else (float(w), 0.0)
    sp = _softplus(u)
    excl = _exclusive_sums(sp[None, :])[0]
    out = _alo_out(excl, sat, viol)
    return np.column_stack([log_expit(-out), log_expit(out)])


def _agree_out(u_other, sat, viol):
    return np.logaddexp(sat + u_other, viol) - np.logaddexp(viol + u_other, sat)


class _Workspace:
    """Per-call message buffers; the graph itself is never written."""

    def __init__(self, g: FactorGraph):
        self.g = g
        n = g.n_vars
        sat, viol = g.rule_potentials()
        self.sat, self.viol = sat, viol
        sign = np.where(g.vote_target == 1, 1.0, -1.0)
        vote_lo = sign * (sat[g.vote_rule] - viol[g.vote_rule])
        self.h = np.bincount(g.vote_var, vote_lo, minlength=n)
        hard_vote = g.rule_hard[g.vote_rule]
        self.hard_pos = np.bincount(g.vote_var[hard_vote & (sign > 0)], minlength=n) > 0
        self.hard_neg = np.bincount(g.vote_var[hard_vote & (sign < 0)], minlength=n) > 0
        if g.prior is not None:
            self.h = self.h + (g.prior[:, 1] - g.prior[:, 0])
        self.agree_sat = sat[g.agree_rule]
        self.agree_viol = viol[g.agree_rule]
        self.alo_sat = sat[g.alo_rule]
        self.alo_viol = viol[g.alo_rule]

    def totals(self, to_a, to_b, alo):
        g = self.g
        n = g.n_vars
        return (
            self.h
            + np.bincount(g.agree_a, to_a, minlength=n)
            + np.bincount(g.agree_b, to_b, minlength=n)
            + np.bincount(g.alo_members, alo, minlength=n)
        )

    def alo_update(self, u):
        g = self.g
        sp = _softplus(u)
        out = np.empty_like(u)
        for fids, edges in g.alo_blocks:
            excl = _exclusive_sums(sp[edges])
            out[edges] = _alo_out(excl, self.alo_sat[fids][:, None], self.alo_viol[fids][:, None])
        return out

    def sweep(self, to_a, to_b, alo):
        g = self.g
        total = self.totals(to_a, to_b, alo)
        u_a = total[g.agree_a] - to_a
        u_b = total[g.agree_b] - to_b
        new_a = _agree_out(u_b, self.agree_sat, self.agree_viol)
        new_b = _agree_out(u_a, self.agree_sat, self.agree_viol)
        new_alo = self.alo_update(total[g.alo_members] - alo)
        return new_a, new_b, new_alo


def _check_contradiction(ws: _Workspace, to_a, to_b, alo):
    g = ws.g
    n = g.n_vars
    pos = ws.hard_pos.copy()
    neg = ws.hard_neg.copy()
    for idx, msg in ((g.agree_a, to_a), (g.agree_b, to_b), (g.alo_members, alo)):
        pos |= np.bincount(idx[msg > _HARD_SEEN], minlength=n) > 0
        neg |= np.bincount(idx[msg < -_HARD_SEEN], minlength=n) > 0
    bad = np.flatnonzero(pos & neg)
    if bad.size:
        raise InferenceError(f"contradictory constraints on variable {int(bad[0])}")


def loopy_bp(g: FactorGraph, opts: BpOptions | None = None) -> MarginalTable:
    """Synchronous sum-product with damping and sup-norm residual stopping.

    Damping only matters on graphs with cycles; on forests the undamped
    flooding schedule reaches the exact fixed point in diameter+1 sweeps,
    so damping is skipped there and sweeps continue until messages stop
    changing (or the cap is hit).
    """
    opts = opts or BpOptions()
    ws = _Workspace(g)
    to_a = np.zeros(g.n_agree)
    to_b = np.zeros(g.n_agree)
    alo = np.zeros(len(g.alo_members))
    exact = g.is_tree
    damping = 0.0 if exact else opts.damping

    converged = False
    residual = 0.0
    it = 0
    if g.n_agree == 0 and g.n_alo == 0:
        converged = True
    else:
        for it in range(1, opts.max_iterations + 1):
            new_a, new_b, new_alo = ws.sweep(to_a, to_b, alo)
            if damping:
                new_a = (1 - damping) * new_a + damping * to_a
                new_b = (1 - damping) * new_b + damping * to_b
                new_alo = (1 - damping) * new_alo + damping * alo
            residual = max(
                np.max(np.abs(new_a - to_a), initial=0.0),
                np.max(np.abs(new_b - to_b), initial=0.0),
                np.max(np.abs(new_alo - alo), initial=0.0),
            )
            to_a, to_b, alo = new_a, new_b, new_alo
            converged = residual <= opts.tolerance
            # on a forest keep sweeping to the exact fixed point (residual 0),
            # small residuals can still hide one un-propagated hop
            if converged and (residual == 0.0 or not exact):
                break

    _check_contradiction(ws, to_a, to_b, alo)
    total = ws.totals(to_a, to_b, alo)
    q = np.column_stack([expit(-total), expit(total)])
    return MarginalTable(q, converged, it, float(residual), g, to_a, to_b, alo)


# -- exact enumeration ---------------------------------------------------------


def _config_log_weights(g: FactorGraph) -> tuple:
    n = g.n_vars
    if n > MAX_BRUTE_FORCE_VARS:
        raise InferenceError(f"too many variables for enumeration ({n} > {MAX_BRUTE_FORCE_VARS})")
    configs = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    sat, viol = g.rule_potentials()
    logw = np.zeros(len(configs))
    for v, t, r in zip(g.vote_var, g.vote_target, g.vote_rule):
        logw += np.where(configs[:, v] == bool(t), sat[r], viol[r])
    for f, r in enumerate(g.alo_rule):
        members = g.alo_members[g.alo_ptr[f]:g.alo_ptr[f + 1]]
        logw += np.where(configs[:, members].any(axis=1), sat[r], viol[r])
    for a, b, r in zip(g.agree_a, g.agree_b, g.agree_rule):
        logw += np.where(configs[:, a] == configs[:, b], sat[r], viol[r])
    if g.prior is not None:
        logw += np.where(configs, g.prior[:, 1], g.prior[:, 0]).sum(axis=1)
    return configs, logw


def exact_log_partition(g: FactorGraph) -> float:
    _, logw = _config_log_weights(g)
    log_z = float(logsumexp(logw))
    if log_z < -_HARD_SEEN:
        raise InferenceError("contradictory constraints")
    return log_z


def brute_force_marginals(g: FactorGraph) -> MarginalTable:
    """Exact marginals by summing all 2^n configurations."""
    configs, logw = _config_log_weights(g)
    log_z = logsumexp(logw)
    if log_z < -_HARD_SEEN:
        raise InferenceError("contradictory constraints")
    p = np.exp(logw - log_z)
    q1 = np.clip(p @ configs, 0.0, 1.0)
    return MarginalTable(np.column_stack([1.0 - q1, q1]))


# -- factor beliefs --------------------------------------------------------------


def _var_to_factor(m: MarginalTable):
    g = m.graph
    ws = _Workspace(g)
    total = ws.totals(m.agree_to_a, m.agree_to_b, m.alo_msg)
    return ws, total, total[g.agree_a] - m.agree_to_a, total[g.agree_b] - m.agree_to_b, total[g.alo_members] - m.alo_msg


def _agree_config_logs(u_a, u_b, sat, viol):
    # columns: (0,0), (0,1), (1,0), (1,1)
    return np.column_stack([sat + 0 * u_a, viol + u_b, viol + u_a, sat + u_a + u_b])


def _alo_stats(g: FactorGraph, u, sat, viol):
    """Per ALO factor: log P0(all zero) and log of the local normalizer."""
    log_pi0 = -np.bincount(g.alo_factor_of_edge, _softplus(u), minlength=g.n_alo)
    with np.errstate(divide="ignore"):
        log_1m = np.log(-np.expm1(log_pi0))
    log_za = np.logaddexp(sat + log_1m, viol + log_pi0)
    return log_1m, log_za


def factor_satisfaction(m: MarginalTable) -> dict:
    """Belief that each factor's condition holds, by factor kind.

    Needs a table produced by :func:`loopy_bp` (it reads the messages). On
    trees these are exact marginals of the factor scopes.
    """
    g = m.graph
    ws, _, u_a, u_b, u_alo = _var_to_factor(m)
    vote = m.q[g.vote_var, g.vote_target]
    logs = _agree_config_logs(u_a, u_b, ws.agree_sat, ws.agree_viol)
    agree = np.exp(np.logaddexp(logs[:, 0], logs[:, 3]) - logsumexp(logs, axis=1)) if len(logs) else np.zeros(0)
    log_1m, log_za = _alo_stats(g, u_alo, ws.alo_sat, ws.alo_viol)
    alo = np.exp(ws.alo_sat + log_1m - log_za)
    return {"vote": vote, "agree": agree, "alo": alo}


def factorized_satisfaction(g: FactorGraph, q: np.ndarray) -> dict:
    """Same quantities as :func:`factor_satisfaction` treating ``q`` as independent."""
    q1 = q[:, 1]
    vote = q[g.vote_var, g.vote_target]
    agree = q1[g.agree_a] * q1[g.agree_b] + (1 - q1[g.agree_a]) * (1 - q1[g.agree_b])
    with np.errstate(divide="ignore"):
        log_q0 = np.log(np.clip(1 - q1, 0.0, 1.0))
    log_all0 = np.bincount(g.alo_factor_of_edge, log_q0[g.alo_members], minlength=g.n_alo)
    alo = -np.expm1(log_all0)
    return {"vote": vote, "agree": agree, "alo": alo}


def bethe_objective(g: FactorGraph, m: MarginalTable) -> float:
    """Bethe approximation of log Z from converged BP messages; exact on trees."""
    if not m.has_state:
        raise ValueError("marginal table carries no BP messages")
    ws, total, u_a, u_b, u_alo = _var_to_factor(m)
    n = g.n_vars
    if n == 0:
        return 0.0

    # variable terms with all unary potentials folded into the node
    sat, viol = ws.sat, ws.viol
    vs = sat[g.vote_rule]
    vv = viol[g.vote_rule]
    t1 = g.vote_target == 1
    phi1 = np.bincount(g.vote_var, np.where(t1, vs, vv), minlength=n)
    phi0 = np.bincount(g.vote_var, np.where(t1, vv, vs), minlength=n)
    if g.prior is not None:
        phi0 = phi0 + g.prior[:, 0]
        phi1 = phi1 + g.prior[:, 1]
    lb0, lb1 = log_expit(-total), log_expit(total)
    b0, b1 = np.exp(lb0), np.exp(lb1)
    entropy = -(b0 * lb0 + b1 * lb1)
    value = np.sum(b0 * phi0 + b1 * phi1 + (1 - g.degree) * entropy)

    if g.n_agree:
        logs = _agree_config_logs(u_a, u_b, ws.agree_sat, ws.agree_viol)
        log_b = logs - logsumexp(logs, axis=1, keepdims=True)
        psi = np.column_stack([ws.agree_sat, ws.agree_viol, ws.agree_viol, ws.agree_sat])
        value += np.sum(np.exp(log_b) * (psi - log_b))

    if g.n_alo:
        # E_b[log psi] + H(b) = log Z_a - E_b[log P0], P0 the product of incoming
        log_1m, log_za = _alo_stats(g, u_alo, ws.alo_sat, ws.alo_viol)
        fe = g.alo_factor_of_edge
        log_p1, log_p0 = log_expit(u_alo), log_expit(-u_alo)
        beta = np.exp(ws.alo_sat[fe] + log_p1 - log_za[fe])
        e_log_p0 = np.bincount(fe, beta * log_p1 + (1 - beta) * log_p0, minlength=g.n_alo)
        value += np.sum(log_za - e_log_p0)
    return float(value)
