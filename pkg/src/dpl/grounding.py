"""Compile a rule program over a dataset into a binary factor graph.

One latent variable per instance. Factors are kept in flat arrays by kind so
message passing can be vectorized; :attr:`FactorGraph.factors` gives a
record-per-factor view for inspection.

Every factor is an indicator potential: it contributes ``sat`` in log space
when its condition holds and ``viol`` otherwise. Soft rules use
``(sat, viol) = (w, 0)``; hard rules use ``(0, -HARD_PENALTY)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .logic import Agree, AtLeastOne, Program, Vote

HARD_PENALTY = 1e30
WEIGHT_CLAMP = 20.0


class GroundingError(ValueError):
    pass


@dataclass(frozen=True)
class Factor:
    kind: str  # SingletonVote | AtLeastOne | Agree | PredictorPrior
    vars: tuple
    source: str
    target: Optional[int] = None
    logp: Optional[tuple] = None


def _ints(values=()):
    return np.asarray(values, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FactorGraph:
    n_vars: int
    rule_names: tuple
    rule_hard: np.ndarray
    weights: np.ndarray
    vote_var: np.ndarray
    vote_target: np.ndarray
    vote_rule: np.ndarray
    alo_members: np.ndarray
    alo_ptr: np.ndarray
    alo_rule: np.ndarray
    agree_a: np.ndarray
    agree_b: np.ndarray
    agree_rule: np.ndarray
    prior: Optional[np.ndarray] = None  # (n_vars, 2) log-probabilities

    # -- potentials --------------------------------------------------------

    def rule_potentials(self):
        """Per-rule (sat, viol) log-potentials."""
        sat = np.where(self.rule_hard, 0.0, self.weights)
        viol = np.where(self.rule_hard, -HARD_PENALTY, 0.0)
        return sat, viol

    def with_weights(self, weights) -> "FactorGraph":
        """Copy with new rule weights; ``weights`` is an array or a name->value dict."""
        w = self.weights.copy()
        if isinstance(weights, dict):
            for name, value in weights.items():
                w[self.rule_names.index(name)] = value
        else:
            w[:] = weights
        w[~self.rule_hard] = np.clip(w[~self.rule_hard], -WEIGHT_CLAMP, WEIGHT_CLAMP)
        return dataclasses.replace(self, weights=w)

    def with_prior(self, prior) -> "FactorGraph":
        return dataclasses.replace(self, prior=None if prior is None else _check_prior(prior, self.n_vars))

    # -- structure ---------------------------------------------------------

    @property
    def n_alo(self) -> int:
        return len(self.alo_rule)

    @property
    def n_agree(self) -> int:
        return len(self.agree_rule)

    @cached_property
    def alo_factor_of_edge(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_alo), np.diff(self.alo_ptr))

    @cached_property
    def alo_blocks(self) -> list:
        """Factors bucketed by arity: [(factor ids, edge index matrix)]."""
        sizes = np.diff(self.alo_ptr)
        blocks = []
        for k in np.unique(sizes):
            fids = np.flatnonzero(sizes == k)
            edges = self.alo_ptr[fids][:, None] + np.arange(k)[None, :]
            blocks.append((fids, edges))
        return blocks

    @cached_property
    def degree(self) -> np.ndarray:
        """Number of non-unary factors touching each variable."""
        deg = np.bincount(self.alo_members, minlength=self.n_vars)
        deg += np.bincount(self.agree_a, minlength=self.n_vars)
        deg += np.bincount(self.agree_b, minlength=self.n_vars)
        return deg

    @cached_property
    def is_tree(self) -> bool:
        """True if the variable-factor incidence graph has no cycle."""
        parent = list(range(self.n_vars))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def link(members):
            root = find(int(members[0]))
            for j in members[1:]:
                rj = find(int(j))
                if rj == root:
                    return False
                parent[rj] = root
            return True

        for f in range(self.n_alo):
            if not link(self.alo_members[self.alo_ptr[f]:self.alo_ptr[f + 1]]):
                return False
        for a, b in zip(self.agree_a, self.agree_b):
            if not link((a, b)):
                return False
        return True

    @property
    def factors(self) -> list:
        out = []
        for r, name in enumerate(self.rule_names):
            for v, t in zip(self.vote_var[self.vote_rule == r], self.vote_target[self.vote_rule == r]):
                out.append(Factor("SingletonVote", (int(v),), name, target=int(t)))
            for f in np.flatnonzero(self.alo_rule == r):
                members = self.alo_members[self.alo_ptr[f]:self.alo_ptr[f + 1]]
                out.append(Factor("AtLeastOne", tuple(int(m) for m in members), name))
            for f in np.flatnonzero(self.agree_rule == r):
                out.append(Factor("Agree", (int(self.agree_a[f]), int(self.agree_b[f])), name))
        if self.prior is not None:
            for i in range(self.n_vars):
                out.append(Factor("PredictorPrior", (i,), "predictor", logp=tuple(self.prior[i])))
        return out


def _check_prior(prior, n: int) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (n, 2):
        raise GroundingError(f"predictor log-probs have shape {prior.shape}, expected ({n}, 2)")
    if n and (not np.all(np.isfinite(prior)) or np.max(np.abs(logsumexp(prior, axis=1))) > 1e-6):
        raise GroundingError("predictor log-probs are not normalized")
    return prior


def ground(program: Program, ds: Dataset, predictor_log_probs=None) -> FactorGraph:
    n = len(ds)
    vote_var, vote_target, vote_rule = [], [], []
    alo_members, alo_sizes, alo_rule = [], [], []
    agree_a, agree_b, agree_rule = [], [], []

    for r, rule in enumerate(program.rules):
        head = rule.head
        if isinstance(head, Vote):
            idx = np.flatnonzero(ds.flag(head.source))
            vote_var.append(idx)
            vote_target.append(np.full(idx.size, head.target))
            vote_rule.append(np.full(idx.size, r))
        elif isinstance(head, AtLeastOne):
            for members in ds.groups.get(head.group_field, {}).values():
                if len(members) == 1:
                    # a singleton group is exactly a positive vote
                    vote_var.append(_ints(members))
                    vote_target.append(_ints([1]))
                    vote_rule.append(_ints([r]))
                else:
                    alo_members.append(_ints(members))
                    alo_sizes.append(len(members))
                    alo_rule.append(r)
        elif isinstance(head, Agree):
            plist = ds.pairs.get(head.pair_field, [])
            agree_a.extend(i for i, _ in plist)
            agree_b.extend(j for _, j in plist)
            agree_rule.extend([r] * len(plist))

    def cat(chunks):
        return np.concatenate(chunks).astype(np.int64) if chunks else _ints()

    # stable sort by rule keeps votes of one rule in instance order
    vr = cat(vote_rule)
    order = np.argsort(vr, kind="stable")
    graph = FactorGraph(
        n_vars=n,
        rule_names=tuple(r.name for r in program.rules),
        rule_hard=np.array([r.weight.is_hard for r in program.rules], dtype=bool),
        weights=np.array([0.0 if r.weight.is_hard else r.weight.value for r in program.rules], dtype=float),
        vote_var=cat(vote_var)[order],
        vote_target=cat(vote_target)[order],
        vote_rule=vr[order],
        alo_members=cat(alo_members),
        alo_ptr=np.concatenate([[0], np.cumsum(alo_sizes, dtype=np.int64)]).astype(np.int64),
        alo_rule=_ints(alo_rule),
        agree_a=_ints(agree_a),
        agree_b=_ints(agree_b),
        agree_rule=_ints(agree_rule),
    )
    if predictor_log_probs is not None:
        if len(predictor_log_probs) != n:
            raise GroundingError(f"predictor log-probs length {len(predictor_log_probs)} != {n} instances")
        graph = graph.with_prior(predictor_log_probs)
    return graph


def graph_stats(g: FactorGraph) -> dict:
    n_votes = len(g.vote_var)
    n_prior = g.n_vars if g.prior is not None else 0
    arities = [1] if n_votes or n_prior else []
    if g.n_alo:
        arities.append(int(np.diff(g.alo_ptr).max()))
    if g.n_agree:
        arities.append(2)
    return {
        "variables": g.n_vars,
        "factors": n_votes + g.n_alo + g.n_agree + n_prior,
        "SingletonVote": n_votes,
        "AtLeastOne": g.n_alo,
        "Agree": g.n_agree,
        "PredictorPrior": n_prior,
        "max_arity": max(arities, default=0),
        "is_tree": g.is_tree,
    }
