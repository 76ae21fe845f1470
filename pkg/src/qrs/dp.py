"""Finite-horizon dynamic programming for the risk-sensitive estimator.

The cost of an estimate sequence is the reference-measure average over
records of ``Tr[rho^mu_N exp(mu2 K(u_N))]``, where ``rho^mu`` is the
risk-sensitive filter driven by the estimates themselves. Because the filter
state along a record prefix depends on every earlier estimate, the exact
recursion runs over the tree of (record, control) histories:

    f_N(rho)   = min_u Tr[rho exp(mu2 K(u))]                (continuous u)
    f_l(rho)   = min_{u in C(rho)} 1/2 sum_{+-} f_{l+1}(step(rho, u, +-))
    cost       = 1/2 sum_{+-} f_1(step(rho_0, none, +-))

No estimate enters the first step. The candidate set ``C(rho)`` is the
control grid plus the node's own suboptimal and risk-neutral estimates, so the
tree always contains both reference policies and the optimum can only
improve when the grid is refined.

The tree has ``2^N |C|^(N-1)`` leaves; a leaf budget bounds it and the
default grid is shrunk to fit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import matcore as mc
from .errors import CapacityError, InvalidInputError
from .filter import (FilterState, Observable, RiskParams, estimate, minimize_risk, pairing,
                     risk_weight, rn_step, rs_step, sandwich, suboptimal_estimate)
from .model import BlockDensityMatrix, ParameterEnsemble

MAX_N = 12
DEFAULT_GRID_POINTS = 101
LEAF_BUDGET = 2_000_000
CHUNK_ELEMS = 1_000_000  # max (node x block) pairs materialized at once


def default_grid(obs: Observable, points: int = DEFAULT_GRID_POINTS, margin: float = 1.0) -> np.ndarray:
    x = obs.eigenvalues
    return np.linspace(x.min() - margin, x.max() + margin, points)


def tree_leaves(N: int, n_candidates: int) -> int:
    return 2**N * n_candidates ** max(N - 1, 0)


def fit_grid_points(N: int, points: int = DEFAULT_GRID_POINTS, budget: int = LEAF_BUDGET) -> int:
    """Largest odd grid size <= points whose tree fits the leaf budget."""
    g = points if points % 2 else points - 1
    while g >= 1 and tree_leaves(N, g + 2) > budget:
        g -= 2
    if g < 1:
        raise CapacityError(f"N={N} does not fit the DP leaf budget {budget}")
    return g


@dataclass
class DPResult:
    policy: dict           # prefix (tuple of signs) -> u, for prefixes on the optimal tree
    optimal_cost: float
    grid: np.ndarray
    leaves: int


class _Solver:
    def __init__(self, ens: ParameterEnsemble, N: int, rp: RiskParams, obs: Observable, grid):
        self.ens, self.N, self.rp, self.obs = ens, N, rp, obs
        self.grid = np.asarray(grid, dtype=float)
        self.vp, self.vm = ens.kraus_plus, ens.kraus_minus
        self.m = ens.size

    def terminal(self, blocks):
        masses = self.obs.spectral_masses(blocks)
        u = minimize_risk(masses, self.obs.eigenvalues, self.rp.mu2)
        val = np.sum(masses * np.exp(self.rp.mu2 * (self.obs.eigenvalues - u[..., None]) ** 2), axis=-1)
        return val, u

    def candidates(self, blocks, rn_blocks):
        """Sorted candidate controls per node, shape (B, C)."""
        sub = minimize_risk(self.obs.spectral_masses(blocks), self.obs.eigenvalues, self.rp.mu2)
        tr = np.sum(rn_blocks[..., 0, 0].real + rn_blocks[..., 1, 1].real, axis=-1)
        rn = pairing(rn_blocks, self.obs.X) / tr
        b = blocks.shape[0]
        c = np.concatenate([np.broadcast_to(self.grid, (b, self.grid.size)), sub[:, None], rn[:, None]], axis=1)
        return np.sort(c, axis=1, kind="stable")

    def children(self, blocks, rn_blocks, controls):
        """Successor states for every (node, control, sign); controls None at the root."""
        if controls is None:
            h = blocks[:, None]
        else:
            e = risk_weight(self.obs, controls, self.rp.mu1, self.ens.lam)  # (B, C, 2, 2)
            h = sandwich(e[:, :, None], blocks[:, None])  # (B, C, m, 2, 2)
        plus = sandwich(self.vp, h)
        minus = sandwich(self.vm, h)
        kids = np.stack([plus, minus], axis=2)  # (B, C, 2, m, 2, 2)
        rn_kids = np.stack([sandwich(self.vp, rn_blocks), sandwich(self.vm, rn_blocks)], axis=1)
        return kids, rn_kids  # rn children: (B, 2, m, 2, 2)

    def value(self, blocks, rn_blocks, depth: int):
        """Optimal cost-to-go for a batch of nodes at ``depth``."""
        if depth == self.N:
            return self.terminal(blocks)[0]
        n_cand = self.grid.size + 2
        per_node = n_cand * 2 * self.m
        chunk = max(1, CHUNK_ELEMS // per_node)
        out = np.empty(blocks.shape[0])
        for s in range(0, blocks.shape[0], chunk):
            out[s:s + chunk] = self._value_chunk(blocks[s:s + chunk], rn_blocks[s:s + chunk], depth)[0]
        return out

    def _value_chunk(self, blocks, rn_blocks, depth):
        b = blocks.shape[0]
        cands = self.candidates(blocks, rn_blocks)
        c = cands.shape[1]
        kids, rn_kids = self.children(blocks, rn_blocks, cands)
        flat = kids.reshape(b * c * 2, self.m, 2, 2)
        rn_flat = np.broadcast_to(rn_kids[:, None], (b, c, 2, self.m, 2, 2)).reshape(b * c * 2, self.m, 2, 2)
        vals = self.value(flat, rn_flat, depth + 1).reshape(b, c, 2)
        q = 0.5 * (vals[..., 0] + vals[..., 1])
        k = np.argmin(q, axis=1)  # first minimizer in sorted order = smallest u
        return q[np.arange(b), k], cands[np.arange(b), k]


def _default_state(config):
    return config.model.nominal_state()


def dp_solve(config, N: int, rp: RiskParams, obs: Observable | None = None, u_grid=None,
             state: BlockDensityMatrix | None = None, budget: int = LEAF_BUDGET) -> DPResult:
    """Optimal estimate policy and cost by enumeration of the control tree.

    ``config`` is an ExperimentConfig (its ensemble and nominal state are used)
    or a ParameterEnsemble, in which case ``state`` is required.
    """
    if not (isinstance(N, (int, np.integer)) and 1 <= N):
        raise InvalidInputError("N must be a positive integer")
    if N > MAX_N:
        raise CapacityError(f"dp_solve limited to N <= {MAX_N}")
    if isinstance(config, ParameterEnsemble):
        ens = config
        if state is None:
            raise InvalidInputError("state is required when passing an ensemble")
    else:
        ens = config.ensemble
        obs = obs or config.observable
        state = state or _default_state(config)
    if obs is None:
        raise InvalidInputError("observable is required")
    if u_grid is None:
        grid = default_grid(obs, fit_grid_points(N, budget=budget))
    else:
        grid = np.unique(np.asarray(u_grid, dtype=float))
        if grid.size == 0 or not np.all(np.isfinite(grid)):
            raise InvalidInputError("u_grid must be a nonempty finite set")
    leaves = tree_leaves(N, grid.size + 2)
    if leaves > budget:
        raise CapacityError(f"control tree has {leaves} leaves, budget is {budget}")
    solver = _Solver(ens, N, rp, obs, grid)

    policy: dict = {}
    root = state.blocks[None]
    kids, rn_kids = solver.children(root, root, None)  # (1, 1, 2, m, 2, 2)
    frontier = [((1,), kids[0, 0, 0], rn_kids[0, 0]), ((-1,), kids[0, 0, 1], rn_kids[0, 1])]
    total = 0.0
    # forward pass over the optimal tree; values of the two depth-1 nodes give the cost
    for depth in range(1, N + 1):
        nxt = []
        for prefix, blk, rn in frontier:
            if depth == N:
                val, u = solver.terminal(blk[None])
                policy[prefix] = float(u[0])
                if depth == 1:
                    total += 0.5 * float(val[0])
                continue
            q, u = solver._value_chunk(blk[None], rn[None], depth)
            policy[prefix] = float(u[0])
            if depth == 1:
                total += 0.5 * float(q[0])
            e = risk_weight(obs, u[0], rp.mu1, ens.lam)
            h = sandwich(e, blk)
            nxt.append((prefix + (1,), sandwich(solver.vp, h), sandwich(solver.vp, rn)))
            nxt.append((prefix + (-1,), sandwich(solver.vm, h), sandwich(solver.vm, rn)))
        frontier = nxt
    return DPResult(policy=policy, optimal_cost=total, grid=grid, leaves=leaves)


# --- reference policies and their filter-side costs ----------------------------

def _prefixes(N):
    for l in range(1, N + 1):
        yield from itertools.product((1, -1), repeat=l)


def suboptimal_policy(state: BlockDensityMatrix, ens: ParameterEnsemble, N: int, rp: RiskParams,
                      obs: Observable) -> dict:
    """Per-step minimizers of Tr[rho^mu_l exp(mu2 K(u))], along every record."""
    policy = {}
    states = {(): FilterState.initial(state)}
    for prefix in _prefixes(N):
        parent = states[prefix[:-1]]
        s = rs_step(parent, ens, rp, obs, parent.last_estimate, prefix[-1] * ens.lam)
        u = suboptimal_estimate(s, rp, obs)
        states[prefix] = s.with_estimate(u)
        policy[prefix] = u
    return policy


def risk_neutral_policy(state: BlockDensityMatrix, ens: ParameterEnsemble, N: int, obs: Observable) -> dict:
    policy = {}
    states = {(): FilterState.initial(state)}
    for prefix in _prefixes(N):
        s = rn_step(states[prefix[:-1]], ens, prefix[-1] * ens.lam)
        states[prefix] = s
        policy[prefix] = estimate(s, obs.X)
    return policy


def filter_policy_cost(state: BlockDensityMatrix, ens: ParameterEnsemble, N: int, policy, rp: RiskParams,
                       obs: Observable) -> float:
    """2^-N sum over records of Tr[rho^mu_N exp(mu2 K(u_N))], filter recursion only."""
    from .oracle import as_policy

    pol = as_policy(policy)
    total = 0.0
    for rec in itertools.product((1, -1), repeat=N):
        s = FilterState.initial(state)
        u_prev = None
        for l in range(N):
            s = rs_step(s, ens, rp, obs, u_prev, rec[l] * ens.lam)
            u_prev = pol(rec[: l + 1])
        blocks = s.blocks * np.exp(s.log_scale)
        w = obs.exp_K(u_prev, rp.mu2)
        total += float(np.real(np.sum(np.trace(blocks @ w, axis1=-2, axis2=-1))))
    return total / 2**N


def policy_from_callable(func, N: int) -> dict:
    return {p: float(func(p)) for p in _prefixes(N)}
