"""Measurement records drawn from the true model.

The true system is simulated by its own risk-neutral filter: given the
unnormalized state after ``l - 1`` outcomes, the next outcome is ``+lam`` with
probability ``Tr[V+ rho V+*] / (2 Tr rho)``. This is exact, no approximation.

Each trajectory owns a generator seeded from ``(master_seed, path_index)``
and consumes exactly one uniform per step, so any subset of paths can be
regenerated independently of how the batch was scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalConsistencyError
from .filter import FilterState, _advance, _check_trace, estimate_blocks, sandwich, total_trace
from .model import BlockDensityMatrix, ParameterEnsemble

P_TOL = 1e-12


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(path_index)]))


def path_uniforms(master_seed: int, path_index: int, n_steps: int) -> np.ndarray:
    return path_rng(master_seed, path_index).random(n_steps)


def plus_probability(blocks: np.ndarray, c: ParameterEnsemble):
    """Probability of +lam and the two candidate successor states."""
    tr = total_trace(blocks)
    _check_trace(tr)
    plus = sandwich(c.kraus_plus, blocks)
    minus = sandwich(c.kraus_minus, blocks)
    p = total_trace(plus) / (2.0 * tr)
    if np.any(p < -P_TOL) or np.any(p > 1 + P_TOL) or not np.all(np.isfinite(p)):
        raise NumericalConsistencyError(f"outcome probability out of range: {p}")
    return np.clip(p, 0.0, 1.0), plus, minus


def sample_outcome(true_state: FilterState, c: ParameterEnsemble, rng):
    """Draw one outcome. Returns (dy, p_plus).

    ``rng`` is a numpy Generator or a float already drawn uniformly on [0, 1).
    """
    p, _, _ = plus_probability(true_state.blocks, c)
    p = float(p)
    uniform = float(rng) if isinstance(rng, (float, np.floating)) else rng.random()
    return (c.lam if uniform < p else -c.lam), p


@dataclass
class TrajectoryRecord:
    dy: np.ndarray
    seed: int
    lam: float
    p_plus: np.ndarray = field(default_factory=lambda: np.empty(0))
    true_estimates: np.ndarray | None = None
    true_states: list | None = None

    @property
    def signs(self) -> np.ndarray:
        return np.where(self.dy > 0, 1, -1).astype(np.int8)

    def __len__(self):
        return len(self.dy)


def sample_record(rho_true: BlockDensityMatrix, c: ParameterEnsemble, n_steps: int, master_seed: int,
                  path_index: int = 0, X=None, keep_states: bool = False) -> TrajectoryRecord:
    """Sample ``n_steps`` outcomes for path ``path_index`` of ``master_seed``."""
    uniforms = path_uniforms(master_seed, path_index, n_steps)
    s = FilterState.initial(rho_true)
    dy = np.empty(n_steps)
    pp = np.empty(n_steps)
    est = np.empty(n_steps) if X is not None else None
    states = [] if keep_states else None
    for l in range(n_steps):
        p, plus, minus = plus_probability(s.blocks, c)
        sign = 1 if uniforms[l] < p else -1
        dy[l] = sign * c.lam
        pp[l] = p
        s = _advance(s, plus if sign > 0 else minus)
        if X is not None:
            est[l] = estimate_blocks(s.blocks, X)
        if keep_states:
            states.append(s)
    return TrajectoryRecord(dy=dy, seed=int(master_seed), lam=c.lam, p_plus=pp,
                            true_estimates=est, true_states=states)


def sample_trajectory(config, seed: int, path_index: int = 0, keep_states: bool = False) -> TrajectoryRecord:
    """Record for one path of an experiment configuration (true model)."""
    m = config.model
    return sample_record(m.true_state(), config.ensemble, config.N, seed, path_index,
                         X=config.observable.X, keep_states=keep_states)


def record_probability(rho: BlockDensityMatrix, c: ParameterEnsemble, signs) -> float:
    """Product of per-step conditional probabilities of a sign sequence."""
    s = FilterState.initial(rho)
    prob = 1.0
    for sign in signs:
        p, plus, minus = plus_probability(s.blocks, c)
        prob *= float(p) if sign > 0 else 1.0 - float(p)
        if prob == 0.0:
            return 0.0
        s = _advance(s, plus if sign > 0 else minus)
    return prob
