"""Brute-force reference computations on the full atom (x) field space.

The field is truncated to ``N`` slices, each a qubit starting in the vacuum.
Basis ordering is (atom, slice 1, ..., slice N) with the atom most
significant. The running unitary ``U(l) = M_l U(l-1)`` only touches the first
``l`` slices, so we store the compact factor ``U~(l)`` on (atom, slices 1..l)
and recover ``U(l) = U~(l) (x) I`` on demand.

A measurement record is a tuple of signs (+1 / -1); as an index, sign +1 is
bit 0 and slice 1 is the most significant bit. Parameter ensembles are
handled block by block, one unitary history per candidate parameter.

Policies (estimate sequences) are callables or mappings from a record prefix
(tuple of signs of length l) to the real estimate u_l.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import matcore as mc
from .errors import CapacityError, InvalidInputError, UndefinedConditionalError
from .filter import Observable, RiskParams
from .model import BlockDensityMatrix, InteractionCoefficients, ParameterEnsemble

MAX_N = 9
HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
# records whose probability is at roundoff level have no conditional expectation
PROB_FLOOR = 1e-15
VACUUM_PROJ = np.outer(mc.VACUUM, mc.VACUUM.conj())


def all_records(n: int):
    """All sign tuples of length n in index order."""
    return list(itertools.product((1, -1), repeat=n))


def record_index(record) -> int:
    idx = 0
    for s in record:
        idx = 2 * idx + (0 if s > 0 else 1)
    return idx


def as_signs(record) -> tuple:
    out = []
    for r in record:
        if r == 0 or not np.isfinite(r):
            raise InvalidInputError("record entries must be nonzero signs or +-lam")
        out.append(1 if r > 0 else -1)
    return tuple(out)


def hadamard_power(n: int) -> np.ndarray:
    """Rows are the +/- product vectors h_r, ordered by record index."""
    h = np.ones((1, 1))
    for _ in range(n):
        h = np.kron(h, HADAMARD)
    return h


def as_policy(estimates) -> Callable[[tuple], float]:
    if callable(estimates):
        return estimates
    if isinstance(estimates, Mapping):
        return lambda prefix: float(estimates[tuple(prefix)])
    raise InvalidInputError("estimates must be a callable or a mapping prefix -> u")


def embed_slice_unitary(c: InteractionCoefficients, l: int) -> np.ndarray:
    """M_l on (atom, slices 1..l), acting on the atom and slice l."""
    b = c.slice_blocks()
    mid = np.eye(2 ** (l - 1))
    out = np.zeros((2 ** (l + 1), 2 ** (l + 1)), dtype=complex)
    for a in range(2):
        for d in range(2):
            unit = np.zeros((2, 2))
            unit[a, d] = 1.0
            out += mc.kron(b[a, d], mid, unit)
    return out


@dataclass
class FullStateSimulator:
    """Unitary histories for every parameter block plus the initial blocks."""

    N: int
    blocks: np.ndarray        # (m, 2, 2) initial atom blocks (weights included)
    compact: list             # compact[i][l] = U~(l) for parameter i
    lam: float
    coeffs: tuple = ()

    @property
    def size(self) -> int:
        return self.blocks.shape[0]

    def unitary(self, l: int, i: int = 0) -> np.ndarray:
        """U(l) on the full (atom, N slices) space."""
        return np.kron(self.compact[i][l], np.eye(2 ** (self.N - l)))

    def initial_full(self, i: int, n: int | None = None) -> np.ndarray:
        n = self.N if n is None else n
        vac = np.ones((1, 1))
        for _ in range(n):
            vac = np.kron(vac, VACUUM_PROJ)
        return np.kron(self.blocks[i], vac)

    def evolved(self, l: int, i: int) -> np.ndarray:
        """U~(l) (block_i (x) vacuum^l) U~(l)*."""
        u = self.compact[i][l]
        return u @ self.initial_full(i, l) @ mc.dagger(u)


def evolve_full(c, N: int, rho=None) -> FullStateSimulator:
    """Accumulate U(l) = M_l U(l-1) for l = 1..N.

    ``c`` is an InteractionCoefficients (single parameter) or a
    ParameterEnsemble; ``rho`` the initial atom state (2x2) or block state.
    """
    if not (isinstance(N, (int, np.integer)) and 0 <= N):
        raise InvalidInputError("N must be a nonnegative integer")
    if N > MAX_N:
        raise CapacityError(f"full-space oracle limited to N <= {MAX_N}")
    coeffs = [c] if isinstance(c, InteractionCoefficients) else list(c.coeffs)
    if rho is None:
        blocks = np.stack([mc.PROJ_PLUS / len(coeffs)] * len(coeffs))
    elif isinstance(rho, BlockDensityMatrix):
        blocks = rho.blocks
    else:
        blocks = np.asarray(rho, dtype=complex)
        if blocks.ndim == 2:
            blocks = blocks[None]
    if blocks.shape != (len(coeffs), 2, 2):
        raise InvalidInputError("initial blocks do not match the number of parameters")
    compact = []
    for co in coeffs:
        us = [np.eye(2, dtype=complex)]
        for l in range(1, N + 1):
            us.append(embed_slice_unitary(co, l) @ np.kron(us[-1], np.eye(2)))
        compact.append(us)
    return FullStateSimulator(N=int(N), blocks=np.array(blocks), compact=compact, lam=coeffs[0].lam,
                              coeffs=tuple(coeffs))


def unitarity_residual(sim: FullStateSimulator) -> float:
    worst = 0.0
    for i in range(sim.size):
        u = sim.compact[i][sim.N]
        worst = max(worst, float(np.max(np.abs(mc.dagger(u) @ u - np.eye(u.shape[0])))))
    return worst


def conditional_blocks(sim: FullStateSimulator, l: int) -> np.ndarray:
    """Unnormalized conditional atom states S_r, shape (2^l, m, 2, 2).

    S_r[i] = Tr_field[(I (x) P_r) U(l)(block_i (x) vac)U(l)*] restricted to the
    atom; under the reference measure this equals 2^{-l} times the filter state.
    """
    if not 0 <= l <= sim.N:
        raise InvalidInputError("record length out of range")
    h = hadamard_power(l)
    out = np.empty((2**l, sim.size, 2, 2), dtype=complex)
    for i in range(sim.size):
        sig = sim.evolved(l, i).reshape(2, 2**l, 2, 2**l)
        out[:, i] = np.einsum("rb,sbtc,rc->rst", h, sig, h)
    return out


def record_distribution(sim: FullStateSimulator) -> dict:
    """Probability of every record of length N, keyed by sign tuple."""
    s = conditional_blocks(sim, sim.N)
    probs = np.real(np.trace(s, axis1=2, axis2=3)).sum(axis=1)
    return {rec: float(probs[k]) for k, rec in enumerate(all_records(sim.N))}


def conditional_expectation(sim: FullStateSimulator, X, record) -> float:
    """E[X at time l | first l outcomes = record] by the full-space formula."""
    signs = as_signs(record)
    l = len(signs)
    x = mc.as_matrix(X)
    s = conditional_blocks(sim, l)[record_index(signs)].sum(axis=0)
    den = float(np.real(np.trace(s)))
    if den <= PROB_FLOOR:
        raise UndefinedConditionalError(f"record {signs} has probability zero")
    return float(np.real(np.trace(s @ x))) / den


# --- risk-weighted costs -------------------------------------------------------

def record_function_operator(values, l: int, N: int) -> np.ndarray:
    """sum_r A_r (x) P_r (x) I on the full space, for atom matrices A_r indexed by record."""
    values = np.asarray(values, dtype=complex)  # (2^l, 2, 2)
    L = 2**l
    mid = np.zeros((2, L, 2, L), dtype=complex)
    idx = np.arange(L)
    mid[:, idx, :, idx] = values
    w = np.kron(np.eye(2), hadamard_power(l))
    op = w @ mid.reshape(2 * L, 2 * L) @ w
    return np.kron(op, np.eye(2 ** (N - l)))


def _policy_table(policy, l: int) -> np.ndarray:
    return np.array([policy(rec) for rec in all_records(l)], dtype=float)


def risk_weights_full(sim: FullStateSimulator, policy, rp: RiskParams, obs: Observable, i: int):
    """R(N) and the terminal factor for parameter block i, both full-space."""
    N, lam = sim.N, sim.lam
    D = 2 ** (N + 1)
    r = np.eye(D, dtype=complex)
    for l in range(1, N):
        u = _policy_table(policy, l)
        e = record_function_operator(obs.exp_K(u, 0.5 * rp.mu1 * lam**2), l, N)
        ul = sim.unitary(l, i)
        r = (mc.dagger(ul) @ e @ ul) @ r
    u = _policy_table(policy, N)
    t = record_function_operator(obs.exp_K(u, rp.mu2), N, N)
    un = sim.unitary(N, i)
    return r, mc.dagger(un) @ t @ un


def cost_operator(sim, policy, rp, obs, i: int) -> np.ndarray:
    """Z_i = R(N)* exp(mu2 |j_N(X) - u_N|^2) R(N) for parameter block i."""
    r, term = risk_weights_full(sim, policy, rp, obs, i)
    return mc.dagger(r) @ term @ r


def risk_cost_full(sim: FullStateSimulator, estimates, rp: RiskParams, obs: Observable) -> float:
    """The risk-sensitive cost F evaluated with full-space operator products."""
    policy = as_policy(estimates)
    total = 0.0
    for i in range(sim.size):
        z = cost_operator(sim, policy, rp, obs, i)
        total += float(np.real(np.trace(sim.initial_full(i) @ z)))
    return total


def verify_robustness1(sim_true: FullStateSimulator, sim_nom: FullStateSimulator, estimates,
                       rp: RiskParams, obs: Observable):
    """Both sides of  P_true[log Z] <= log P_nom[Z] + R(rho_true || rho_nom)."""
    from .robustness import relative_entropy

    if sim_true.N > 6:
        raise CapacityError("robustness check limited to N <= 6")
    policy = as_policy(estimates)
    lhs = 0.0
    nom = 0.0
    for i in range(sim_true.size):
        z = cost_operator(sim_true, policy, rp, obs, i)
        w, v = np.linalg.eigh(0.5 * (z + mc.dagger(z)))
        log_z = (v * np.log(w)) @ mc.dagger(v)
        lhs += float(np.real(np.trace(sim_true.initial_full(i) @ log_z)))
    for i in range(sim_nom.size):
        z = cost_operator(sim_nom, policy, rp, obs, i)
        nom += float(np.real(np.trace(sim_nom.initial_full(i) @ z)))
    ent = relative_entropy(BlockDensityMatrix(sim_true.blocks, validate=False),
                           BlockDensityMatrix(sim_nom.blocks, validate=False))
    rhs = float(np.log(nom)) + ent.value
    return lhs, rhs


def weighted_evolution_check(sim: FullStateSimulator, estimates, rp: RiskParams, obs: Observable, X) -> tuple:
    """P[U^mu(N)* X U^mu(N)] and P[V^mu(N)* X V^mu(N)] for a full-space X."""
    policy = as_policy(estimates)
    N, lam = sim.N, sim.lam
    D = 2 ** (N + 1)
    x = np.asarray(X, dtype=complex)
    lhs = rhs = 0.0
    for i in range(sim.size):
        r, _ = risk_weights_full(sim, policy, rp, obs, i)
        umu = sim.unitary(N, i) @ r
        co = sim.coeffs[i]
        v = np.eye(D, dtype=complex)
        for l in range(1, N + 1):
            if l >= 2:
                u = _policy_table(policy, l - 1)
                e = record_function_operator(obs.exp_K(u, 0.5 * rp.mu1 * lam**2), l - 1, N)
            else:
                e = np.eye(D, dtype=complex)
            dw = mc.kron(np.eye(2), np.eye(2 ** (l - 1)), lam * mc.SIGMA_X, np.eye(2 ** (N - l)))
            step = (np.kron(np.eye(2) + lam**2 * co.Mo, np.eye(2**N))
                    + np.kron(co.Mp, np.eye(2**N)) @ dw)
            v = step @ e @ v
        rho = sim.initial_full(i)
        lhs += float(np.real(np.trace(rho @ mc.dagger(umu) @ x @ umu)))
        rhs += float(np.real(np.trace(rho @ mc.dagger(v) @ x @ v)))
    return lhs, rhs

