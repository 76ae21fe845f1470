"""Relative entropy, the variational duality behind the robust bounds, and the
per-step conditional error bound.

States on parameter (x) atom are block diagonal, so ``R(rho || rho')`` splits
into a sum over blocks; each block needs only a 2x2 eigendecomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import matcore as mc
from .errors import InvalidInputError
from .filter import FilterState, Observable, RiskParams, total_trace
from .model import BlockDensityMatrix

NORM_TOL = 1e-9


@dataclass(frozen=True)
class EntropyResult:
    """Relative entropy in nats. ``infinite`` marks a support violation."""

    value: float
    infinite: bool = False
    support_defect: float = 0.0

    def __float__(self):
        return self.value


def _as_blocks(x) -> np.ndarray:
    if isinstance(x, BlockDensityMatrix):
        return x.blocks
    if isinstance(x, FilterState):
        return x.blocks
    a = np.asarray(x, dtype=complex)
    return a[None] if a.ndim == 2 else a


def block_relative_entropy(rho: np.ndarray, rho_prime: np.ndarray, tol_supp: float | None = None):
    """Relative entropy of normalized block states, batched over leading axes.

    ``rho`` and ``rho_prime`` have shape (..., m, d, d). Returns
    (value, defect) arrays of shape (...); value is +inf where the support
    condition fails.
    """
    w, q = np.linalg.eigh(rho)
    wp, qp = np.linalg.eigh(rho_prime)
    if tol_supp is None:
        scale = np.max(np.abs(wp), axis=(-2, -1), keepdims=True)
        tol = mc.TOL_SUPP_REL * scale
        tol_mass = mc.TOL_SUPP_REL * np.maximum(np.max(np.abs(w), axis=(-2, -1)), 1e-300)
    else:
        tol = np.asarray(tol_supp)
        tol_mass = np.asarray(tol_supp)
    # sum w log w over the support of rho
    wpos = np.where(w > 0, w, 1.0)
    neg_ent = np.sum(np.where(w > 0, w * np.log(wpos), 0.0), axis=(-2, -1))
    # diagonal of rho in the eigenbasis of rho'
    diag = np.real(np.einsum("...ji,...jk,...ki->...i", np.conj(qp), rho, qp))
    inside = wp > tol
    logp = np.log(np.where(inside, wp, 1.0))
    cross = np.sum(np.where(inside, diag * logp, 0.0), axis=(-2, -1))
    defect = np.sum(np.where(inside, 0.0, np.clip(diag, 0.0, None)), axis=(-2, -1))
    value = neg_ent - cross
    value = np.where(defect > tol_mass, np.inf, value)
    return value, defect


def relative_entropy(rho, rho_prime, tol_supp: float | None = None) -> EntropyResult:
    """R(rho || rho') = Tr[rho (log rho - log rho')] on supports, +inf otherwise."""
    a = _as_blocks(rho)
    b = _as_blocks(rho_prime)
    if a.shape != b.shape:
        raise InvalidInputError("states must have the same block structure")
    for name, x in (("rho", a), ("rho_prime", b)):
        if not np.all(np.isfinite(x)):
            raise InvalidInputError(f"{name} has non-finite entries")
        tr = float(np.real(np.trace(x, axis1=-2, axis2=-1).sum()))
        if abs(tr - 1.0) > NORM_TOL:
            raise InvalidInputError(f"{name} must be normalized (trace {tr})")
        if not all(mc.is_psd(blk) for blk in x):
            raise InvalidInputError(f"{name} must be positive semidefinite")
    value, defect = block_relative_entropy(a, b, tol_supp)
    value, defect = float(value), float(defect)
    if math.isinf(value):
        return EntropyResult(math.inf, True, defect)
    return EntropyResult(value, False, defect)


def _dense(x) -> np.ndarray:
    blocks = _as_blocks(x)
    if blocks.shape[0] == 1:
        return blocks[0]
    return BlockDensityMatrix(blocks, validate=False).to_dense()


def entropy_additivity_check(a, a_prime, b, b_prime) -> float:
    """|R(a (x) b || a' (x) b') - R(a || a') - R(b || b')| on dense matrices."""
    a, a_prime, b, b_prime = (_dense(x) for x in (a, a_prime, b, b_prime))
    joint = relative_entropy(np.kron(a, b), np.kron(a_prime, b_prime))
    parts = relative_entropy(a, a_prime).value + relative_entropy(b, b_prime).value
    if joint.infinite or math.isinf(parts):
        return 0.0 if (joint.infinite and math.isinf(parts)) else math.inf
    return abs(joint.value - parts)


# --- duality ------------------------------------------------------------------

class DualityResult(NamedTuple):
    lhs: float
    rhs: float
    maximizer_gap: float
    worst_excess: float  # max over random rho of Tr(rho A) - R(rho||rho') - lhs


def _support_compress(a: np.ndarray, rho_prime: np.ndarray):
    w, v = mc.eig_hermitian(rho_prime)
    keep = w > mc.support_tolerance(w)
    basis = v[:, keep]
    return mc.dagger(basis) @ a @ basis, np.diag(w[keep]).astype(complex), basis


def random_density(dim: int, rng, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ mc.dagger(g)
    return rho / np.real(np.trace(rho))


def random_hermitian(dim: int, rng, scale: float = 1.0) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (g + mc.dagger(g))


def duality_check(A, rho_prime, n_random: int = 100, rng=None) -> DualityResult:
    """log Tr e^{A + log rho'} against its variational characterization."""
    a = mc.as_matrix(A)
    rp = mc.as_matrix(rho_prime)
    if not mc.is_hermitian(a):
        raise InvalidInputError("A must be Hermitian")
    a_s, rp_s, basis = _support_compress(a, rp)
    z = mc.mat_exp(a_s + mc.mat_log_psd(rp_s))
    tr_z = float(np.real(np.trace(z)))
    lhs = math.log(tr_z)
    rho_o = basis @ (z / tr_z) @ mc.dagger(basis)
    rho_o = 0.5 * (rho_o + mc.dagger(rho_o))
    rhs = float(np.real(np.trace(rho_o @ a))) - relative_entropy(rho_o, rp).value
    rng = np.random.default_rng(0) if rng is None else rng
    worst = -math.inf
    dim = a.shape[0]
    for _ in range(n_random):
        rho = random_density(dim, rng, rank=int(rng.integers(1, dim + 1)))
        ent = relative_entropy(rho, rp)
        val = -math.inf if ent.infinite else float(np.real(np.trace(rho @ a))) - ent.value
        worst = max(worst, val - lhs)
    return DualityResult(lhs, rhs, abs(lhs - rhs), worst)


def golden_thompson_check(A, rho_prime) -> tuple:
    """(Tr e^{A + log rho'}, Tr e^A rho')."""
    a = mc.as_matrix(A)
    rp = mc.as_matrix(rho_prime)
    w = np.linalg.eigvalsh(rp)
    if np.min(w) <= mc.support_tolerance(w):
        raise InvalidInputError("rho_prime must have full rank")
    lhs = float(np.real(np.trace(mc.mat_exp(a + mc.mat_log_psd(rp)))))
    rhs = float(np.real(np.trace(mc.mat_exp(a) @ rp)))
    return lhs, rhs


# --- conditional error bound ----------------------------------------------------

def error_and_bound(true_blocks: np.ndarray, nom_blocks: np.ndarray, u, mu2: float, obs: Observable):
    """Batched conditional error and its entropy bound.

    Both block stacks have shape (..., m, 2, 2) and need not be normalized.
    Returns (eps, eps_prime) with eps_prime = +inf on support violations.
    """
    t = true_blocks / total_trace(true_blocks)[..., None, None, None]
    n = nom_blocks / total_trace(nom_blocks)[..., None, None, None]
    u = np.asarray(u, dtype=float)
    x = obs.eigenvalues
    pt = obs.spectral_masses(t)
    pn = obs.spectral_masses(n)
    eps = np.sum(pt * (x - u[..., None]) ** 2, axis=-1)
    d = mu2 * (x - u[..., None]) ** 2
    log_term = np.log(np.sum(pn * np.exp(d), axis=-1)) / mu2
    ent, _ = block_relative_entropy(t, n)
    return eps, log_term + ent / mu2


def conditional_error_bound(true_state_l, nom_rs_state_l, u_l: float, rp: RiskParams, obs: Observable):
    """(eps, eps') for one step: the true conditional error and its guaranteed bound."""
    from .filter import _check_trace

    t = _as_blocks(true_state_l)
    n = _as_blocks(nom_rs_state_l)
    if t.shape != n.shape:
        raise InvalidInputError("states must share the block structure")
    _check_trace(total_trace(t))
    _check_trace(total_trace(n))
    eps, eps_prime = error_and_bound(t, n, u_l, rp.mu2, obs)
    return float(eps), float(eps_prime)
