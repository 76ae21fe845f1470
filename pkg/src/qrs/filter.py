"""Risk-neutral and risk-sensitive unnormalized filters and their estimators.

States are stacks of 2x2 blocks, one per candidate parameter value. A step
with outcome ``dy = sign * lam`` maps every block to ``V H V*`` with
``V = I + lam^2 Mo + sign * lam * Mp``. For the risk-neutral filter ``H`` is the
block itself; the risk-sensitive filter first weights it by
``exp(mu1 lam^2 K(u) / 2)`` on both sides, ``K(u) = (X - u)^2``.

The array kernels (``mm2``, ``sandwich``, ``total_trace`` ...) accept any
leading batch shape and are shared by the single-trajectory API and the
batched experiment engine, so both produce bit-identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import matcore as mc
from .errors import DegenerateStateError, InvalidInputError
from .model import BlockDensityMatrix, ParameterEnsemble

RESCALE_LOW = 1e-250
RESCALE_HIGH = 1e250
TRACE_FLOOR = 1e-300
GRID_POINTS = 201
GOLDEN_TOL = 1e-8
SEARCH_MARGIN = 1.0
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


# --- elementwise 2x2 kernels --------------------------------------------------

def mm2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of stacked 2x2 matrices, written out entry by entry."""
    a00, a01, a10, a11 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
    b00, b01, b10, b11 = b[..., 0, 0], b[..., 0, 1], b[..., 1, 0], b[..., 1, 1]
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.empty(shape, dtype=np.result_type(a, b))
    out[..., 0, 0] = a00 * b00 + a01 * b10
    out[..., 0, 1] = a00 * b01 + a01 * b11
    out[..., 1, 0] = a10 * b00 + a11 * b10
    out[..., 1, 1] = a10 * b01 + a11 * b11
    return out


def sandwich(v: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """v rho v* for stacked 2x2 matrices."""
    out = mm2(mm2(v, rho), np.conj(np.swapaxes(v, -1, -2)))
    # the result is Hermitian in exact arithmetic; pin the diagonal to reals
    out[..., 0, 0] = out[..., 0, 0].real
    out[..., 1, 1] = out[..., 1, 1].real
    out[..., 1, 0] = np.conj(out[..., 0, 1])
    return out


def block_traces(blocks: np.ndarray) -> np.ndarray:
    return blocks[..., 0, 0].real + blocks[..., 1, 1].real


def total_trace(blocks: np.ndarray) -> np.ndarray:
    """Sum of block traces over the parameter axis (second to last batch axis)."""
    return np.sum(block_traces(blocks), axis=-1)


def pairing(blocks: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum over blocks of Re Tr(block X) for Hermitian X."""
    t = (
        blocks[..., 0, 0].real * x[0, 0].real
        + blocks[..., 1, 1].real * x[1, 1].real
        + 2.0 * (blocks[..., 0, 1] * x[1, 0]).real
    )
    return np.sum(t, axis=-1)


# --- value types --------------------------------------------------------------

@dataclass(frozen=True)
class RiskParams:
    mu1: float
    mu2: float

    def __post_init__(self):
        if not (np.isfinite(self.mu1) and self.mu1 >= 0):
            raise InvalidInputError("mu1 must be >= 0")
        if not (np.isfinite(self.mu2) and self.mu2 > 0):
            raise InvalidInputError("mu2 must be > 0")


@dataclass(frozen=True)
class Observable:
    """The estimated observable X and helpers built on its spectrum."""

    X: np.ndarray = field(compare=False)

    def __post_init__(self):
        x = mc.as_matrix(self.X)
        if x.shape != (2, 2) or not mc.is_hermitian(x):
            raise InvalidInputError("observable must be a 2x2 Hermitian matrix")
        object.__setattr__(self, "X", 0.5 * (x + mc.dagger(x)))

    @cached_property
    def _eig(self):
        return np.linalg.eigh(self.X)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eig[1]

    def K(self, u) -> np.ndarray:
        """(X - u)^2, stacked over the shape of ``u``."""
        return self.spectral_function(lambda x, uu: (x - uu) ** 2, u)

    def exp_K(self, u, coef: float) -> np.ndarray:
        """exp(coef * K(u)) through the spectrum of X."""
        return self.spectral_function(lambda x, uu: np.exp(coef * (x - uu) ** 2), u)

    def spectral_function(self, func, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        w, q = self._eig
        vals = func(w, u[..., None])  # (..., 2)
        out = np.zeros(u.shape + (2, 2), dtype=complex)
        for k in range(2):
            out = out + vals[..., k, None, None] * np.outer(q[:, k], np.conj(q[:, k]))
        return out

    def spectral_masses(self, blocks: np.ndarray) -> np.ndarray:
        """p_k = sum over blocks of <q_k| block |q_k>, shape (..., 2)."""
        q = self.eigenvectors
        out = []
        for k in range(2):
            v = q[:, k]
            proj = np.outer(v, np.conj(v))
            out.append(pairing(blocks, proj))
        return np.stack(out, axis=-1)


OBSERVABLES = {
    "sigma_x": mc.SIGMA_X,
    "sigma_y": mc.SIGMA_Y,
    "sigma_z": mc.SIGMA_Z,
}


def observable_by_name(name: str) -> Observable:
    if name not in OBSERVABLES:
        raise InvalidInputError(f"unknown observable {name!r}; choose from {sorted(OBSERVABLES)}")
    return Observable(OBSERVABLES[name])


@dataclass(frozen=True)
class FilterState:
    """Unnormalized filter state after ``step`` outcomes.

    The physical state is ``exp(log_scale) * state``; the scale is only
    tracked so that very long runs cannot underflow.
    """

    state: BlockDensityMatrix
    step: int = 0
    last_estimate: float | None = None
    log_scale: float = 0.0

    @classmethod
    def initial(cls, rho: BlockDensityMatrix) -> "FilterState":
        return cls(state=rho, step=0)

    @property
    def blocks(self) -> np.ndarray:
        return self.state.blocks

    def with_estimate(self, u: float) -> "FilterState":
        return replace(self, last_estimate=float(u))

    def total_trace(self) -> float:
        return float(total_trace(self.blocks))


def outcome_sign(dy: float, lam: float) -> int:
    if not np.isfinite(dy) or abs(abs(dy) - lam) > 1e-9 * lam:
        raise InvalidInputError(f"outcome must be +lam or -lam (lam={lam}), got {dy}")
    return 1 if dy > 0 else -1


def rescale(blocks: np.ndarray, log_scale):
    """Renormalize stacks whose total trace left [RESCALE_LOW, RESCALE_HIGH]."""
    tr = total_trace(blocks)
    bad = (tr < RESCALE_LOW) | (tr > RESCALE_HIGH)
    if not np.any(bad):
        return blocks, log_scale
    factor = np.where(bad & (tr > 0), tr, 1.0)
    blocks = blocks / factor[..., None, None, None]
    return blocks, log_scale + np.log(factor)


def risk_weight(obs: Observable, u, mu1: float, lam: float) -> np.ndarray:
    """exp(mu1 lam^2 K(u) / 2)."""
    return obs.exp_K(u, 0.5 * mu1 * lam**2)


def _advance(s: FilterState, blocks: np.ndarray) -> FilterState:
    blocks, log_scale = rescale(blocks, s.log_scale)
    return FilterState(
        state=BlockDensityMatrix(blocks, validate=False),
        step=s.step + 1,
        last_estimate=None,
        log_scale=float(log_scale),
    )


def rn_step(s: FilterState, c: ParameterEnsemble, dy: float) -> FilterState:
    """One risk-neutral update."""
    sign = outcome_sign(dy, c.lam)
    return _advance(s, sandwich(c.kraus(sign), s.blocks))


def rs_step(s: FilterState, c: ParameterEnsemble, rp: RiskParams, obs: Observable,
            u_prev: float | None, dy: float) -> FilterState:
    """One risk-sensitive update; ``u_prev=None`` means no weighting (first step)."""
    sign = outcome_sign(dy, c.lam)
    h = s.blocks
    if u_prev is not None and rp.mu1 != 0.0:
        h = sandwich(risk_weight(obs, u_prev, rp.mu1, c.lam), h)
    return _advance(s, sandwich(c.kraus(sign), h))


# --- expanded forms (cross-check only) ----------------------------------------

def expanded_rn_step(blocks: np.ndarray, c: ParameterEnsemble, dy: float) -> np.ndarray:
    """rho + Lbar(rho) lam^2 + Jbar(rho) dy, term by term."""
    return _expanded(blocks, blocks, c, dy)


def expanded_rs_step(blocks: np.ndarray, c: ParameterEnsemble, rp: RiskParams,
                     obs: Observable, u_prev: float | None, dy: float) -> np.ndarray:
    h = blocks
    if u_prev is not None:
        e = risk_weight(obs, u_prev, rp.mu1, c.lam)
        h = np.einsum("ij,mjk,kl->mil", e, blocks, e)
    return _expanded(blocks, h, c, dy)


def _expanded(rho, h, c: ParameterEnsemble, dy):
    lam2 = c.lam**2
    out = np.empty_like(rho)
    for i, co in enumerate(c.coeffs):
        mp, mo = co.Mp, co.Mo
        mps, mos = mc.dagger(mp), mc.dagger(mo)
        hi = h[i]
        lbar = mp @ hi @ mps + lam2 * mo @ hi @ mos + mo @ hi + hi @ mos + (hi - rho[i]) / lam2
        jbar = lam2 * mp @ hi @ mos + lam2 * mo @ hi @ mps + mp @ hi + hi @ mps
        out[i] = rho[i] + lbar * lam2 + jbar * dy
    return out


# --- estimators ---------------------------------------------------------------

def _check_trace(tr):
    tr = np.asarray(tr)
    if np.any(~np.isfinite(tr)) or np.any(tr <= TRACE_FLOOR):
        raise DegenerateStateError("filter state has zero total trace")


def estimate_blocks(blocks: np.ndarray, x: np.ndarray) -> np.ndarray:
    tr = total_trace(blocks)
    _check_trace(tr)
    return pairing(blocks, x) / tr


def estimate(s: FilterState | BlockDensityMatrix | np.ndarray, X) -> float:
    """Normalized expectation sum_i Tr(block_i X) / sum_i Tr(block_i)."""
    blocks = s.blocks if hasattr(s, "blocks") else np.asarray(s, dtype=complex)
    x = mc.as_matrix(X)
    if not mc.is_hermitian(x):
        raise InvalidInputError("estimated observable must be Hermitian")
    return float(estimate_blocks(blocks, x))


def _risk_objective(u, p_hat, x, mu2):
    """log of G(u)/G_total, evaluated without cancellation for small mu2."""
    em = np.expm1(mu2 * (x - u[..., None]) ** 2)
    acc = np.zeros(em.shape[:-1])
    for j in range(x.size):
        acc = acc + p_hat[..., j] * em[..., j]
    return np.log1p(acc)


def minimize_risk(masses: np.ndarray, eigenvalues: np.ndarray, mu2: float) -> np.ndarray:
    """argmin_u sum_k masses_k exp(mu2 (x_k - u)^2), batched over leading axes.

    Grid search on [x_min - 1, x_max + 1] (first minimizer wins ties) followed
    by golden-section refinement of the bracketing grid cell.
    """
    masses = np.clip(np.asarray(masses, dtype=float), 0.0, None)
    tot = np.sum(masses, axis=-1, keepdims=True)
    _check_trace(tot)
    p_hat = masses / tot
    x = np.asarray(eigenvalues, dtype=float)
    lo_dom, hi_dom = x.min() - SEARCH_MARGIN, x.max() + SEARCH_MARGIN
    grid = np.linspace(lo_dom, hi_dom, GRID_POINTS)
    # evaluate the objective on the grid: shape batch + (GRID_POINTS,)
    d = mu2 * (x[None, :] - grid[:, None]) ** 2  # (G, K)
    em = np.expm1(d)
    acc = np.zeros(p_hat.shape[:-1] + (GRID_POINTS,))
    for j in range(x.size):
        acc = acc + p_hat[..., j, None] * em[:, j]
    vals = np.log1p(acc)
    k = np.argmin(vals, axis=-1)
    step = grid[1] - grid[0]
    a = np.maximum(grid[k] - step, lo_dom)
    b = np.minimum(grid[k] + step, hi_dom)
    c = b - _INVPHI * (b - a)
    e = a + _INVPHI * (b - a)
    fc = _risk_objective(c, p_hat, x, mu2)
    fe = _risk_objective(e, p_hat, x, mu2)
    n_iter = int(math.ceil(math.log(GOLDEN_TOL / (2 * step)) / math.log(_INVPHI))) + 1
    for _ in range(n_iter):
        left = fc <= fe  # minimizer lies in [a, e]
        a, b = np.where(left, a, c), np.where(left, e, b)
        c, e, fc, fe = (
            np.where(left, b - _INVPHI * (b - a), e),
            np.where(left, c, a + _INVPHI * (b - a)),
            np.where(left, 0.0, fe),
            np.where(left, fc, 0.0),
        )
        new = np.where(left, c, e)
        fnew = _risk_objective(new, p_hat, x, mu2)
        fc = np.where(left, fnew, fc)
        fe = np.where(left, fe, fnew)
    u = 0.5 * (a + b)
    # the grid point itself may beat the refined point on flat objectives
    fg = np.take_along_axis(vals, k[..., None], axis=-1)[..., 0]
    fu = _risk_objective(u, p_hat, x, mu2)
    return np.where(fg < fu, grid[k], u)


def risk_functional(blocks: np.ndarray, obs: Observable, u, mu2: float) -> np.ndarray:
    """sum_i Tr[block_i exp(mu2 K(u))]."""
    p = obs.spectral_masses(blocks)
    u = np.asarray(u, dtype=float)
    return np.sum(p * np.exp(mu2 * (obs.eigenvalues - u[..., None]) ** 2), axis=-1)


def suboptimal_estimate(s: FilterState | BlockDensityMatrix | np.ndarray, rp: RiskParams,
                        obs: Observable) -> float:
    """Minimizer over real u of sum_i Tr[block_i exp(mu2 (X - u)^2)]."""
    blocks = s.blocks if hasattr(s, "blocks") else np.asarray(s, dtype=complex)
    _check_trace(total_trace(blocks))
    return float(minimize_risk(obs.spectral_masses(blocks), obs.eigenvalues, rp.mu2))
