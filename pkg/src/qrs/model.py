"""Physical models: slice interaction coefficients, parameter ensembles, densities.

A model couples a two-level atom to one time slice of the field. Over a slice of
duration ``lam**2`` the joint unitary is written

    M = I + Mpm (x) dLambda + Mp (x) dA* + Mm (x) dA + Mo (x) dt

and the four 2x2 coefficient matrices are what every filter consumes. The
slice factor uses basis (excited, vacuum), so the vacuum is the second basis
vector.

Unknown parameters (coupling strength, emission rate) are handled as a finite
ensemble of candidate values. A state on parameter (x) atom with no
cross-parameter coherences is stored as an ``(m, 2, 2)`` array of
unnormalized blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import matcore as mc
from .errors import InvalidInputError, ModelConstructionError

TOL_DECOMP = 1e-10
TOL_UNITARY = 1e-10


@dataclass(frozen=True)
class HamiltonianSpec:
    """Slice Hamiltonian data. ``lam`` is the square root of the slice duration."""

    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    lam: float

    def __post_init__(self):
        for name in ("L1", "L2", "L3"):
            m = mc.as_matrix(getattr(self, name))
            if m.shape != (2, 2):
                raise InvalidInputError(f"{name} must be 2x2")
            object.__setattr__(self, name, m)
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidInputError("lam must be a positive finite number")
        if not mc.is_hermitian(self.L1) or not mc.is_hermitian(self.L3):
            raise InvalidInputError("L1 and L3 must be Hermitian")

    def generator(self) -> np.ndarray:
        """Hermitian 4x4 exponent of the slice unitary, ordered system (x) slice."""
        lam = self.lam
        d_lambda = mc.SIGMA_PLUS @ mc.SIGMA_MINUS
        d_a = lam * mc.SIGMA_MINUS
        d_t = lam**2 * mc.IDENTITY
        return (
            np.kron(self.L1, d_lambda)
            + np.kron(self.L2, mc.dagger(d_a))
            + np.kron(mc.dagger(self.L2), d_a)
            + np.kron(self.L3, d_t)
        )


@dataclass(frozen=True)
class InteractionCoefficients:
    Mpm: np.ndarray
    Mp: np.ndarray
    Mm: np.ndarray
    Mo: np.ndarray
    lam: float

    def slice_blocks(self) -> np.ndarray:
        """Blocks B[a, b] (each 2x2, acting on the system) of the slice unitary.

        ``M = sum_ab B[a, b] (x) |a><b|`` with slice index 0 = excited,
        1 = vacuum.
        """
        eye = mc.IDENTITY
        lam = self.lam
        blocks = np.empty((2, 2, 2, 2), dtype=complex)
        blocks[0, 0] = eye + self.Mpm + lam**2 * self.Mo
        blocks[0, 1] = lam * self.Mp
        blocks[1, 0] = lam * self.Mm
        blocks[1, 1] = eye + lam**2 * self.Mo
        return blocks

    def slice_unitary(self) -> np.ndarray:
        b = self.slice_blocks()
        out = np.zeros((4, 4), dtype=complex)
        for a in range(2):
            for c in range(2):
                unit = np.zeros((2, 2))
                unit[a, c] = 1.0
                out += np.kron(b[a, c], unit)
        return out

    def kraus(self, sign: int) -> np.ndarray:
        """The update operator I + lam^2 Mo + sign * lam * Mp."""
        return mc.IDENTITY + self.lam**2 * self.Mo + sign * self.lam * self.Mp

    def perturbed(self, **changes) -> "InteractionCoefficients":
        kw = dict(Mpm=self.Mpm, Mp=self.Mp, Mm=self.Mm, Mo=self.Mo, lam=self.lam)
        kw.update(changes)
        return InteractionCoefficients(**kw)


def build_interaction_coeffs(spec: HamiltonianSpec) -> InteractionCoefficients:
    """Exponentiate the slice generator and read off the four coefficients."""
    lam = spec.lam
    m = mc.mat_exp(-1j * spec.generator())
    # reshape to [sys_row, slice_row, sys_col, slice_col]
    t = m.reshape(2, 2, 2, 2)
    b = lambda a, c: t[:, a, :, c]  # noqa: E731
    eye = mc.IDENTITY
    mo = (b(1, 1) - eye) / lam**2
    coeffs = InteractionCoefficients(
        Mpm=b(0, 0) - b(1, 1),
        Mp=b(0, 1) / lam,
        Mm=b(1, 0) / lam,
        Mo=mo,
        lam=lam,
    )
    residual = np.max(np.abs(coeffs.slice_unitary() - m))
    if not np.isfinite(residual) or residual > TOL_DECOMP:
        raise ModelConstructionError(f"decomposition residual {residual:.3e}")
    if check_unitarity(coeffs) > TOL_UNITARY:
        raise ModelConstructionError("slice unitary is not unitary")
    return coeffs


def check_unitarity(c: InteractionCoefficients) -> float:
    """Max-entry norm of M* M - I for the assembled 4x4 slice unitary."""
    m = c.slice_unitary()
    return float(np.max(np.abs(mc.dagger(m) @ m - np.eye(4))))


def unitarity_relation_residual(c: InteractionCoefficients) -> float:
    """Residual of the quadrature relation Mo + Mo* + Mp* Mp + lam^2 Mo* Mo = 0."""
    r = c.Mo + mc.dagger(c.Mo) + mc.dagger(c.Mp) @ c.Mp + c.lam**2 * mc.dagger(c.Mo) @ c.Mo
    return float(np.max(np.abs(r)))


# --- the two atom models -----------------------------------------------------
#
# The coupling operator is written L2 = i * p * sigma with the parameter p
# entering linearly, so that the slice rotation angle is p * lam. This is the
# convention under which the closed-form coefficients below hold.

def dispersive_hamiltonian(g: float, lam: float) -> HamiltonianSpec:
    zero = np.zeros((2, 2), dtype=complex)
    return HamiltonianSpec(zero, 1j * g * mc.SIGMA_Z, zero, lam)


def spontaneous_hamiltonian(e: float, lam: float) -> HamiltonianSpec:
    zero = np.zeros((2, 2), dtype=complex)
    return HamiltonianSpec(zero, 1j * e * mc.SIGMA_MINUS, zero, lam)


def dispersive_closed_form(g: float, lam: float) -> InteractionCoefficients:
    s, c = np.sin(g * lam), np.cos(g * lam)
    return InteractionCoefficients(
        Mpm=np.zeros((2, 2), dtype=complex),
        Mp=(s / lam) * mc.SIGMA_Z,
        Mm=-(s / lam) * mc.SIGMA_Z,
        Mo=((c - 1) / lam**2) * mc.IDENTITY,
        lam=lam,
    )


def spontaneous_closed_form(e: float, lam: float) -> InteractionCoefficients:
    s, c = np.sin(e * lam), np.cos(e * lam)
    return InteractionCoefficients(
        Mpm=(1 - c) * mc.SIGMA_Z,
        Mp=(s / lam) * mc.SIGMA_MINUS,
        Mm=-(s / lam) * mc.SIGMA_PLUS,
        Mo=((c - 1) / lam**2) * (mc.SIGMA_PLUS @ mc.SIGMA_MINUS),
        lam=lam,
    )


HAMILTONIAN_FACTORIES = {
    "dispersive": dispersive_hamiltonian,
    "spontaneous": spontaneous_hamiltonian,
}


@dataclass(frozen=True)
class ParameterEnsemble:
    """Candidate parameter values and the coefficients for each of them."""

    values: tuple
    coeffs: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        if len(vals) == 0 or len(vals) != len(self.coeffs):
            raise InvalidInputError("need one coefficient set per parameter value")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidInputError("parameter values must be strictly increasing")
        lams = {c.lam for c in self.coeffs}
        if len(lams) != 1:
            raise InvalidInputError("all coefficient sets must share lam")

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def lam(self) -> float:
        return self.coeffs[0].lam

    @cached_property
    def kraus_plus(self) -> np.ndarray:
        v = np.stack([c.kraus(+1) for c in self.coeffs])
        v.setflags(write=False)
        return v

    @cached_property
    def kraus_minus(self) -> np.ndarray:
        v = np.stack([c.kraus(-1) for c in self.coeffs])
        v.setflags(write=False)
        return v

    def kraus(self, sign: int) -> np.ndarray:
        return self.kraus_plus if sign > 0 else self.kraus_minus

    def subset(self, indices: Sequence[int]) -> "ParameterEnsemble":
        return ParameterEnsemble([self.values[i] for i in indices], [self.coeffs[i] for i in indices])


def make_ensemble(model: str, values: Sequence[float], lambda2: float) -> ParameterEnsemble:
    """Ensemble for a named model, coefficients obtained by numerical extraction."""
    if model not in HAMILTONIAN_FACTORIES:
        raise InvalidInputError(f"unknown model {model!r}")
    if not (np.isfinite(lambda2) and lambda2 > 0):
        raise InvalidInputError("lambda2 must be positive")
    lam = float(np.sqrt(lambda2))
    factory = HAMILTONIAN_FACTORIES[model]
    return ParameterEnsemble(values, [build_interaction_coeffs(factory(v, lam)) for v in values])


@dataclass(frozen=True)
class BlockDensityMatrix:
    """Block-diagonal state on parameter (x) atom, blocks of shape (m, 2, 2)."""

    blocks: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        b = np.array(self.blocks, dtype=complex)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3 or b.shape[1:] != (2, 2):
            raise InvalidInputError(f"blocks must have shape (m, 2, 2), got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise InvalidInputError("blocks have non-finite entries")
        if self.validate:
            for blk in b:
                if not mc.is_psd(blk):
                    raise InvalidInputError("every block must be Hermitian PSD")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @classmethod
    def product(cls, weights, system) -> "BlockDensityMatrix":
        """diag(weights) (x) system, as blocks."""
        w = np.asarray(weights, dtype=float)
        s = mc.as_matrix(system)
        if w.ndim != 1 or np.any(w < 0):
            raise InvalidInputError("weights must be a nonnegative vector")
        return cls(w[:, None, None] * s[None])

    @property
    def size(self) -> int:
        return self.blocks.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.real(np.trace(self.blocks, axis1=1, axis2=2))

    def total_trace(self) -> float:
        return float(np.sum(self.weights))

    def normalized(self) -> "BlockDensityMatrix":
        tr = self.total_trace()
        if tr <= 0:
            raise InvalidInputError("cannot normalize a state with zero trace")
        return BlockDensityMatrix(self.blocks / tr, validate=False)

    def to_dense(self) -> np.ndarray:
        m = self.size
        out = np.zeros((2 * m, 2 * m), dtype=complex)
        for i, blk in enumerate(self.blocks):
            out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = blk
        return out

    def subset(self, indices: Sequence[int]) -> "BlockDensityMatrix":
        return BlockDensityMatrix(self.blocks[list(indices)], validate=False)


# --- densities used by the numerical examples --------------------------------

SYSTEM_PLUS = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
SYSTEM_HALF_COHERENT = np.array([[0.5, 0.25], [0.25, 0.5]], dtype=complex)

FIG1_VALUES = tuple(0.4 + 0.03 * i for i in range(1, 21))
FIG1_TRUE_WEIGHTS = (0.0, 0.01, 0.04, 0.1, 0.7, 0.1, 0.04, 0.01) + (0.0,) * 12
FIG3_VALUES = tuple(0.2 + 0.04 * i for i in range(1, 21))
FIG3_TRUE_WEIGHTS = (0.0,) * 14 + (0.01, 0.04, 0.9, 0.04, 0.01, 0.0)
UNIFORM_20 = (1.0 / 20,) * 20
DEFAULT_LAMBDA2 = 0.001


def build_true_nominal_fig1(lambda2: float = DEFAULT_LAMBDA2):
    ens = make_ensemble("dispersive", FIG1_VALUES, lambda2)
    true = BlockDensityMatrix.product(FIG1_TRUE_WEIGHTS, SYSTEM_PLUS)
    nominal = BlockDensityMatrix.product(UNIFORM_20, SYSTEM_HALF_COHERENT)
    return true, nominal, ens


def beta_weights(beta: float) -> np.ndarray:
    """Parameter weights interpolating the fig1 true (beta=0) and uniform (beta=1) laws."""
    if not (0.0 <= beta <= 1.0):
        raise InvalidInputError("beta must lie in [0, 1]")
    w = np.full(20, 0.05 * beta)
    w[1] = w[7] = 0.04 * beta + 0.01
    w[2] = w[6] = 0.01 * beta + 0.04
    w[3] = w[5] = -0.05 * beta + 0.1
    w[4] = -0.65 * beta + 0.7
    return w


def build_beta_nominal(beta: float) -> BlockDensityMatrix:
    w = beta_weights(beta)
    off = 0.5 - 0.25 * beta
    system = np.array([[0.5, off], [off, 0.5]], dtype=complex)
    return BlockDensityMatrix.product(w, system)


def build_true_nominal_fig3(lambda2: float = DEFAULT_LAMBDA2):
    ens = make_ensemble("spontaneous", FIG3_VALUES, lambda2)
    true = BlockDensityMatrix.product(FIG3_TRUE_WEIGHTS, SYSTEM_PLUS)
    nominal = BlockDensityMatrix.product(UNIFORM_20, SYSTEM_PLUS)
    return true, nominal, ens


# --- JSON model specs ---------------------------------------------------------

def parse_complex_matrix(data) -> np.ndarray:
    """2x2 complex matrix from [[re, im], ...] pairs (flat row-major or nested)."""
    a = np.asarray(data, dtype=float)
    if a.shape == (4, 2):
        a = a.reshape(2, 2, 2)
    if a.shape != (2, 2, 2):
        raise InvalidInputError(f"complex 2x2 matrix expected as [re, im] pairs, got shape {a.shape}")
    return a[..., 0] + 1j * a[..., 1]


def format_complex_matrix(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


PRESETS = {
    "dispersive": dict(
        param_values=FIG1_VALUES, true_weights=FIG1_TRUE_WEIGHTS, nominal_weights=UNIFORM_20,
        true_system=SYSTEM_PLUS, nominal_system=SYSTEM_HALF_COHERENT,
    ),
    "spontaneous": dict(
        param_values=FIG3_VALUES, true_weights=FIG3_TRUE_WEIGHTS, nominal_weights=UNIFORM_20,
        true_system=SYSTEM_PLUS, nominal_system=SYSTEM_PLUS,
    ),
}


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build the ensemble and the true/nominal states."""

    model: str
    lambda2: float
    param_values: tuple
    true_weights: tuple
    nominal_weights: tuple
    true_system: np.ndarray
    nominal_system: np.ndarray
    hamiltonians: tuple | None = None  # custom models: (L1, L2, L3) per value

    def __post_init__(self):
        if self.model not in ("dispersive", "spontaneous", "custom"):
            raise InvalidInputError(f"unknown model {self.model!r}")
        if not (isinstance(self.lambda2, (int, float)) and np.isfinite(self.lambda2) and self.lambda2 > 0):
            raise InvalidInputError("lambda2 must be a positive number")
        m = len(self.param_values)
        if m == 0 or len(self.true_weights) != m or len(self.nominal_weights) != m:
            raise InvalidInputError("param_values and weight vectors must have equal nonzero length")
        for name in ("true_weights", "nominal_weights"):
            w = np.asarray(getattr(self, name), dtype=float)
            if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1) > 1e-9:
                raise InvalidInputError(f"{name} must be a probability vector")
        for name in ("true_system", "nominal_system"):
            s = mc.as_matrix(getattr(self, name))
            if s.shape != (2, 2) or not mc.is_psd(s) or abs(np.trace(s) - 1) > 1e-9:
                raise InvalidInputError(f"{name} must be a 2x2 density matrix")
        if self.model == "custom":
            if self.hamiltonians is None or len(self.hamiltonians) != m:
                raise InvalidInputError("custom model needs one hamiltonian per parameter value")

    @classmethod
    def preset(cls, model: str, lambda2: float = DEFAULT_LAMBDA2) -> "ModelConfig":
        if model not in PRESETS:
            raise InvalidInputError(f"no preset for model {model!r}")
        return cls(model=model, lambda2=lambda2, **PRESETS[model])

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        model = d.get("model", "dispersive")
        base = dict(PRESETS.get(model, {}))
        for key in ("param_values", "true_weights", "nominal_weights"):
            if key in d:
                base[key] = tuple(float(x) for x in d[key])
        for key in ("true_system", "nominal_system"):
            if key in d:
                base[key] = parse_complex_matrix(d[key])
        hams = None
        if model == "custom":
            hams = tuple(
                tuple(parse_complex_matrix(h[k]) for k in ("L1", "L2", "L3"))
                for h in d.get("hamiltonians", [])
            )
        missing = [k for k in ("param_values", "true_weights", "nominal_weights", "true_system", "nominal_system") if k not in base]
        if missing:
            raise InvalidInputError(f"model spec missing fields: {missing}")
        return cls(model=model, lambda2=float(d.get("lambda2", DEFAULT_LAMBDA2)), hamiltonians=hams, **base)

    def to_dict(self) -> dict:
        d = {
            "model": self.model,
            "lambda2": self.lambda2,
            "param_values": list(self.param_values),
            "true_weights": list(self.true_weights),
            "nominal_weights": list(self.nominal_weights),
            "true_system": format_complex_matrix(self.true_system),
            "nominal_system": format_complex_matrix(self.nominal_system),
        }
        if self.hamiltonians is not None:
            d["hamiltonians"] = [
                {k: format_complex_matrix(x) for k, x in zip(("L1", "L2", "L3"), h)}
                for h in self.hamiltonians
            ]
        return d

    def ensemble(self) -> ParameterEnsemble:
        if self.model == "custom":
            lam = float(np.sqrt(self.lambda2))
            coeffs = [build_interaction_coeffs(HamiltonianSpec(*h, lam)) for h in self.hamiltonians]
            return ParameterEnsemble(self.param_values, coeffs)
        return make_ensemble(self.model, self.param_values, self.lambda2)

    def true_state(self) -> BlockDensityMatrix:
        return BlockDensityMatrix.product(self.true_weights, self.true_system)

    def nominal_state(self) -> BlockDensityMatrix:
        return BlockDensityMatrix.product(self.nominal_weights, self.nominal_system)


def beta_model_config(beta: float, lambda2: float = DEFAULT_LAMBDA2) -> ModelConfig:
    """Dispersive preset whose nominal law is the beta-interpolated family."""
    nominal = build_beta_nominal(beta)
    off = 0.5 - 0.25 * beta
    d = dict(PRESETS["dispersive"])
    d.update(
        nominal_weights=tuple(nominal.weights),
        nominal_system=np.array([[0.5, off], [off, 0.5]], dtype=complex),
    )
    return ModelConfig(model="dispersive", lambda2=lambda2, **d)
