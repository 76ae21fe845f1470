"""Monte Carlo harness for the estimation experiments.

Every path draws its record from the true model, and the true risk-neutral
filter, the nominal risk-neutral filter and one or more nominal
risk-sensitive filters all consume that same record. Paths are simulated in
batches of shape (paths, blocks, 2, 2). All arithmetic is elementwise per
path, so a path's numbers do not depend on which batch or worker ran it.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

from . import matcore as mc
from .errors import InvalidInputError
from .filter import (Observable, RiskParams, minimize_risk, observable_by_name, pairing, rescale,
                     risk_weight, sandwich, total_trace)
from .model import (DEFAULT_LAMBDA2, HAMILTONIAN_FACTORIES, InteractionCoefficients, ModelConfig,
                    beta_model_config, build_interaction_coeffs)
from .robustness import error_and_bound
from .sampler import path_uniforms

DEFAULT_OBSERVABLE = {"dispersive": "sigma_z", "spontaneous": "sigma_y", "custom": "sigma_z"}
BATCH_PATHS = 64


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    N: int = 2000
    paths: int = 200
    mu1: float = 0.1
    mu2: float = 0.182
    seed: int = 1
    observable_name: str = "sigma_z"

    def __post_init__(self):
        for name in ("N", "paths", "seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise InvalidInputError(f"{name} must be an integer")
        if self.N < 1:
            raise InvalidInputError("N must be >= 1")
        if self.paths < 1:
            raise InvalidInputError("paths must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        RiskParams(self.mu1, self.mu2)
        observable_by_name(self.observable_name)

    @property
    def risk(self) -> RiskParams:
        return RiskParams(self.mu1, self.mu2)

    @property
    def observable(self) -> Observable:
        return observable_by_name(self.observable_name)

    @cached_property
    def ensemble(self):
        return self.model.ensemble()

    def replace(self, **changes) -> "ExperimentConfig":
        d = dict(model=self.model, N=self.N, paths=self.paths, mu1=self.mu1, mu2=self.mu2,
                 seed=self.seed, observable_name=self.observable_name)
        d.update(changes)
        return ExperimentConfig(**d)

    @classmethod
    def fig1(cls, **kw) -> "ExperimentConfig":
        d = dict(model=ModelConfig.preset("dispersive"), N=2000, paths=200, mu1=0.1, mu2=0.182,
                 observable_name="sigma_z")
        d.update(kw)
        return cls(**d)

    @classmethod
    def fig3(cls, **kw) -> "ExperimentConfig":
        d = dict(model=ModelConfig.preset("spontaneous"), N=5000, paths=200, mu1=0.15, mu2=0.25,
                 observable_name="sigma_y")
        d.update(kw)
        return cls(**d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        model = ModelConfig.from_dict(d)
        kw = {k: d[k] for k in ("N", "paths", "mu1", "mu2", "seed") if k in d}
        for k in ("mu1", "mu2"):
            if k in kw:
                kw[k] = float(kw[k])
        kw["observable_name"] = d.get("observable", DEFAULT_OBSERVABLE[model.model])
        return cls(model=model, **kw)

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d.update(N=self.N, paths=self.paths, mu1=self.mu1, mu2=self.mu2, seed=self.seed,
                 observable=self.observable_name)
        return d


@dataclass
class ErrorMetrics:
    delta_rn: float
    delta_rs: float
    eps_series: np.ndarray | None = None
    eps_prime_series: np.ndarray | None = None


@dataclass
class BatchResult:
    """Per-path outputs, arrays indexed [path] or [path, step]."""

    path_ids: np.ndarray
    delta_rn: np.ndarray
    delta_rs: np.ndarray            # (paths, n_rs)
    eps: np.ndarray | None = None   # (paths, n_rs, N)
    eps_prime: np.ndarray | None = None
    traces: dict = field(default_factory=dict)


def _choose(mask, a, b):
    return np.where(mask[:, None, None, None], a, b)


def simulate_batch(config: ExperimentConfig, path_ids, rs_params=None, want_bounds: bool = False,
                   want_traces: bool = False, gap_steps=()) -> BatchResult:
    """Run true / nominal-rn / nominal-rs filters on the given paths' records.

    ``rs_params`` lists the risk parameters of the risk-sensitive filters
    (default: the config's). ``gap_steps`` records |pi_true - pi_nom| at the
    given 1-based steps in ``traces['gap']``.
    """
    ens = config.ensemble
    obs = config.observable
    x = obs.X
    rs_params = [config.risk] if rs_params is None else list(rs_params)
    n_rs = len(rs_params)
    ids = np.asarray(path_ids, dtype=np.int64)
    P, N, lam = ids.size, config.N, ens.lam
    unif = np.stack([path_uniforms(config.seed, k, N) for k in ids]) if P else np.empty((0, N))

    vp, vm = ens.kraus_plus, ens.kraus_minus
    true = np.broadcast_to(config.model.true_state().blocks, (P,) + vp.shape).copy()
    nom0 = config.model.nominal_state().blocks
    rn = np.broadcast_to(nom0, (P,) + vp.shape).copy()
    rs = [rn.copy() for _ in range(n_rs)]
    scale = np.zeros(P)
    u_prev = [None] * n_rs

    sum_rn = np.zeros(P)
    sum_rs = np.zeros((P, n_rs))
    eps = np.zeros((P, n_rs, N)) if want_bounds else None
    eps_p = np.zeros((P, n_rs, N)) if want_bounds else None
    traces = {}
    if want_traces:
        for key in ("dy", "p_plus", "estimate_true", "estimate_rn"):
            traces[key] = np.zeros((P, N))
        traces["estimate_rs"] = np.zeros((P, n_rs, N))
    gap_steps = sorted(set(int(s) for s in gap_steps))
    if gap_steps:
        traces["gap"] = np.zeros((P, len(gap_steps)))

    for l in range(N):
        plus = sandwich(vp, true)
        minus = sandwich(vm, true)
        p = total_trace(plus) / (2.0 * total_trace(true))
        up = unif[:, l] < p
        true, scale = rescale(_choose(up, plus, minus), scale)
        v = _choose(up, vp[None], vm[None])
        rn, _ = rescale(sandwich(v, rn), 0.0)
        pi_true = pairing(true, x) / total_trace(true)
        pi_rn = pairing(rn, x) / total_trace(rn)
        sum_rn += np.abs(pi_true - pi_rn)
        for j, rp in enumerate(rs_params):
            h = rs[j]
            if u_prev[j] is not None and rp.mu1 != 0.0:
                h = sandwich(risk_weight(obs, u_prev[j], rp.mu1, lam)[:, None], h)
            rs[j], _ = rescale(sandwich(v, h), 0.0)
            u = minimize_risk(obs.spectral_masses(rs[j]), obs.eigenvalues, rp.mu2)
            u_prev[j] = u
            sum_rs[:, j] += np.abs(pi_true - u)
            if want_bounds:
                eps[:, j, l], eps_p[:, j, l] = error_and_bound(true, rs[j], u, rp.mu2, obs)
            if want_traces:
                traces["estimate_rs"][:, j, l] = u
        if want_traces:
            traces["dy"][:, l] = np.where(up, lam, -lam)
            traces["p_plus"][:, l] = p
            traces["estimate_true"][:, l] = pi_true
            traces["estimate_rn"][:, l] = pi_rn
        if gap_steps and (l + 1) in gap_steps:
            traces["gap"][:, gap_steps.index(l + 1)] = np.abs(pi_true - pi_rn)
    return BatchResult(ids, sum_rn / N, sum_rs / N, eps, eps_p, traces)


def _worker(args):
    config_dict, ids, rs, bounds, tr, gaps = args
    cfg = ExperimentConfig.from_dict(config_dict)
    rs = [RiskParams(*p) for p in rs]
    return simulate_batch(cfg, ids, rs, bounds, tr, gaps)


def worker_count() -> int:
    env = os.environ.get("QRS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError("QRS_THREADS must be an integer") from None
    return os.cpu_count() or 1


def run_paths(config: ExperimentConfig, path_ids=None, rs_params=None, want_bounds=False,
              want_traces=False, gap_steps=(), workers: int | None = None) -> BatchResult:
    """simulate_batch over many paths, split into batches and optionally processes."""
    ids = np.arange(config.paths) if path_ids is None else np.asarray(path_ids, dtype=np.int64)
    rs = [config.risk] if rs_params is None else list(rs_params)
    batches = [ids[i:i + BATCH_PATHS] for i in range(0, ids.size, BATCH_PATHS)] or [ids]
    workers = worker_count() if workers is None else workers
    workers = max(1, min(workers, len(batches)))
    if workers == 1:
        parts = [simulate_batch(config, b, rs, want_bounds, want_traces, gap_steps) for b in batches]
    else:
        cfg = config.to_dict()
        jobs = [(cfg, b, [(r.mu1, r.mu2) for r in rs], want_bounds, want_traces, tuple(gap_steps)) for b in batches]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_worker, jobs))
    return _merge(parts)


def _merge(parts) -> BatchResult:
    cat = lambda name: (None if getattr(parts[0], name) is None  # noqa: E731
                        else np.concatenate([getattr(p, name) for p in parts]))
    traces = {k: np.concatenate([p.traces[k] for p in parts]) for k in parts[0].traces}
    return BatchResult(cat("path_ids"), cat("delta_rn"), cat("delta_rs"), cat("eps"), cat("eps_prime"), traces)


# --- protocols ------------------------------------------------------------------

def run_trajectory_triple(config: ExperimentConfig, seed: int | None = None, path_index: int = 0,
                          want_bounds: bool = False) -> ErrorMetrics:
    cfg = config if seed is None else config.replace(seed=seed)
    r = simulate_batch(cfg, [path_index], want_bounds=want_bounds)
    return ErrorMetrics(
        float(r.delta_rn[0]), float(r.delta_rs[0, 0]),
        None if r.eps is None else r.eps[0, 0],
        None if r.eps_prime is None else r.eps_prime[0, 0],
    )


@dataclass
class ComparisonResult:
    delta_rn: np.ndarray
    delta_rs: np.ndarray
    mean_rn: float
    mean_rs: float
    p_value: float
    statistic: float
    frac_rs_better: float

    @property
    def rs_better(self) -> bool:
        return self.mean_rs < self.mean_rn and self.p_value < 0.05


def paired_less(a, b):
    """One-sided paired t-test of mean(a) < mean(b). Returns (statistic, p)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = a - b
    if np.all(d == d[0]):
        # constant differences: the t statistic is undefined; decide exactly
        return (-np.inf, 0.0) if d[0] < 0 else (np.inf if d[0] > 0 else np.nan, 1.0)
    res = stats.ttest_rel(a, b, alternative="less")
    return float(res.statistic), float(res.pvalue)


def compare_estimators(config: ExperimentConfig, workers=None) -> ComparisonResult:
    r = run_paths(config, workers=workers)
    rn, rs = r.delta_rn, r.delta_rs[:, 0]
    t, p = paired_less(rs, rn)
    return ComparisonResult(rn, rs, float(rn.mean()), float(rs.mean()), p, t, float(np.mean(rs < rn)))


def beta_sweep(betas, paths: int = 100, mu=(0.01, 0.05), N: int = 2000, seed: int = 1,
               lambda2: float = DEFAULT_LAMBDA2, workers=None):
    """Rows (beta, mean delta_rn, mean delta_rs) over shared-seed paths."""
    rows = []
    for beta in betas:
        cfg = ExperimentConfig(model=beta_model_config(float(beta), lambda2), N=N, paths=paths,
                               mu1=mu[0], mu2=mu[1], seed=seed, observable_name="sigma_z")
        r = run_paths(cfg, workers=workers)
        rows.append((float(beta), float(r.delta_rn.mean()), float(r.delta_rs[:, 0].mean())))
    return rows


@dataclass
class BoundTrace:
    eps: np.ndarray
    eps_prime: np.ndarray
    estimate_true: np.ndarray
    estimate_rn: np.ndarray
    estimate_rs: np.ndarray


def bound_trace(config: ExperimentConfig, path_index: int = 0) -> BoundTrace:
    r = simulate_batch(config, [path_index], want_bounds=True, want_traces=True)
    t = r.traces
    return BoundTrace(r.eps[0, 0], r.eps_prime[0, 0], t["estimate_true"][0], t["estimate_rn"][0],
                      t["estimate_rs"][0, 0])


def mu1_comparison(config: ExperimentConfig, paths: int = 200, pairs=((0.0, 0.281), (0.1, 0.182)),
                   workers=None):
    """Mean conditional error series for each (mu1, mu2) pair on shared records."""
    cfg = config.replace(paths=paths)
    rps = [RiskParams(*p) for p in pairs]
    r = run_paths(cfg, rs_params=rps, want_bounds=True, workers=workers)
    return tuple(r.eps[:, j, :].mean(axis=0) for j in range(len(rps)))


def stability_gap(config: ExperimentConfig, paths: int = 100, workers=None):
    """|pi_true - pi_nom| at step N/10 and N, per path, plus one-sided p-value."""
    early = max(1, config.N // 10)
    r = run_paths(config.replace(paths=paths), gap_steps=(early, config.N), workers=workers)
    g = r.traces["gap"]
    _, p = paired_less(g[:, 1], g[:, 0])
    return g[:, 0], g[:, 1], p


def histogram(values, bins: int = 20):
    """Counts over [0, max] in equal bins."""
    v = np.asarray(values, dtype=float)
    top = float(v.max()) if v.size and v.max() > 0 else 1.0
    return np.histogram(v, bins=bins, range=(0.0, top))


# --- observable space -------------------------------------------------------------

_PAULI = (mc.IDENTITY, mc.SIGMA_X, mc.SIGMA_Y, mc.SIGMA_Z)


def hermitian_to_vec(x: np.ndarray) -> np.ndarray:
    return np.array([np.real(np.trace(p @ x)) / 2 for p in _PAULI])


def vec_to_hermitian(v) -> np.ndarray:
    return sum(c * p for c, p in zip(v, _PAULI))


def generator_maps(c: InteractionCoefficients, continuous: bool = False):
    """The Heisenberg-picture drift and diffusion maps acting on observables."""
    mp, mo = c.Mp, c.Mo
    mps, mos = mc.dagger(mp), mc.dagger(mo)
    l2 = 0.0 if continuous else c.lam**2

    def drift(x):
        return mps @ x @ mp + l2 * mos @ x @ mo + x @ mo + mos @ x

    def diffusion(x):
        return l2 * mps @ x @ mo + l2 * mos @ x @ mp + x @ mp + mps @ x

    return drift, diffusion


def observable_space(c: InteractionCoefficients, tol_rank: float = 1e-9, continuous: bool = False):
    """Dimension and orthonormal basis of the smallest space containing I and closed under both maps."""
    drift, diffusion = generator_maps(c, continuous)
    basis = np.array([hermitian_to_vec(mc.IDENTITY)])
    basis /= np.linalg.norm(basis[0])
    while True:
        mats = [vec_to_hermitian(b) for b in basis]
        cand = np.array([hermitian_to_vec(f(m)) for m in mats for f in (drift, diffusion)] + list(basis))
        u, s, vt = np.linalg.svd(cand, full_matrices=False)
        keep = s > tol_rank * max(s[0], 1.0)
        new = vt[keep]
        if new.shape[0] == basis.shape[0]:
            return basis.shape[0], [vec_to_hermitian(b) for b in basis]
        basis = new


def limit_coefficients(model: str, value: float, lam: float = np.sqrt(DEFAULT_LAMBDA2)) -> InteractionCoefficients:
    """Richardson extrapolation of the coefficients to lam -> 0 from lam and lam/2."""
    factory = HAMILTONIAN_FACTORIES[model]
    a = build_interaction_coeffs(factory(value, lam))
    b = build_interaction_coeffs(factory(value, lam / 2))
    ex = lambda name: (4 * getattr(b, name) - getattr(a, name)) / 3  # noqa: E731
    return InteractionCoefficients(ex("Mpm"), ex("Mp"), ex("Mm"), ex("Mo"), lam)


# --- output helpers ------------------------------------------------------------------

def write_manifest(path, command: str, config: dict, extra: dict | None = None):
    doc = {"command": command, "config": config}
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
