"""Self-checks run by the ``oracle-validate``, ``dp-validate`` and ``entropy-check`` verbs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import matcore as mc
from . import oracle
from .dp import dp_solve, filter_policy_cost, risk_neutral_policy, suboptimal_policy
from .filter import FilterState, Observable, RiskParams, estimate, rn_step
from .model import (BlockDensityMatrix, ParameterEnsemble, build_true_nominal_fig1, make_ensemble)
from .robustness import (duality_check, entropy_additivity_check, golden_thompson_check, random_density,
                         random_hermitian, relative_entropy)
from .sampler import record_probability


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def filter_oracle_gaps(ens: ParameterEnsemble, rho: BlockDensityMatrix, N: int, X) -> tuple:
    """Max deviations (probability, conditional expectation) over all records."""
    sim = oracle.evolve_full(ens, N, rho)
    dist = oracle.record_distribution(sim)
    p_gap = max(abs(p - record_probability(rho, ens, rec)) for rec, p in dist.items())
    e_gap = 0.0
    states = {(): FilterState.initial(rho)}
    for l in range(1, N + 1):
        for rec in oracle.all_records(l):
            s = rn_step(states[rec[:-1]], ens, rec[-1] * ens.lam)
            states[rec] = s
            if s.total_trace() > 1e-14:
                e_gap = max(e_gap, abs(estimate(s, X) - oracle.conditional_expectation(sim, X, rec)))
    return p_gap, e_gap


def single_parameter(model: str, value: float, lambda2: float = 0.001) -> ParameterEnsemble:
    return make_ensemble(model, [value], lambda2)


def oracle_suite(N: int = 6) -> list:
    checks = []
    plus = BlockDensityMatrix(mc.PROJ_PLUS[None])
    for model, value, obs in (("dispersive", 0.55, mc.SIGMA_Z), ("spontaneous", 0.88, mc.SIGMA_X)):
        ens = single_parameter(model, value)
        p_gap, e_gap = filter_oracle_gaps(ens, plus, N, obs)
        checks.append(Check(f"{model} records N={N}", p_gap <= 1e-10 and e_gap <= 1e-10,
                            f"probability gap {p_gap:.2e}, estimate gap {e_gap:.2e}"))
    _, nominal, ens = build_true_nominal_fig1()
    idx = [2, 3, 4, 5, 6]
    sub_ens = ens.subset(idx)
    w = nominal.blocks[idx]
    rho = BlockDensityMatrix(w / np.real(np.trace(w, axis1=1, axis2=2)).sum())
    rp = RiskParams(0.1, 0.182)
    obs = Observable(mc.SIGMA_Z)
    n = min(N, 5)
    sim = oracle.evolve_full(sub_ens, n, rho)
    pol = suboptimal_policy(rho, sub_ens, n, rp, obs)
    full = oracle.risk_cost_full(sim, pol, rp, obs)
    rec = filter_policy_cost(rho, sub_ens, n, pol, rp, obs)
    checks.append(Check(f"risk cost identity N={n}", abs(full - rec) <= 1e-10,
                        f"full {full:.12f} record-sum {rec:.12f}"))
    return checks


def dp_suite(N: int = 6, rp: RiskParams = RiskParams(0.1, 0.182)) -> list:
    _, nominal, ens = build_true_nominal_fig1()
    idx = [3, 4, 5]
    sub_ens = ens.subset(idx)
    w = nominal.blocks[idx]
    rho = BlockDensityMatrix(w / np.real(np.trace(w, axis1=1, axis2=2)).sum())
    obs = Observable(mc.SIGMA_Z)
    res = dp_solve(sub_ens, N, rp, obs, state=rho)
    sim = oracle.evolve_full(sub_ens, N, rho)
    sub = oracle.risk_cost_full(sim, suboptimal_policy(rho, sub_ens, N, rp, obs), rp, obs)
    rn = oracle.risk_cost_full(sim, risk_neutral_policy(rho, sub_ens, N, obs), rp, obs)
    own = oracle.risk_cost_full(sim, res.policy, rp, obs)
    return [
        Check("dp <= suboptimal", res.optimal_cost - sub <= 1e-10, f"dp {res.optimal_cost:.12f} sub {sub:.12f}"),
        Check("dp <= risk-neutral", res.optimal_cost - rn <= 1e-10, f"dp {res.optimal_cost:.12f} rn {rn:.12f}"),
        Check("dp policy cost reproduced", abs(own - res.optimal_cost) <= 1e-10,
              f"oracle {own:.12f}, grid {res.grid.size} points, {res.leaves} leaves"),
    ]


def entropy_suite(seed: int = 0, n: int = 1000) -> list:
    rng = np.random.default_rng(seed)
    worst_gap = worst_excess = worst_gt = -math.inf
    for _ in range(n):
        dim = int(rng.integers(2, 6))
        a = random_hermitian(dim, rng)
        rp = random_density(dim, rng)
        d = duality_check(a, rp, n_random=5, rng=rng)
        worst_gap = max(worst_gap, d.maximizer_gap)
        worst_excess = max(worst_excess, d.worst_excess)
        lhs, rhs = golden_thompson_check(a, rp)
        worst_gt = max(worst_gt, lhs - rhs)
    t, nominal, _ = build_true_nominal_fig1()
    add = entropy_additivity_check(np.diag(np.real(np.trace(t.blocks, axis1=1, axis2=2))),
                                   np.diag(np.real(np.trace(nominal.blocks, axis1=1, axis2=2))),
                                   t.blocks[4] / 0.7, nominal.blocks[0] * 20)
    kl = relative_entropy(np.diag([0.7, 0.3]), np.diag([0.5, 0.5])).value
    kl_ref = 0.7 * math.log(1.4) + 0.3 * math.log(0.6)
    return [
        Check("duality maximizer", worst_gap <= 1e-10, f"max gap {worst_gap:.2e} over {n} instances"),
        Check("duality upper bound", worst_excess <= 1e-10, f"max excess {worst_excess:.2e}"),
        Check("Golden-Thompson", worst_gt <= 1e-10, f"max lhs-rhs {worst_gt:.2e}"),
        Check("additivity", add <= 1e-10, f"residual {add:.2e}"),
        Check("classical limit", abs(kl - kl_ref) <= 1e-12, f"{kl:.12f} vs {kl_ref:.12f}"),
    ]
