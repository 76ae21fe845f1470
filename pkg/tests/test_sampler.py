import numpy as np
import pytest
from scipy import stats

from qrs import matcore as mc
from qrs.errors import NumericalConsistencyError
from qrs.experiments import ExperimentConfig
from qrs.filter import FilterState
from qrs.model import BlockDensityMatrix, make_ensemble
from qrs.sampler import (path_uniforms, plus_probability, record_probability, sample_outcome, sample_record,
                         sample_trajectory)


def test_seed_streams_are_reproducible_and_distinct():
    a = path_uniforms(1, 0, 100)
    assert np.array_equal(a, path_uniforms(1, 0, 100))
    assert not np.array_equal(a, path_uniforms(1, 1, 100))
    assert not np.array_equal(a, path_uniforms(2, 0, 100))


def test_plus_state_dispersive_is_fair():
    ens = make_ensemble("dispersive", [0.55], 1e-3)
    p, _, _ = plus_probability(mc.PROJ_PLUS[None], ens)
    assert abs(float(p) - 0.5) < 1e-15


def test_ground_state_gives_vacuum_walk():
    # the ground state of the spontaneous model emits nothing: outcomes are fair coin flips
    ens = make_ensemble("spontaneous", [0.88], 1e-3)
    rho = BlockDensityMatrix(np.diag([0.0, 1.0]).astype(complex)[None])
    rec = sample_record(rho, ens, 2000, master_seed=3)
    assert np.allclose(rec.p_plus, 0.5, atol=1e-15)
    assert np.array_equal(rec.signs > 0, path_uniforms(3, 0, 2000) < 0.5)


def test_vacuum_walk_statistics():
    # with p_plus = 1/2 the sampler's rule is uniform < 1/2; check mean, variance and the
    # normal limit of the scaled sum over 10^4 independent paths
    lam, steps, n = np.sqrt(1e-3), 400, 10_000
    dw = np.stack([np.where(path_uniforms(11, k, steps) < 0.5, lam, -lam) for k in range(n)])
    assert abs(dw.mean()) < 5 * lam / np.sqrt(dw.size)
    assert abs(dw.var() / lam**2 - 1) < 1e-3
    # the sum lives on a lattice of spacing 2; a uniform jitter of that width makes it continuous
    walk = dw.sum(axis=1) / lam + np.random.default_rng(0).uniform(-1, 1, n)
    z = walk / np.sqrt(steps + 1 / 3)
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_sample_outcome_threshold():
    ens = make_ensemble("dispersive", [0.55], 1e-3)
    s = FilterState.initial(BlockDensityMatrix(mc.PROJ_PLUS[None]))
    assert sample_outcome(s, ens, 0.49)[0] > 0
    assert sample_outcome(s, ens, 0.51)[0] < 0


def test_inconsistent_probability_detected():
    # an indefinite "state" with positive trace can push the outcome probability above 1
    ens = make_ensemble("dispersive", [np.pi / 4 / 0.1], 0.01)  # rotation angle pi/4
    bad = np.array([[[1.0, 0.0], [0.0, -0.5]]], dtype=complex)
    with pytest.raises(NumericalConsistencyError):
        plus_probability(bad, ens)


def test_record_probabilities_sum_to_one():
    ens = make_ensemble("spontaneous", [0.5, 0.9], 0.01)
    rho = BlockDensityMatrix.product([0.3, 0.7], mc.PROJ_PLUS)
    import itertools

    total = sum(record_probability(rho, ens, r) for r in itertools.product((1, -1), repeat=6))
    assert abs(total - 1) < 1e-13


def test_trajectory_uses_true_model():
    cfg = ExperimentConfig.fig1(N=50, paths=1)
    rec = sample_trajectory(cfg, seed=4, path_index=2)
    again = sample_record(cfg.model.true_state(), cfg.ensemble, 50, 4, 2)
    assert np.array_equal(rec.dy, again.dy)
    assert rec.true_estimates.shape == (50,)
