import numpy as np
import pytest

from qrs import matcore as mc
from qrs import oracle
from qrs.errors import CapacityError, InvalidInputError, UndefinedConditionalError
from qrs.filter import FilterState, Observable, RiskParams, rn_step
from qrs.model import BlockDensityMatrix, dispersive_closed_form, make_ensemble
from qrs.validation import filter_oracle_gaps


def test_record_indexing():
    recs = oracle.all_records(3)
    assert [oracle.record_index(r) for r in recs] == list(range(8))
    assert oracle.as_signs([0.1, -0.1]) == (1, -1)
    with pytest.raises(InvalidInputError):
        oracle.as_signs([0.0])


def test_hadamard_rows_orthonormal():
    h = oracle.hadamard_power(3)
    assert np.allclose(h @ h.T, np.eye(8))


def test_single_slice_matches_coefficients():
    c = dispersive_closed_form(0.6, 0.1)
    m = oracle.embed_slice_unitary(c, 1)
    assert np.allclose(m, c.slice_unitary())


def test_unitary_history_and_normalization():
    ens = make_ensemble("spontaneous", [0.5, 0.9], 0.01)
    rho = BlockDensityMatrix.product([0.4, 0.6], mc.PROJ_PLUS)
    sim = oracle.evolve_full(ens, 5, rho)
    assert oracle.unitarity_residual(sim) < 1e-12
    dist = oracle.record_distribution(sim)
    assert len(dist) == 32 and abs(sum(dist.values()) - 1) < 1e-12
    assert min(dist.values()) >= 0


def test_conditional_blocks_are_scaled_filter_states():
    ens = make_ensemble("dispersive", [0.45, 0.7], 0.01)
    rho = BlockDensityMatrix.product([0.5, 0.5], mc.PROJ_PLUS)
    sim = oracle.evolve_full(ens, 4, rho)
    s = oracle.conditional_blocks(sim, 4)
    for k, rec in enumerate(oracle.all_records(4)):
        f = FilterState.initial(rho)
        for sign in rec:
            f = rn_step(f, ens, sign * ens.lam)
        assert np.abs(s[k] - f.blocks * np.exp(f.log_scale) / 16).max() < 1e-14


@pytest.mark.parametrize("model,value,obs", [("dispersive", 0.55, mc.SIGMA_Z),
                                             ("spontaneous", 0.88, mc.SIGMA_X)])
def test_filter_matches_oracle(model, value, obs):
    ens = make_ensemble(model, [value], 1e-3)
    p_gap, e_gap = filter_oracle_gaps(ens, BlockDensityMatrix(mc.PROJ_PLUS[None]), 5, obs)
    assert p_gap < 1e-12 and e_gap < 1e-12


def test_zero_probability_record():
    # rotation angle pi/4 makes the - update a projector onto the second level
    c = dispersive_closed_form(np.pi / 4 / 0.5, 0.5)
    sim = oracle.evolve_full(c, 1, np.diag([1.0, 0.0]).astype(complex))
    dist = oracle.record_distribution(sim)
    assert abs(dist[(1,)] - 1) < 1e-14 and abs(dist[(-1,)]) < 1e-14
    with pytest.raises(UndefinedConditionalError):
        oracle.conditional_expectation(sim, mc.SIGMA_Z, (-1,))


def test_capacity():
    with pytest.raises(CapacityError):
        oracle.evolve_full(dispersive_closed_form(0.5, 0.1), oracle.MAX_N + 1)


def test_record_function_operator_projects():
    # sum_r A_r (x) P_r with A_r = identity must be the identity
    op = oracle.record_function_operator(np.stack([np.eye(2)] * 4), 2, 3)
    assert np.allclose(op, np.eye(16))


def test_weighted_evolution_identity():
    ens = make_ensemble("dispersive", [0.5, 0.6], 0.01)
    rho = BlockDensityMatrix.product([0.3, 0.7], mc.PROJ_PLUS)
    sim = oracle.evolve_full(ens, 3, rho)
    rng = np.random.default_rng(2)
    pol = {rec: float(rng.uniform(-1, 1)) for l in range(1, 4) for rec in oracle.all_records(l)}
    x = np.kron(mc.SIGMA_X, np.eye(8))
    lhs, rhs = oracle.weighted_evolution_check(sim, pol, RiskParams(0.3, 0.2), Observable(mc.SIGMA_Z), x)
    assert abs(lhs - rhs) < 1e-12


def test_robustness1_equal_states_is_jensen():
    ens = make_ensemble("dispersive", [0.5, 0.6], 0.01)
    rho = BlockDensityMatrix.product([0.3, 0.7], mc.PROJ_PLUS)
    sim = oracle.evolve_full(ens, 3, rho)
    pol = lambda rec: 0.1 * sum(rec)  # noqa: E731
    lhs, rhs = oracle.verify_robustness1(sim, sim, pol, RiskParams(0.1, 0.182), Observable(mc.SIGMA_Z))
    assert lhs <= rhs + 1e-12
