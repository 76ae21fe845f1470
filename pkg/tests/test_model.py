import math

import numpy as np
import pytest

from qrs import matcore as mc
from qrs.errors import InvalidInputError, ModelConstructionError
from qrs.model import (FIG1_VALUES, HamiltonianSpec, ModelConfig, BlockDensityMatrix, beta_weights,
                       build_interaction_coeffs, build_true_nominal_fig1, build_true_nominal_fig3,
                       check_unitarity, dispersive_closed_form, dispersive_hamiltonian, make_ensemble,
                       parse_complex_matrix, format_complex_matrix, spontaneous_closed_form,
                       spontaneous_hamiltonian, unitarity_relation_residual, beta_model_config)

# sin(0.55*0.1)/0.1 and (cos(0.55*0.1)-1)/0.01
MP_DISPERSIVE = 0.5497227502706773
MO_DISPERSIVE = -0.15121187624015373


def coeff_gap(a, b):
    return max(np.abs(getattr(a, k) - getattr(b, k)).max() for k in ("Mpm", "Mp", "Mm", "Mo"))


def test_dispersive_frozen_values():
    c = build_interaction_coeffs(dispersive_hamiltonian(0.55, 0.1))
    assert abs(c.Mp[0, 0] - MP_DISPERSIVE) < 1e-12
    assert abs(c.Mp[1, 1] + MP_DISPERSIVE) < 1e-12
    assert abs(c.Mo[0, 0] - MO_DISPERSIVE) < 1e-10
    assert np.abs(c.Mpm).max() < 1e-12


@pytest.mark.parametrize("value", [0.43, 0.55, 1.0])
@pytest.mark.parametrize("lambda2", [1e-3, 1e-2])
def test_extraction_matches_closed_forms(value, lambda2):
    lam = math.sqrt(lambda2)
    for ham, closed in ((dispersive_hamiltonian, dispersive_closed_form),
                        (spontaneous_hamiltonian, spontaneous_closed_form)):
        c = build_interaction_coeffs(ham(value, lam))
        assert coeff_gap(c, closed(value, lam)) < 1e-10
        assert check_unitarity(c) < 1e-12
        assert unitarity_relation_residual(c) < 1e-9


def test_vacuum_rows_of_spontaneous():
    c = spontaneous_closed_form(0.8, 0.1)
    # the vacuum row of the slice factor leaves the ground state alone
    ground = np.array([0, 1], dtype=complex)
    assert np.allclose(c.Mp @ ground, 0)
    assert np.allclose(c.Mo @ ground, 0)


def test_kraus_completeness():
    c = dispersive_closed_form(0.7, 0.05)
    s = 0.5 * (c.kraus(1).conj().T @ c.kraus(1) + c.kraus(-1).conj().T @ c.kraus(-1))
    assert np.allclose(s, np.eye(2), atol=1e-12)


def test_hamiltonian_validation():
    z = np.zeros((2, 2))
    with pytest.raises(InvalidInputError):
        HamiltonianSpec(np.array([[0, 1], [0, 0]]), z, z, 0.1)
    with pytest.raises(InvalidInputError):
        HamiltonianSpec(z, z, z, 0.0)


def test_broken_decomposition_detected():
    spec = dispersive_hamiltonian(0.5, 0.1)
    object.__setattr__(spec, "L1", np.array([[1, 1], [0, 1]], dtype=complex))  # not Hermitian
    with pytest.raises(ModelConstructionError):
        build_interaction_coeffs(spec)


def test_ensemble_checks():
    with pytest.raises(InvalidInputError):
        make_ensemble("dispersive", [0.5, 0.4], 1e-3)
    with pytest.raises(InvalidInputError):
        make_ensemble("unknown", [0.5], 1e-3)
    ens = make_ensemble("dispersive", FIG1_VALUES, 1e-3)
    assert ens.kraus_plus.shape == (20, 2, 2)
    assert ens.subset([0, 3]).values == (FIG1_VALUES[0], FIG1_VALUES[3])


def test_fig_densities():
    t, n, ens = build_true_nominal_fig1()
    assert t.size == n.size == ens.size == 20
    assert abs(t.total_trace() - 1) < 1e-12 and abs(n.total_trace() - 1) < 1e-12
    assert np.allclose(t.weights[:8], [0, 0.01, 0.04, 0.1, 0.7, 0.1, 0.04, 0.01])
    assert abs(FIG1_VALUES[4] - 0.55) < 1e-12
    t3, _, ens3 = build_true_nominal_fig3()
    assert abs(ens3.values[16] - 0.88) < 1e-12 and abs(t3.weights[16] - 0.9) < 1e-12


def test_beta_weights_interpolate():
    t, n, _ = build_true_nominal_fig1()
    assert np.allclose(beta_weights(0.0), t.weights)
    assert np.allclose(beta_weights(1.0), n.weights)
    for b in np.linspace(0, 1, 11):
        assert abs(beta_weights(b).sum() - 1) < 1e-12
    with pytest.raises(InvalidInputError):
        beta_weights(1.5)
    assert beta_model_config(0.5).nominal_state().size == 20


def test_block_density_validation():
    with pytest.raises(InvalidInputError):
        BlockDensityMatrix(np.array([[[1, 0], [0, -1]]], dtype=complex))
    d = BlockDensityMatrix.product([0.25, 0.75], mc.PROJ_PLUS).to_dense()
    assert d.shape == (4, 4) and abs(np.trace(d) - 1) < 1e-12


def test_complex_matrix_roundtrip():
    m = np.array([[1, 2j], [-2j, 3]])
    assert np.allclose(parse_complex_matrix(format_complex_matrix(m)), m)
    with pytest.raises(InvalidInputError):
        parse_complex_matrix([[1, 2, 3]])


def test_model_config_roundtrip():
    cfg = ModelConfig.preset("spontaneous")
    again = ModelConfig.from_dict(cfg.to_dict())
    assert np.allclose(again.true_state().blocks, cfg.true_state().blocks)
    assert again.ensemble().values == cfg.ensemble().values
    bad = cfg.to_dict()
    bad["true_weights"] = [0.5] * 20
    with pytest.raises(InvalidInputError):
        ModelConfig.from_dict(bad)
