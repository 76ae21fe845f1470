import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrs import matcore as mc
from qrs.errors import InvalidInputError


def rand_psd(seed, dim=3, rank=None):
    rng = np.random.default_rng(seed)
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    return g @ g.conj().T


def test_pauli_algebra():
    assert np.allclose(mc.SIGMA_X @ mc.SIGMA_Y, 1j * mc.SIGMA_Z)
    assert np.allclose(mc.SIGMA_MINUS @ mc.VACUUM, 0)
    assert np.allclose(mc.PROJ_PLUS + mc.PROJ_MINUS, mc.IDENTITY)


def test_as_matrix_rejects():
    with pytest.raises(InvalidInputError):
        mc.as_matrix(np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        mc.as_matrix([[np.nan, 0], [0, 1]])


def test_exp_diagonal():
    e = mc.mat_exp(np.diag([0.0, np.log(2.0)]))
    assert np.allclose(e, np.diag([1.0, 2.0]), atol=1e-15)


def test_exp_antihermitian_is_unitary():
    h = rand_psd(1) - 2 * np.eye(3)
    u = mc.mat_exp(-1j * h)
    assert np.max(np.abs(u.conj().T @ u - np.eye(3))) < 1e-13


def test_exp_general_matches_scipy():
    from scipy.linalg import expm

    a = np.array([[0.3, 2.0], [0.0, -0.1]], dtype=complex)
    assert np.allclose(mc.mat_exp(a), expm(a), atol=1e-13)


def test_log_psd_drops_kernel():
    a = np.diag([0.5, 0.0]).astype(complex)
    assert np.allclose(mc.mat_log_psd(a), np.diag([np.log(0.5), 0.0]))
    with pytest.raises(InvalidInputError):
        mc.mat_log_psd(np.diag([1.0, -1.0]))


def test_eig_requires_hermitian():
    with pytest.raises(InvalidInputError):
        mc.eig_hermitian([[0, 1], [0, 0]])


def test_kron_order():
    k = mc.kron(mc.SIGMA_Z, mc.IDENTITY)
    assert np.allclose(np.diag(k), [1, 1, -1, -1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_log_exp_roundtrip(seed, dim):
    a = rand_psd(seed, dim) + 1e-3 * np.eye(dim)
    assert np.allclose(mc.mat_exp(mc.mat_log_psd(a)), a, atol=1e-10 * np.abs(a).max())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_psd_detection(seed):
    a = rand_psd(seed, 3, rank=2)
    assert mc.is_psd(a)
    assert not mc.is_psd(a - 0.1 * np.max(np.linalg.eigvalsh(a)) * np.eye(3) - 1e-3 * np.eye(3))
