import numpy as np
import pytest

from ctxsim import oracle, purify, umps


def _trace_distance(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum()


@pytest.mark.parametrize("D", [1, 2, 3, 5, 9])
def test_purification_reproduces_rho3(rng, D):
    A = umps.normalize(umps.random_tensor(D, 3, rng)).A
    fp = umps.fixed_points(A)
    mps = purify.purify(A, fp)
    assert mps.n_sites == 7
    rho = purify.reduced_middle(mps.to_dense())
    # Compare against the loop-based reference, not the production contraction.
    assert _trace_distance(rho, oracle.dense_rho3(A, fp.l, fp.r)) < 1e-10
    assert mps.norm() == pytest.approx(1.0, abs=1e-10)


def test_bond_dimension_limit(rng):
    A = umps.normalize(umps.random_tensor(10, 3, rng)).A
    with pytest.raises(ValueError):
        purify.purify(A)


@pytest.mark.parametrize("side", ["left", "right"])
def test_psd_factor(rng, side):
    X = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    M = X @ X.conj().T  # rank 2
    F = purify.psd_factor(M, side)
    got = F.conj().T @ F if side == "left" else F @ F.conj().T
    np.testing.assert_allclose(got, M, atol=1e-12)


def test_psd_factor_rejects_indefinite():
    with pytest.raises(purify.NotPSDError):
        purify.psd_factor(np.diag([1.0, -0.5]))


@pytest.mark.parametrize("side", ["left", "right"])
@pytest.mark.parametrize("n_anc", [1, 4, 9])
def test_split_boundary_is_exact(rng, side, n_anc):
    D = 3
    shape = (n_anc, D) if side == "left" else (D, n_anc)
    F = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    tensors = purify.split_boundary(F, side, k=2)
    assert len(tensors) == 2
    if side == "left":
        got = np.einsum("xsa,atb->stb", *tensors).reshape(9, D)
        want = np.zeros((9, D), dtype=complex)
        want[:n_anc] = F
    else:
        got = np.einsum("asb,btx->ast", *tensors).reshape(D, 9)
        want = np.zeros((D, 9), dtype=complex)
        want[:, :n_anc] = F
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_product_state_purifies_to_product(rng):
    A = np.zeros((1, 3, 1), dtype=complex)
    A[0, 2, 0] = 1
    psi = purify.purify(A).to_dense()
    rho = purify.reduced_middle(psi)
    e = np.zeros(27)
    e[26] = 1
    np.testing.assert_allclose(rho, np.outer(e, e), atol=1e-14)
