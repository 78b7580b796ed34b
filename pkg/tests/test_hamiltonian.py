import json

import numpy as np
import pytest

from ctxsim import oracle
from ctxsim.hamiltonian import (
    WITNESSES,
    ObservableParams,
    get_witness,
    hamiltonian_term,
    load_witness,
    observable,
    rotation,
    to_mpo,
)


def _op_at(op, site, n):
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        out = np.kron(out, op if k == site else np.eye(3))
    return out


def _open_chain_from_witness(witness, sx, sy, n):
    """Hamiltonian of an open chain written out term by term from the couplings."""
    sig = (sx, sy)
    J = witness.couplings
    H = np.zeros((3**n, 3**n), dtype=complex)
    for i in range(n):
        H += J[0] * _op_at(sx, i, n) + J[1] * _op_at(sy, i, n)
    for dist, offset in ((1, 2), (2, 6)):
        for i in range(n - dist):
            k = offset
            for a in range(2):
                for b in range(2):
                    H += J[k] * _op_at(sig[a], i, n) @ _op_at(sig[b], i + dist, n)
                    k += 1
    return H


def _open_chain_from_mpo(W, n):
    chi = W.shape[0]
    left = np.zeros(chi)
    left[0] = 1
    right = np.zeros(chi)
    right[-1] = 1
    M = np.einsum("a,abst->bst", left, W)
    for _ in range(n - 1):
        M = np.einsum("aST,abst->bSsTt", M, W)
        M = M.reshape(chi, M.shape[1] * 3, M.shape[3] * 3)
    return np.einsum("ast,a->st", M, right)


def test_builtin_table():
    assert sorted(WITNESSES) == [1, 2, 3, 4, 5]
    assert get_witness(1).couplings == (-6, 0, 2, 3, 3, -2, 3, -1, -1, 1)
    assert [get_witness(k).classical_bound for k in range(1, 6)] == [-6, -6, -3, -4, -8]
    limits = [get_witness(k).quantum_limit for k in range(1, 6)]
    assert limits == [-6.32747, -6.33712, -3.20711, -4.14623, -8.12123]


def test_unknown_witness():
    with pytest.raises(ValueError):
        get_witness(6)


def test_load_witness_roundtrip(tmp_path):
    w = get_witness(3)
    path = tmp_path / "w.json"
    path.write_text(json.dumps(w.to_dict()))
    assert load_witness(path) == w


def test_load_witness_rejects_short_couplings(tmp_path):
    path = tmp_path / "w.json"
    path.write_text(json.dumps({"classical_bound": -1, "couplings": [1, 2, 3]}))
    with pytest.raises(ValueError):
        load_witness(path)


@pytest.mark.parametrize("signature", [(1, 1, -1), (1, -1, -1)])
def test_observable_is_dichotomic(rng, signature):
    for _ in range(10):
        w = rng.uniform(-np.pi, np.pi, 3)
        q = rotation(w)
        np.testing.assert_allclose(q @ q.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(q) == pytest.approx(1.0)
        s = observable(w, signature)
        np.testing.assert_allclose(s, s.T, atol=1e-12)
        np.testing.assert_allclose(s @ s, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(s)), np.sort(signature), atol=1e-12)


def test_trivial_signature_rejected():
    with pytest.raises(ValueError):
        ObservableParams(lambda_x=(1, 1, 1))
    ObservableParams(lambda_x=(1, 1, 1), allow_trivial=True)


def test_zero_parameters_give_diagonal_observables():
    sx, sy = ObservableParams(lambda_x=(1, 1, -1), lambda_y=(1, -1, -1)).sigmas()
    np.testing.assert_allclose(sx, np.diag([1, 1, -1]))
    np.testing.assert_allclose(sy, np.diag([1, -1, -1]))


def test_h3_hermitian(rng):
    params = ObservableParams(rng.normal(size=3), rng.normal(size=3))
    h3 = hamiltonian_term(get_witness(2), params).h3
    assert h3.shape == (27, 27)
    np.testing.assert_allclose(h3, h3.conj().T, atol=1e-12)


@pytest.mark.parametrize("wid", [1, 2, 3, 4, 5])
def test_product_energy_matches_classical_value(wid):
    # Diagonal observables on a product basis state: <h3> is the witness value
    # of the constant assignment read off the diagonals.
    witness = get_witness(wid)
    params = ObservableParams(lambda_x=(1, 1, -1), lambda_y=(1, -1, -1))
    h3 = hamiltonian_term(witness, params).h3
    sx, sy = params.sigmas()
    for level in range(3):
        e = np.zeros(27)
        e[level * 9 + level * 3 + level] = 1
        expected = oracle.witness_value(witness, [sx[level, level]], [sy[level, level]])
        assert np.real(e @ h3 @ e) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("wid", [1, 4])
def test_mpo_reproduces_open_chain(rng, wid):
    witness = get_witness(wid)
    params = ObservableParams(rng.normal(size=3), rng.normal(size=3), (1, -1, -1), (1, 1, -1))
    term = hamiltonian_term(witness, params)
    mpo = to_mpo(term)
    sx, sy = params.sigmas()
    for n in (3, 4):
        np.testing.assert_allclose(_open_chain_from_mpo(mpo.W, n), _open_chain_from_witness(witness, sx, sy, n),
                                   atol=1e-11)


def test_mpo_rejects_inconsistent_term(rng):
    term = hamiltonian_term(get_witness(1), ObservableParams(rng.normal(size=3), rng.normal(size=3)))
    term.h3 = term.h3 + np.eye(27)
    with pytest.raises(ValueError):
        to_mpo(term)
