import numpy as np
import pytest

from ctxsim import oracle, umps
from ctxsim.hamiltonian import ObservableParams, get_witness, hamiltonian_term, to_mpo


def _random_model(rng, wid=1, signatures=((1, 1, -1), (1, -1, -1))):
    params = ObservableParams(rng.uniform(-np.pi, np.pi, 3), rng.uniform(-np.pi, np.pi, 3), *signatures)
    term = hamiltonian_term(get_witness(wid), params)
    return params, term, to_mpo(term)


@pytest.mark.parametrize("D", [1, 2, 4])
def test_fixed_points_match_dense_oracle(rng, D):
    A = umps.normalize(umps.random_tensor(D, 3, rng)).A
    fp = umps.fixed_points(A)
    l_ref, r_ref, lam = oracle.dense_fixed_points(A)
    assert abs(lam) == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(umps.rho3(A, fp), oracle.dense_rho3(A, l_ref, r_ref), atol=1e-11)


@pytest.mark.parametrize("D", [1, 3, 5])
def test_rho3_is_a_density_matrix(rng, D):
    A = umps.normalize(umps.random_tensor(D, 3, rng)).A
    rho = umps.rho3(A)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_rho3_is_translation_consistent(rng):
    # Tracing out the first or last site of rho3 gives the same two-site state.
    A = umps.normalize(umps.random_tensor(3, 3, rng)).A
    rho = umps.rho3(A).reshape(3, 3, 3, 3, 3, 3)
    left = np.einsum("abcdec->abde", rho)
    right = np.einsum("abcaef->bcef", rho)
    np.testing.assert_allclose(left, right, atol=1e-11)


def test_energy_gauge_invariant(rng):
    _, term, _ = _random_model(rng)
    A = umps.normalize(umps.random_tensor(3, 3, rng)).A
    X = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    B = np.einsum("ab,bsc,cd->asd", X, A, np.linalg.inv(X))
    assert umps.energy_density(B, term.h3) == pytest.approx(umps.energy_density(A, term.h3), abs=1e-10)


def test_normalize_flags_cyclic_state():
    setup = oracle.noncontextual_setup(get_witness(5))
    with pytest.warns(umps.DegenerateTransferWarning):
        state = umps.normalize(setup.A)
    assert state.degenerate


def test_mixed_canonical_identities(rng):
    mc = umps.mixed_canonical(umps.random_tensor(4, 3, rng))
    D = 4
    np.testing.assert_allclose(np.einsum("asb,asc->bc", mc.AL.conj(), mc.AL), np.eye(D), atol=1e-10)
    np.testing.assert_allclose(np.einsum("asb,csb->ac", mc.AR, mc.AR.conj()), np.eye(D), atol=1e-10)
    np.testing.assert_allclose(np.tensordot(mc.AL, mc.C, axes=(2, 0)),
                               np.tensordot(mc.C, mc.AR, axes=(1, 0)), atol=1e-9)


def test_energy_and_gradient_against_finite_differences(rng):
    _, term, mpo = _random_model(rng)
    A = 1.7 * umps.random_tensor(4, 3, rng)
    e, G = umps.energy_and_gradient(A, mpo.W)
    assert e == pytest.approx(umps.energy_density(umps.normalize(A).A, term.h3), abs=1e-10)

    def f(B):
        return umps.energy_density(umps.normalize(B).A, term.h3)

    h = 1e-6
    for _ in range(3):
        X = rng.normal(size=A.shape) + 1j * rng.normal(size=A.shape)
        fd = (f(A + h * X) - f(A - h * X)) / (2 * h)
        assert 2 * np.real(np.vdot(G, X)) == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_mpo_energy_matches_dense(rng):
    _, term, mpo = _random_model(rng, wid=3)
    A = umps.normalize(umps.random_tensor(3, 3, rng)).A
    mc = umps.mixed_canonical(A)
    assert umps.mpo_energy(mpo, mc) == pytest.approx(umps.energy_density(A, term.h3), abs=1e-9)
    np.testing.assert_allclose(umps.mpo_local_term(mpo), term.h3, atol=1e-12)


def test_product_ground_state_with_commuting_observables():
    witness = get_witness(1)
    setup = oracle.noncontextual_setup(witness)
    term = hamiltonian_term(witness, setup.params)
    res = umps.ground_state(to_mpo(term), 1, rng=0, h3=term.h3, tol=1e-9)
    assert res.energy == pytest.approx(witness.classical_bound, abs=1e-9)


@pytest.mark.parametrize("wid", [1, 3])
def test_ground_state_within_finite_size_band(rng, wid):
    _, term, mpo = _random_model(rng, wid)
    res = umps.ground_state_restarts(mpo, 5, restarts=2, rng=rng, h3=term.h3)
    assert res.energy == pytest.approx(umps.energy_density(res.state.A, term.h3), abs=1e-10)
    assert res.energy <= oracle.exact_diag(term.h3, 6) + 0.05


def test_ground_state_never_worse_than_init(rng):
    _, term, mpo = _random_model(rng)
    A0 = umps.normalize(umps.random_tensor(2, 3, rng)).A
    res = umps.ground_state(mpo, 2, init=A0, h3=term.h3, max_iter=5)
    assert res.energy <= umps.energy_density(A0, term.h3) + 1e-12


def test_vumps_runs_and_reports_consistent_energy(rng):
    _, term, mpo = _random_model(rng, wid=3)
    res = umps.ground_state(mpo, 2, rng=rng, h3=term.h3, method="vumps", max_iter=50)
    assert np.isfinite(res.energy)
    assert res.energy == pytest.approx(umps.energy_density(umps.normalize(res.state.A).A, term.h3), abs=1e-8)


def test_unknown_solver_rejected(rng):
    _, _, mpo = _random_model(rng)
    with pytest.raises(ValueError):
        umps.ground_state(mpo, 2, method="dmrg")


def test_observable_descent_is_monotone():
    witness = get_witness(3)
    params = umps.random_params(7)
    sched = umps.DescentSchedule(points=4, solver_tol=1e-7)
    traj = umps.observable_descent(witness, params, 2, sched, rng=7)
    energies = [p.energy for p in traj]
    assert len(traj) >= 2
    assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))


def test_descent_rejects_nonfinite():
    params = ObservableParams([np.nan, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        umps.observable_descent(get_witness(1), params, 1, umps.DescentSchedule(points=2))


def test_start_seeds_deterministic():
    assert umps.start_seeds(3, 4) == umps.start_seeds(3, 4)
    assert len(set(umps.start_seeds(3, 4))) == 4


def test_save_load_roundtrip(tmp_path, rng):
    state = umps.UmpsState(umps.random_tensor(3, 3, rng))
    umps.save_umps(tmp_path / "a.json", state, {"witness_id": 2})
    back = umps.load_umps(tmp_path / "a.json")
    np.testing.assert_array_equal(back.A, state.A)
    assert back.meta["witness_id"] == 2
