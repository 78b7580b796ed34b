import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from ctxsim import encode
from ctxsim.encode import (
    ANTI_PROJECTOR,
    DICKE,
    SYM_PROJECTOR,
    Gate,
    GateProgram,
    compile_two_qutrit,
    encode_gate,
    encode_state,
    encode_two_qutrit,
    phase_aligned_residual,
)

SYM2 = np.kron(SYM_PROJECTOR, SYM_PROJECTOR)


def test_dicke_basis():
    np.testing.assert_allclose(DICKE.conj().T @ DICKE, np.eye(3), atol=1e-15)
    swap = encode.SWAP
    np.testing.assert_allclose(swap @ DICKE, DICKE, atol=1e-15)
    np.testing.assert_allclose(SYM_PROJECTOR + ANTI_PROJECTOR, np.eye(4), atol=1e-15)


def test_state_encoding_isometry(rng):
    v = rng.normal(size=27) + 1j * rng.normal(size=27)
    w = encode_state(v)
    assert w.size == 2**6
    assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v))
    np.testing.assert_allclose(encode.decode_state(w), v, atol=1e-12)
    assert encode.encoded_projector_expectation(w / np.linalg.norm(w)) == pytest.approx(1.0)


def test_state_encoding_rejects_bad_length():
    with pytest.raises(ValueError):
        encode_state(np.ones(10))


def test_single_gate_encoding(rng):
    for _ in range(20):
        U = unitary_group.rvs(3, random_state=rng)
        Ue = encode_gate(U)
        np.testing.assert_allclose(Ue @ Ue.conj().T, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(Ue @ SYM_PROJECTOR, SYM_PROJECTOR @ Ue, atol=1e-12)
        np.testing.assert_allclose(Ue @ DICKE, DICKE @ U, atol=1e-12)


def test_non_unitary_rejected():
    with pytest.raises(encode.NotUnitaryError):
        encode_gate(np.diag([1, 1, 2]))
    with pytest.raises(encode.NotUnitaryError):
        compile_two_qutrit(np.eye(9) * 1.1)


def test_two_level_decomposition(rng):
    for _ in range(20):
        U = unitary_group.rvs(3, random_state=rng)
        V01, V02, V12 = encode.two_level_decompose(U)
        np.testing.assert_allclose(V01 @ V02 @ V12, U, atol=1e-12)
        for V, (i, j) in ((V01, (0, 1)), (V02, (0, 2)), (V12, (1, 2))):
            k = 3 - i - j
            assert V[k, k] == pytest.approx(1.0)
            assert abs(V[k, i]) + abs(V[k, j]) + abs(V[i, k]) + abs(V[j, k]) < 1e-12


@pytest.mark.parametrize("levels", [(0, 1), (0, 2), (1, 2)])
def test_two_level_synthesis(rng, levels):
    V = encode.two_level(unitary_group.rvs(2, random_state=rng), *levels)
    prog = encode.synthesize_single(V)
    assert phase_aligned_residual(prog.matrix(), encode_gate(V)) < 1e-10


def test_gate_inverse(rng):
    for name, n in (("RY", 1), ("RZ", 1), ("PS", 1), ("X", 0), ("U", 4)):
        g = Gate(name, 1, tuple(rng.normal(size=n)), ((0, 0),))
        prog = GateProgram(2, [g, g.inverse()])
        np.testing.assert_allclose(prog.matrix(), np.eye(4), atol=1e-12)


def test_gate_validation():
    with pytest.raises(ValueError):
        Gate("RY", 0)
    with pytest.raises(ValueError):
        Gate("RY", 0, (0.1,), ((0, 1),))
    with pytest.raises(ValueError):
        Gate("CCZ", 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-6, 6), min_size=4, max_size=4))
def test_u2_angles_roundtrip(angles):
    V = encode.u2_from_angles(*angles)
    np.testing.assert_allclose(encode.u2_from_angles(*encode.u2_angles(V)), V, atol=1e-10)


def test_program_text_roundtrip(rng):
    U = unitary_group.rvs(9, random_state=rng)
    res = compile_two_qutrit(U, strict_complement=False)
    back = GateProgram.from_text(res.program.to_text(), n_qubits=4)
    assert back.gates == res.program.gates


def test_controlled_gate_semantics():
    # Open control fires on |0>.
    prog = GateProgram(2, [Gate("X", 1, (), ((0, 0),))])
    M = prog.matrix()
    np.testing.assert_allclose(M[:, 0], [0, 1, 0, 0])
    np.testing.assert_allclose(M[:, 2], [0, 0, 1, 0])


def test_qutrit_level_decomposition(rng):
    U = unitary_group.rvs(9, random_state=rng)
    factors = encode.qsd_two_qutrit(U)
    np.testing.assert_allclose(encode.product_of(factors), U, atol=1e-10)


def test_two_qutrit_compile_full_space(rng):
    U = unitary_group.rvs(9, random_state=rng)
    res = compile_two_qutrit(U)
    assert res.residual < 1e-8
    M = res.program.matrix()
    assert phase_aligned_residual(M, encode_two_qutrit(U)) < 1e-8
    np.testing.assert_allclose(M @ SYM2, SYM2 @ M, atol=1e-8)


def test_two_qutrit_compile_local_mode(rng):
    U = unitary_group.rvs(9, random_state=rng)
    res = compile_two_qutrit(U, strict_complement=False)
    EE = np.kron(DICKE, DICKE)
    assert phase_aligned_residual(EE.conj().T @ res.program.matrix() @ EE, U) < 1e-8
    assert res.counts["primitives"] < compile_two_qutrit(U).counts["primitives"]


def test_product_gate_stays_on_its_pair(rng):
    u = unitary_group.rvs(3, random_state=rng)
    res = compile_two_qutrit(np.kron(u, np.eye(3)), strict_complement=False)
    assert {w for g in res.program.gates for w in g.wires} <= {0, 1}


def test_identity_compiles_to_nothing():
    assert len(compile_two_qutrit(np.eye(9)).program) == 0


def test_product_encoding_differs_on_complement(rng):
    # The two-qutrit formula fixes every complement state; the tensor product
    # of single encodings does not (sym (x) singlet sectors).
    u, v = (unitary_group.rvs(3, random_state=rng) for _ in range(2))
    full = encode_two_qutrit(np.kron(u, v))
    prod = np.kron(encode_gate(u), encode_gate(v))
    np.testing.assert_allclose(full @ SYM2, prod @ SYM2, atol=1e-12)
    assert np.linalg.norm(full - prod) > 1e-3


def test_single_qutrit_compile(rng):
    for _ in range(10):
        U = unitary_group.rvs(3, random_state=rng)
        res = encode.compile_single_qutrit(U)
        assert res.residual < 1e-10
        assert res.program.n_qubits == 2
