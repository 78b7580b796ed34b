"""Symmetric (Dicke) qutrit-to-qubit encoding and gate synthesis.

Each qutrit maps onto the symmetric subspace of a qubit pair:
``|0> -> |00>``, ``|1> -> (|01> + |10>)/sqrt2``, ``|2> -> |11>``.  The
antisymmetric singlet ``|S_a>`` is left untouched by every encoded gate.
Qubit 0 of a pair is the more significant bit.

Two-qutrit unitaries are compiled in two stages: a block cosine-sine
decomposition into single-qutrit gates and two-level rotations controlled
on a qutrit basis state, then a lowering of those onto qubit primitives.
Every program returned from this module has been checked against its dense
target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cossin

SQ2 = math.sqrt(0.5)

# Columns are |S_0>, |S_1>, |S_2> in the computational basis |00>,|01>,|10>,|11>.
DICKE = np.array(
    [[1, 0, 0],
     [0, SQ2, 0],
     [0, SQ2, 0],
     [0, 0, 1]],
    dtype=complex,
)
SINGLET = np.array([0, SQ2, -SQ2, 0], dtype=complex)
SYM_PROJECTOR = DICKE @ DICKE.conj().T
ANTI_PROJECTOR = np.outer(SINGLET, SINGLET.conj())
SWAP = np.eye(4)[[0, 2, 1, 3]]


class CompileError(RuntimeError):
    """A synthesized program failed verification against its target."""


class NotUnitaryError(ValueError):
    pass


def _check_unitary(U: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise NotUnitaryError(f"expected a square matrix, got shape {U.shape}")
    err = np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]))
    if err > atol:
        raise NotUnitaryError(f"matrix is not unitary (|U^dag U - I| = {err:.3e})")
    return U


# --------------------------------------------------------------------------
# states


def encode_state(state) -> np.ndarray:
    """Map a qutrit state (dense 3^n vector or anything with ``to_dense``)
    onto 2n qubits."""
    if hasattr(state, "to_dense"):
        state = state.to_dense()
    v = np.asarray(state, dtype=complex).reshape(-1)
    n = round(math.log(v.size, 3))
    if 3**n != v.size:
        raise ValueError(f"length {v.size} is not a power of 3")
    t = v.reshape((3,) * n)
    for axis in range(n):
        t = np.moveaxis(np.tensordot(DICKE, t, axes=(1, axis)), 0, axis)
    return t.reshape(-1)


def decode_state(state: np.ndarray) -> np.ndarray:
    """Project a 2n-qubit vector onto the encoded subspace and return the
    qutrit amplitudes (E^dagger applied pairwise)."""
    v = np.asarray(state, dtype=complex).reshape(-1)
    n = round(math.log(v.size, 4))
    t = v.reshape((4,) * n)
    for axis in range(n):
        t = np.moveaxis(np.tensordot(DICKE.conj().T, t, axes=(1, axis)), 0, axis)
    return t.reshape(-1)


def encoded_projector_expectation(state: np.ndarray) -> float:
    """Weight of a qubit state inside the encoded subspace."""
    return float(np.linalg.norm(decode_state(state)) ** 2)


# --------------------------------------------------------------------------
# gates


def encode_gate(U: np.ndarray) -> np.ndarray:
    """U_enc = E U E^dagger + |S_a><S_a|."""
    U = _check_unitary(U)
    if U.shape != (3, 3):
        raise ValueError("encode_gate expects a 3x3 unitary")
    return DICKE @ U @ DICKE.conj().T + ANTI_PROJECTOR


def encode_two_qutrit(U: np.ndarray) -> np.ndarray:
    """(E (x) E) U (E (x) E)^dagger plus the identity on the complement of
    the doubly-symmetric subspace."""
    U = _check_unitary(U)
    if U.shape != (9, 9):
        raise ValueError("encode_two_qutrit expects a 9x9 unitary")
    EE = np.kron(DICKE, DICKE)
    return EE @ U @ EE.conj().T + (np.eye(16) - np.kron(SYM_PROJECTOR, SYM_PROJECTOR))


def two_level(V: np.ndarray, i: int, j: int, dim: int = 3) -> np.ndarray:
    """Embed a 2x2 block on levels (i, j)."""
    M = np.eye(dim, dtype=complex)
    M[np.ix_([i, j], [i, j])] = V
    return M


def _givens(a: complex, b: complex) -> np.ndarray:
    """Unitary G with G @ (a, b) = (|(a, b)|, 0)."""
    r = math.hypot(abs(a), abs(b))
    if r < 1e-300:
        return np.eye(2, dtype=complex)
    return np.array([[np.conj(a), np.conj(b)], [-b, a]], dtype=complex) / r


def two_level_decompose(U: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factor a single-qutrit unitary as ``V01 @ V02 @ V12``."""
    U = _check_unitary(U)
    col = U[:, 0]
    g1 = _givens(col[0], col[1])
    V01 = two_level(g1.conj().T, 0, 1)
    u1 = V01.conj().T @ U
    g2 = _givens(u1[0, 0], u1[2, 0])
    V02 = two_level(g2.conj().T, 0, 2)
    V12 = V02.conj().T @ u1
    # Column 0 is now e_0; clean rounding noise so the pattern is exact.
    V12[0, :] = [1, 0, 0]
    V12[:, 0] = [1, 0, 0]
    return V01, V02, V12


# --------------------------------------------------------------------------
# qubit primitives and programs


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def phase_shift(theta: float) -> np.ndarray:
    return np.diag([1.0, np.exp(1j * theta)])


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)


def u2_from_angles(alpha: float, beta: float, gamma: float, delta: float) -> np.ndarray:
    """exp(i delta) Rz(alpha) Ry(beta) Rz(gamma)."""
    return np.exp(1j * delta) * (rz(alpha) @ ry(beta) @ rz(gamma))


def u2_angles(V: np.ndarray) -> tuple[float, float, float, float]:
    """Inverse of ``u2_from_angles`` (ZYZ Euler angles plus phase)."""
    V = np.asarray(V, dtype=complex)
    det = np.linalg.det(V)
    delta = 0.5 * np.angle(det)
    W = V * np.exp(-1j * delta)
    beta = 2 * math.atan2(abs(W[1, 0]), abs(W[0, 0]))
    # W = [[e^{-i(a+g)/2} c, -e^{-i(a-g)/2} s], [e^{i(a-g)/2} s, e^{i(a+g)/2} c]]
    if abs(W[0, 0]) > 1e-12 and abs(W[1, 0]) > 1e-12:
        ssum = 2 * np.angle(W[1, 1])
        sdiff = 2 * np.angle(W[1, 0])
    elif abs(W[0, 0]) > 1e-12:
        ssum, sdiff = 2 * np.angle(W[1, 1]), 0.0
    else:
        ssum, sdiff = 0.0, 2 * np.angle(W[1, 0])
    alpha = 0.5 * (ssum + sdiff)
    gamma = 0.5 * (ssum - sdiff)
    rebuilt = u2_from_angles(alpha, beta, gamma, delta)
    if not np.allclose(rebuilt, V, atol=1e-9):
        # W was determined only up to sign by sqrt(det); fold the sign into delta.
        delta += math.pi
        rebuilt = u2_from_angles(alpha, beta, gamma, delta)
    return float(alpha), float(beta), float(gamma), float(delta)


_BASE = {
    "RY": (1, lambda p: ry(p[0])),
    "RZ": (1, lambda p: rz(p[0])),
    "PS": (1, lambda p: phase_shift(p[0])),
    "X": (0, lambda p: PAULI_X),
    "U": (4, lambda p: u2_from_angles(*p)),
}


@dataclass(frozen=True)
class Gate:
    """Single-target qubit primitive, optionally controlled.

    ``controls`` is a tuple of ``(wire, value)``; value 1 means the gate fires
    on |1> (filled dot), 0 on |0> (open dot).
    """

    name: str
    target: int
    params: tuple[float, ...] = ()
    controls: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.name not in _BASE:
            raise ValueError(f"unknown primitive {self.name!r}")
        n = _BASE[self.name][0]
        if len(self.params) != n:
            raise ValueError(f"{self.name} takes {n} parameters, got {len(self.params)}")
        wires = [self.target] + [w for w, _ in self.controls]
        if len(set(wires)) != len(wires):
            raise ValueError(f"wire collision in {self}")

    @property
    def base_matrix(self) -> np.ndarray:
        return _BASE[self.name][1](self.params)

    @property
    def wires(self) -> tuple[int, ...]:
        return tuple(w for w, _ in self.controls) + (self.target,)

    def inverse(self) -> Gate:
        if self.name in ("RY", "RZ", "PS"):
            return Gate(self.name, self.target, (-self.params[0],), self.controls)
        if self.name == "X":
            return self
        a, b, g, dl = self.params
        return Gate("U", self.target, (-g, -b, -a, -dl), self.controls)


def apply_gate(state: np.ndarray, gate: Gate, n_qubits: int) -> np.ndarray:
    """Apply a primitive to a dense state (vector, or matrix whose columns
    are states)."""
    psi = np.asarray(state, dtype=complex)
    extra = psi.shape[1:] if psi.ndim > 1 else ()
    t = psi.reshape((2,) * n_qubits + extra)
    idx = [slice(None)] * t.ndim
    for w, v in gate.controls:
        idx[w] = v
    idx = tuple(idx)
    sub = t[idx]
    # Axis number of the target inside the controlled slice.
    tgt = gate.target - sum(1 for w, _ in gate.controls if w < gate.target)
    sub = np.moveaxis(np.tensordot(gate.base_matrix, sub, axes=(1, tgt)), 0, tgt)
    t = t.copy()
    t[idx] = sub
    return t.reshape(psi.shape)


@dataclass
class GateProgram:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.gates)

    def extend(self, other) -> None:
        self.gates.extend(other.gates if isinstance(other, GateProgram) else other)

    def matrix(self) -> np.ndarray:
        M = np.eye(2**self.n_qubits, dtype=complex)
        for g in self.gates:
            M = apply_gate(M, g, self.n_qubits)
        return M

    def inverse(self) -> GateProgram:
        return GateProgram(self.n_qubits, [g.inverse() for g in reversed(self.gates)])

    def counts(self) -> dict[str, int]:
        multi = sum(1 for g in self.gates if g.controls)
        return {
            "primitives": len(self.gates),
            "two_qubit": sum(1 for g in self.gates if len(g.controls) == 1),
            "controlled": multi,
            "max_controls": max((len(g.controls) for g in self.gates), default=0),
        }

    def to_text(self) -> str:
        return "".join(format_gate(g) + "\n" for g in self.gates)

    @classmethod
    def from_text(cls, text: str, n_qubits: int | None = None) -> GateProgram:
        gates = [parse_gate(line) for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
        if n_qubits is None:
            n_qubits = 1 + max((max(g.wires) for g in gates), default=-1)
        return cls(n_qubits, gates)


def format_gate(g: Gate) -> str:
    """``NAME [w:v ...] target [| p1 p2 ...]``; parameters use 17 significant digits."""
    parts = [g.name] + [f"{w}:{v}" for w, v in g.controls] + [str(g.target)]
    if g.params:
        parts.append("|")
        parts.extend(f"{p:.17g}" for p in g.params)
    return " ".join(parts)


def parse_gate(line: str) -> Gate:
    head, _, tail = line.partition("|")
    tokens = head.split()
    if not tokens:
        raise ValueError(f"empty gate line: {line!r}")
    name = tokens[0]
    controls = []
    target = None
    for tok in tokens[1:]:
        if ":" in tok:
            w, v = tok.split(":")
            if v not in ("0", "1"):
                raise ValueError(f"control polarity must be 0 or 1 in {line!r}")
            controls.append((int(w), int(v)))
        else:
            if target is not None:
                raise ValueError(f"more than one target in {line!r}")
            target = int(tok)
    if target is None:
        raise ValueError(f"missing target wire in {line!r}")
    params = tuple(float(p) for p in tail.split())
    return Gate(name, target, params, tuple(controls))


# --------------------------------------------------------------------------
# verification helpers


def phase_aligned_residual(M: np.ndarray, target: np.ndarray) -> float:
    """Frobenius residual after removing a global phase, the phase fixed on
    the target's largest-magnitude entry."""
    idx = np.unravel_index(np.argmax(np.abs(target)), target.shape)
    if abs(M[idx]) < 1e-300:
        return float(np.linalg.norm(M - target))
    phase = (target[idx] / M[idx]) / abs(target[idx] / M[idx])
    return float(np.linalg.norm(phase * M - target))


def _embed_pair_op(op4: np.ndarray, pair: tuple[int, int], n_qubits: int) -> np.ndarray:
    """Dense matrix of a 4x4 operator on two wires (diagnostics only)."""
    I = np.eye(2**n_qubits, dtype=complex)
    t = I.reshape((2,) * n_qubits + (-1,))
    t = np.moveaxis(t, pair, (0, 1))
    shp = t.shape
    t = (op4 @ t.reshape(4, -1)).reshape(shp)
    return np.moveaxis(t, (0, 1), pair).reshape(2**n_qubits, -1)


# --------------------------------------------------------------------------
# single-pair synthesis


def _pair_frame(a: int, b: int) -> list[Gate]:
    """Gates rotating the Dicke basis of pair (a, b) onto computational basis
    states: S_0 -> |00>, S_1 -> -|10>, S_2 -> |01>, S_a -> |11>."""
    return [Gate("X", a, (), ((b, 1),)), Gate("RY", b, (-math.pi / 2,), ((a, 1),))]


def _frame_images(frame: list[Gate], a: int, b: int):
    """Computational-basis image (bits, phase) of S_0, S_1, S_2, S_a."""
    prog = GateProgram(2, [_relabel(g, {a: 0, b: 1}) for g in frame])
    M = prog.matrix()
    vecs = [DICKE[:, 0], DICKE[:, 1], DICKE[:, 2], SINGLET]
    out = []
    for v in vecs:
        img = M @ v
        k = int(np.argmax(np.abs(img)))
        if abs(abs(img[k]) - 1) > 1e-12:
            raise CompileError("pair frame does not map the Dicke basis to basis states")
        out.append(((k >> 1) & 1, k & 1, img[k]))
    return out


def _relabel(g: Gate, mapping: dict[int, int]) -> Gate:
    return Gate(g.name, mapping[g.target], g.params, tuple((mapping[w], v) for w, v in g.controls))


def _two_level_core(V: np.ndarray, i: int, j: int, a: int, b: int, extra_controls=()):
    """Frame gates and the single controlled primitive realising the
    two-level block V on Dicke levels (i, j) of pair (a, b)."""
    frame = _pair_frame(a, b)
    images = _frame_images(frame, a, b)
    (ai, bi, pi), (aj, bj, pj) = images[i], images[j]
    if ai != aj and bi != bj:
        # Levels differ in both bits: a CNOT makes them adjacent.
        frame = frame + [Gate("X", b, (), ((a, 1),))]
        images = _frame_images(frame, a, b)
        (ai, bi, pi), (aj, bj, pj) = images[i], images[j]
    if ai == aj:
        target, control, cval = b, a, ai
        ti, tj = bi, bj
    else:
        target, control, cval = a, b, bi
        ti, tj = ai, aj
    # Block in the frame basis (x_i, x_j): M = diag(p) V diag(p)^*.
    p = np.array([pi, pj])
    M = p[:, None] * np.asarray(V) * p.conj()[None, :]
    if ti == 1:
        M = M[::-1, ::-1]
    core = Gate("U", target, u2_angles(M), ((control, cval),) + tuple(extra_controls))
    return frame, core


def synthesize_single(V: np.ndarray, wires: tuple[int, int] = (0, 1), levels: tuple[int, int] | None = None,
                      n_qubits: int | None = None, atol: float = 1e-10) -> GateProgram:
    """Qubit program for the encoded two-level qutrit gate ``V`` on a pair.

    ``levels`` defaults to the two levels on which V acts nontrivially.
    """
    V = _check_unitary(V)
    a, b = wires
    n = n_qubits if n_qubits is not None else max(a, b) + 1
    if levels is None:
        levels = _active_levels(V)
    prog = GateProgram(n)
    if levels is None:
        return prog
    i, j = levels
    block = V[np.ix_([i, j], [i, j])]
    frame, core = _two_level_core(block, i, j, a, b)
    prog.extend(frame)
    prog.gates.append(core)
    prog.extend(GateProgram(n, frame).inverse())
    target = encode_gate(V)
    got = _restrict(prog, (a, b))
    res = phase_aligned_residual(got, target)
    if res > atol:
        raise CompileError(f"single-pair synthesis residual {res:.3e}")
    return prog


def _restrict(prog: GateProgram, pair: tuple[int, int]) -> np.ndarray:
    sub = GateProgram(2, [_relabel(g, {pair[0]: 0, pair[1]: 1}) for g in prog.gates])
    return sub.matrix()


def _active_levels(V: np.ndarray, atol: float = 1e-13):
    off = np.abs(V - np.eye(3)) > atol
    touched = sorted(set(np.nonzero(off.any(axis=0) | off.any(axis=1))[0].tolist()))
    if not touched:
        return None
    if len(touched) == 1:
        k = touched[0]
        return (k, 0 if k != 0 else 1) if k != 0 else (0, 1)
    if len(touched) == 2:
        return tuple(touched)
    raise ValueError("matrix is not a two-level unitary")


# --------------------------------------------------------------------------
# two-qutrit decomposition (qutrit level)


@dataclass
class SingleQutrit:
    wire: int
    matrix: np.ndarray


@dataclass
class ControlledTwoLevel:
    """Two-level rotation ``matrix`` on ``levels`` of ``target``, applied
    when qutrit ``control`` is in basis state ``value``."""

    target: int
    levels: tuple[int, int]
    control: int
    value: int
    matrix: np.ndarray
    kind: str = "U"


def factor_matrix(f) -> np.ndarray:
    """9x9 matrix of a qutrit factor (wire 0 is the more significant digit)."""
    if isinstance(f, SingleQutrit):
        return np.kron(f.matrix, np.eye(3)) if f.wire == 0 else np.kron(np.eye(3), f.matrix)
    proj = np.zeros((3, 3))
    proj[f.value, f.value] = 1
    op = two_level(f.matrix, *f.levels)
    if f.target == 1:
        return np.kron(proj, op) + np.kron(np.eye(3) - proj, np.eye(3))
    return np.kron(op, proj) + np.kron(np.eye(3), np.eye(3) - proj)


def product_of(factors) -> np.ndarray:
    """Matrix of a factor list in circuit order (first element applied first)."""
    M = np.eye(9, dtype=complex)
    for f in factors:
        M = factor_matrix(f) @ M
    return M


def _separable(U: np.ndarray, atol: float = 1e-12):
    """Return (A, B) with U = A (x) B, or None."""
    R = U.reshape(3, 3, 3, 3).transpose(0, 2, 1, 3).reshape(9, 9)
    u, s, vh = np.linalg.svd(R)
    if s[1] > atol:
        return None
    A = (u[:, 0] * np.sqrt(s[0])).reshape(3, 3)
    B = (vh[0] * np.sqrt(s[0])).reshape(3, 3)
    # Fix the scalar ambiguity so both factors are unitary.
    c = np.linalg.det(A) ** (1 / 3)
    A, B = A / c, B * c
    nA = np.sqrt(np.trace(A.conj().T @ A).real / 3)
    A, B = A / nA, B * nA
    # A factor proportional to the identity carries only a phase; move it.
    for first in (True, False):
        X, Y = (B, A) if first else (A, B)
        ph = X[0, 0]
        if abs(abs(ph) - 1) < 1e-10 and np.allclose(X, ph * np.eye(3), atol=atol):
            X, Y = np.eye(3, dtype=complex), Y * ph
            A, B = (Y, X) if first else (X, Y)
            break
    return A, B


def _is_identity(M: np.ndarray, atol: float = 1e-13) -> bool:
    return bool(np.allclose(M, np.eye(M.shape[0]), atol=atol, rtol=0))


def _controlled_unitary(V: np.ndarray, target: int, control: int, value: int) -> list:
    """Qutrit-controlled V as single-qutrit basis changes, a phase on the
    control level and controlled two-level Rz rotations."""
    if _is_identity(V):
        return []
    # Schur form of a normal matrix gives a unitary eigenbasis even for
    # degenerate spectra.
    from scipy.linalg import schur

    T, Q = schur(V, output="complex")
    phi = np.angle(np.diag(T))
    alpha = phi.mean()
    t01 = 2 * (phi[1] - alpha)
    t02 = 2 * (phi[2] - alpha)
    out = []
    if not _is_identity(Q.conj().T):
        out.append(SingleQutrit(target, Q.conj().T))
    for levels, th in (((0, 1), t01), ((0, 2), t02)):
        if abs(th) > 1e-14:
            out.append(ControlledTwoLevel(target, levels, control, value, rz(th), "RZ"))
    if abs(alpha) > 1e-14:
        pm = np.eye(3, dtype=complex)
        pm[value, value] = np.exp(1j * alpha)
        out.append(SingleQutrit(control, pm))
    if not _is_identity(Q):
        out.append(SingleQutrit(target, Q))
    return out


def _cs_rotations(cs: np.ndarray, atol: float = 1e-14) -> list:
    """Read the two-level rotations out of a cosine-sine middle factor."""
    out = []
    n = cs.shape[0]
    seen = set()
    for i in range(n):
        if i in seen:
            continue
        partners = [j for j in range(n) if j != i and abs(cs[i, j]) > atol]
        if not partners:
            if abs(cs[i, i] - 1) > 1e-12:
                raise CompileError("unexpected diagonal entry in cosine-sine factor")
            continue
        j = partners[0]
        seen.update((i, j))
        block = cs[np.ix_([i, j], [i, j])]
        ai, bi = divmod(i, 3)
        aj, bj = divmod(j, 3)
        if bi == bj:
            out.append(ControlledTwoLevel(0, (ai, aj), 1, bi, block, "RY"))
        elif ai == aj:
            out.append(ControlledTwoLevel(1, (bi, bj), 0, ai, block, "RY"))
        else:
            raise CompileError("cosine-sine rotation couples states differing in both qutrits")
    return out


def _block_diag_factors(M: np.ndarray, blocks) -> list:
    """Factors for a block-diagonal 9x9 matrix whose 3x3 blocks are indexed
    by the value of qutrit 0."""
    out = []
    for a in blocks:
        sl = slice(3 * a, 3 * a + 3)
        out.extend(_controlled_unitary(M[sl, sl], target=1, control=0, value=a))
    return out


def qsd_two_qutrit(U: np.ndarray, atol: float = 1e-10) -> list:
    """Decompose a two-qutrit unitary into single-qutrit gates and
    controlled two-level rotations (circuit order).

    The 9 = 3 + 3 + 3 partition is handled by a (6, 3) cosine-sine split
    followed by a (3, 3) split of the upper block, so the elimination
    proceeds from the highest index block downward.
    """
    U = _check_unitary(U)
    if U.shape != (9, 9):
        raise ValueError("qsd_two_qutrit expects a 9x9 unitary")
    if _is_identity(U, 1e-14):
        return []
    sep = _separable(U)
    if sep is not None:
        A, B = sep
        factors = [SingleQutrit(w, M) for w, M in ((0, A), (1, B)) if not _is_identity(M)]
    else:
        u, cs, vdh = cossin(U, p=6, q=6)
        u1, csu, vu = cossin(u[:6, :6], p=3, q=3)
        v1, csv, vv = cossin(vdh[:6, :6], p=3, q=3)
        factors = []
        # U = u cs vdh with u = diag(u1, u2) and u1 = a csu b, etc.
        factors += _block_diag_factors(_pad6(vv), (0, 1))
        factors += _cs_rotations(_pad6(csv))
        factors += _block_diag_factors(_pad6(v1), (0, 1))
        factors += _block_diag_factors(vdh, (2,))
        factors += _cs_rotations(cs)
        factors += _block_diag_factors(_pad6(vu), (0, 1))
        factors += _cs_rotations(_pad6(csu))
        factors += _block_diag_factors(_pad6(u1), (0, 1))
        factors += _block_diag_factors(u, (2,))
    res = phase_aligned_residual(product_of(factors), U)
    if res > atol:
        raise CompileError(f"two-qutrit decomposition residual {res:.3e}")
    return factors


def _pad6(M6: np.ndarray) -> np.ndarray:
    M = np.eye(9, dtype=complex)
    M[:6, :6] = M6
    return M


# --------------------------------------------------------------------------
# two-qutrit compilation (qubit level)

PAIRS = ((0, 1), (2, 3))


def _lower_single(M: np.ndarray, pair, n: int, controls=()) -> GateProgram:
    prog = GateProgram(n)
    # U = V01 V02 V12: V12 acts first.
    for V in reversed(two_level_decompose(M)):
        levels = _active_levels(V)
        if levels is None:
            continue
        i, j = levels
        frame, core = _two_level_core(V[np.ix_([i, j], [i, j])], i, j, *pair)
        core = Gate(core.name, core.target, core.params, core.controls + tuple(controls))
        prog.extend(frame)
        prog.gates.append(core)
        prog.extend(GateProgram(n, frame).inverse())
    return prog


def _control_frame(pair, value: int):
    frame = _pair_frame(*pair)
    images = _frame_images(frame, *pair)
    ba, bb, _ = images[value]
    return frame, ((pair[0], ba), (pair[1], bb))


def _lower_controlled(f: ControlledTwoLevel, n: int) -> GateProgram:
    tpair, cpair = PAIRS[f.target], PAIRS[f.control]
    cframe, cctrl = _control_frame(cpair, f.value)
    i, j = f.levels
    frame, core = _two_level_core(f.matrix, i, j, *tpair, extra_controls=cctrl)
    prog = GateProgram(n)
    prog.extend(cframe)
    prog.extend(frame)
    prog.gates.append(core)
    prog.extend(GateProgram(n, frame).inverse())
    prog.extend(GateProgram(n, cframe).inverse())
    return prog


@dataclass
class CompileResult:
    program: GateProgram
    factors: list
    residual: float
    counts: dict


def compile_single_qutrit(U: np.ndarray, atol: float = 1e-8) -> CompileResult:
    """Compile a 3x3 unitary to a verified 2-qubit program equal to
    ``encode_gate(U)`` up to a global phase."""
    U = _check_unitary(U)
    if U.shape != (3, 3):
        raise ValueError("compile_single_qutrit expects a 3x3 unitary")
    prog = _lower_single(U, (0, 1), 2)
    res = phase_aligned_residual(prog.matrix(), encode_gate(U))
    if res > atol:
        raise CompileError(f"compiled program residual {res:.3e} exceeds {atol:g}")
    return CompileResult(prog, list(two_level_decompose(U)), res, prog.counts())


def compile_two_qutrit(U: np.ndarray, strict_complement: bool = True, atol: float = 1e-8) -> CompileResult:
    """Compile a 9x9 unitary to a verified 4-qubit program.

    With ``strict_complement`` every single-qutrit gate is emitted as three
    copies controlled on the other qutrit's basis states, so the program
    equals ``encode_two_qutrit(U)`` on all 16 dimensions (identity whenever
    either pair is in the singlet).  Without it, single-qutrit gates act
    only on their own pair; the program then agrees with the target on the
    doubly-symmetric subspace and is verified there.
    """
    U = _check_unitary(U)
    factors = qsd_two_qutrit(U)
    n = 4
    prog = GateProgram(n)
    for f in factors:
        if isinstance(f, SingleQutrit):
            pair = PAIRS[f.wire]
            if strict_complement:
                other = PAIRS[1 - f.wire]
                for m in range(3):
                    cframe, cctrl = _control_frame(other, m)
                    prog.extend(cframe)
                    prog.extend(_lower_single(f.matrix, pair, n, controls=cctrl))
                    prog.extend(GateProgram(n, cframe).inverse())
            else:
                prog.extend(_lower_single(f.matrix, pair, n))
        else:
            prog.extend(_lower_controlled(f, n))
    M = prog.matrix()
    target = encode_two_qutrit(U)
    if strict_complement:
        res = phase_aligned_residual(M, target)
    else:
        EE = np.kron(DICKE, DICKE)
        res = phase_aligned_residual(EE.conj().T @ M @ EE, U)
        leak = np.linalg.norm(M @ np.kron(SYM_PROJECTOR, SYM_PROJECTOR) - np.kron(SYM_PROJECTOR, SYM_PROJECTOR) @ M)
        res = max(res, float(leak))
    if res > atol:
        raise CompileError(f"compiled program residual {res:.3e} exceeds {atol:g}")
    return CompileResult(prog, factors, res, prog.counts())
