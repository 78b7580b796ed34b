"""Contextuality witnesses, qutrit observables and the 322-type Hamiltonian.

The Hamiltonian is translation invariant with on-site, nearest-neighbour and
next-to-nearest-neighbour terms built from two dichotomic qutrit observables
``sigma_x`` and ``sigma_y``.  It is represented two ways: as a dense 27x27
term anchored on the leftmost of three sites, and as a finite-state-automaton
MPO consumed by the ground-state solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COUPLING_NAMES = (
    "J_x", "J_y",
    "J_xx_AB", "J_xy_AB", "J_yx_AB", "J_yy_AB",
    "J_xx_AC", "J_xy_AC", "J_yx_AC", "J_yy_AC",
)

# Couplings are stored in the order of COUPLING_NAMES. For the two-body blocks
# the first label is the observable on the left site.
_PAIR_INDEX = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class Witness:
    id: int
    classical_bound: float
    couplings: tuple[float, ...]
    quantum_limit: float | None = None

    def __post_init__(self) -> None:
        if len(self.couplings) != 10:
            raise ValueError(f"expected 10 couplings, got {len(self.couplings)}")

    @property
    def onsite(self) -> np.ndarray:
        return np.asarray(self.couplings[0:2], dtype=float)

    @property
    def nearest(self) -> np.ndarray:
        """2x2 matrix J^AB[a, b] multiplying sigma_a (x) sigma_b."""
        return np.asarray(self.couplings[2:6], dtype=float).reshape(2, 2)

    @property
    def next_nearest(self) -> np.ndarray:
        return np.asarray(self.couplings[6:10], dtype=float).reshape(2, 2)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "classical_bound": self.classical_bound,
            "couplings": list(self.couplings),
            "quantum_limit": self.quantum_limit,
        }


WITNESSES: dict[int, Witness] = {
    1: Witness(1, -6.0, (-6, 0, 2, 3, 3, -2, 3, -1, -1, 1), -6.32747),
    2: Witness(2, -6.0, (-4, 2, 2, 2, 2, -4, 1, -1, -1, 3), -6.33712),
    3: Witness(3, -3.0, (-3, 1, 1, 1, 1, -1, 1, 0, -1, 1), -3.20711),
    4: Witness(4, -4.0, (-2, -2, -2, 1, -1, -2, 1, 0, 2, 1), -4.14623),
    5: Witness(5, -8.0, (-11, 1, 5, 2, 2, -1, 4, -1, -2, 1), -8.12123),
}


def get_witness(witness_id: int) -> Witness:
    try:
        return WITNESSES[int(witness_id)]
    except KeyError:
        raise ValueError(f"unknown witness id {witness_id}; built-ins are 1..5") from None


def load_witness(path: str | Path, witness_id: int = 0) -> Witness:
    """Read a witness from a JSON file with keys ``classical_bound``,
    ``couplings`` (10 numbers) and optionally ``quantum_limit`` and ``id``."""
    data = json.loads(Path(path).read_text())
    return Witness(
        id=int(data.get("id", witness_id)),
        classical_bound=float(data["classical_bound"]),
        couplings=tuple(float(c) for c in data["couplings"]),
        quantum_limit=None if data.get("quantum_limit") is None else float(data["quantum_limit"]),
    )


def skew_basis() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return S_1 = E_12 - E_21, S_2 = E_13 - E_31, S_3 = E_23 - E_32."""
    basis = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        s = np.zeros((3, 3))
        s[i, j] = 1.0
        s[j, i] = -1.0
        basis.append(s)
    return tuple(basis)


_S = np.stack(skew_basis())


def rotation(w) -> np.ndarray:
    """exp(sum_k w_k S_k) via the Rodrigues formula."""
    w = np.asarray(w, dtype=float)
    k = np.tensordot(w, _S, axes=1)
    theta2 = float(w @ w)
    if theta2 < 1e-12:
        # Taylor coefficients of sin(t)/t and (1 - cos t)/t^2 to O(t^4).
        a = 1.0 - theta2 / 6.0 + theta2**2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2**2 / 720.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


@dataclass
class ObservableParams:
    """Parameters (w_x, w_y) and +-1 signatures of the two local observables."""

    w_x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_y: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lambda_x: tuple[int, int, int] = (1, 1, -1)
    lambda_y: tuple[int, int, int] = (1, 1, -1)
    allow_trivial: bool = False

    def __post_init__(self) -> None:
        self.w_x = np.asarray(self.w_x, dtype=float).reshape(3)
        self.w_y = np.asarray(self.w_y, dtype=float).reshape(3)
        for lam in (self.lambda_x, self.lambda_y):
            if any(v not in (1, -1) for v in lam):
                raise ValueError(f"signature entries must be +-1, got {lam}")
            if not self.allow_trivial and len(set(lam)) == 1:
                raise ValueError(f"signature {lam} makes the observable proportional to the identity")

    @property
    def W(self) -> np.ndarray:
        return np.concatenate([self.w_x, self.w_y])

    def with_W(self, W) -> ObservableParams:
        W = np.asarray(W, dtype=float)
        return ObservableParams(W[:3], W[3:], self.lambda_x, self.lambda_y, self.allow_trivial)

    def sigmas(self) -> tuple[np.ndarray, np.ndarray]:
        return observable(self.w_x, self.lambda_x), observable(self.w_y, self.lambda_y)


def observable(w_a, lambda_a) -> np.ndarray:
    """Dichotomic observable Q diag(lambda_a) Q^T with Q = exp(sum_k w_ak S_k)."""
    q = rotation(w_a)
    return q @ np.diag(np.asarray(lambda_a, dtype=float)) @ q.T


@dataclass
class LocalTerm:
    """Three-site energy density operator, plus the range decomposition that
    generated it.

    ``branches`` holds triples ``(left, right_d1, right_d2)`` such that the
    two-body part of the Hamiltonian is
    ``sum left^i right_d1^{i+1} + left^i right_d2^{i+2}``.
    """

    h3: np.ndarray
    onsite: np.ndarray
    branches: list[tuple[np.ndarray, np.ndarray, np.ndarray]]


def assemble_h3(onsite, branches) -> np.ndarray:
    eye = np.eye(3)
    h3 = np.kron(np.kron(onsite, eye), eye).astype(complex)
    for left, right1, right2 in branches:
        h3 += np.kron(np.kron(left, right1), eye)
        h3 += np.kron(np.kron(left, eye), right2)
    return h3


def local_term(witness: Witness, sigma_x: np.ndarray, sigma_y: np.ndarray) -> LocalTerm:
    sig = (np.asarray(sigma_x), np.asarray(sigma_y))
    jx, jy = witness.onsite
    onsite = jx * sig[0] + jy * sig[1]
    nn, nnn = witness.nearest, witness.next_nearest
    branches = []
    for a in range(2):
        right1 = nn[a, 0] * sig[0] + nn[a, 1] * sig[1]
        right2 = nnn[a, 0] * sig[0] + nnn[a, 1] * sig[1]
        branches.append((sig[a], right1, right2))
    return LocalTerm(assemble_h3(onsite, branches), onsite, branches)


def hamiltonian_term(witness: Witness, params: ObservableParams) -> LocalTerm:
    return local_term(witness, *params.sigmas())


@dataclass
class HamiltonianMpo:
    """Upper-triangular MPO tensor ``W[a, b, s, t]`` (a: left bond, b: right
    bond, s: bra, t: ket).  Bond state 0 means "nothing placed yet", the last
    state means "term completed"."""

    W: np.ndarray

    @property
    def bond_dim(self) -> int:
        return self.W.shape[0]


def to_mpo(term: LocalTerm, atol: float = 1e-12) -> HamiltonianMpo:
    """Build the finite-state-automaton MPO for a decomposed local term.

    Raises:
        ValueError: if the operator lists do not recombine into ``term.h3``.
    """
    rebuilt = assemble_h3(term.onsite, term.branches)
    if not np.allclose(rebuilt, term.h3, atol=atol, rtol=0):
        raise ValueError("operator lists do not reproduce h3")

    d = term.onsite.shape[0]
    eye = np.eye(d)
    # Drop branches that never complete; keep per-branch states only when used.
    used = []
    for left, r1, r2 in term.branches:
        has1 = np.any(r1 != 0) and np.any(left != 0)
        has2 = np.any(r2 != 0) and np.any(left != 0)
        if has1 or has2:
            used.append((left, r1 if has1 else None, r2 if has2 else None))

    states = 1
    slots = []
    for left, r1, r2 in used:
        s1 = states
        states += 1
        s2 = None
        if r2 is not None:
            s2 = states
            states += 1
        slots.append((s1, s2))
    chi = states + 1
    final = chi - 1

    W = np.zeros((chi, chi, d, d), dtype=complex)
    W[0, 0] = eye
    W[final, final] = eye
    W[0, final] = term.onsite
    for (left, r1, r2), (s1, s2) in zip(used, slots):
        W[0, s1] = left
        if r1 is not None:
            W[s1, final] = r1
        if s2 is not None:
            W[s1, s2] = eye
            W[s2, final] = r2
    return HamiltonianMpo(W)
