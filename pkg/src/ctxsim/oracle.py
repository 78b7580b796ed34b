"""Brute-force references used to check the production code paths.

Nothing here calls into the contraction, eigensolver or simulator code it
is meant to check: reduced states are summed index by index, chains are
diagonalised with a sparse Lanczos solver, classical bounds come from
enumerating periodic deterministic assignments, and circuits are simulated
directly on qutrits.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .hamiltonian import ObservableParams, Witness

MAX_ED_SITES = 8


def dense_rho3(A: np.ndarray, l: np.ndarray, r: np.ndarray) -> np.ndarray:
    """rho[(s1 s2 s3), (t1 t2 t3)] = Tr(l A^s1 A^s2 A^s3 r (A^t1 A^t2 A^t3)^dag),
    by explicit loops over physical indices."""
    A = np.asarray(A, dtype=complex)
    D, d, _ = A.shape
    if D > 9:
        raise ValueError("dense_rho3 is limited to D <= 9")
    mats = [A[:, s, :] for s in range(d)]
    prods = []
    for s1 in range(d):
        for s2 in range(d):
            for s3 in range(d):
                prods.append(mats[s1] @ mats[s2] @ mats[s3])
    n = d**3
    rho = np.zeros((n, n), dtype=complex)
    for i in range(n):
        left = l @ prods[i] @ r
        for j in range(n):
            acc = 0.0j
            Mj = prods[j]
            for a in range(D):
                for b in range(D):
                    acc += left[a, b] * np.conj(Mj[a, b])
            rho[i, j] = acc
    return rho


def dense_fixed_points(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, complex]:
    """Fixed points of sum_s A^s . A^s^dag via an explicit D^2 x D^2 matrix built
    entry by entry; returns (l, r, leading eigenvalue) with Tr(r) = 1, Tr(lr) = 1."""
    A = np.asarray(A, dtype=complex)
    D, d, _ = A.shape
    T = np.zeros((D * D, D * D), dtype=complex)
    # (T r)[a, c] = sum_s sum_{b, e} A[a, s, b] r[b, e] conj(A[c, s, e])
    for a in range(D):
        for c in range(D):
            for b in range(D):
                for e in range(D):
                    T[a * D + c, b * D + e] = sum(A[a, s, b] * np.conj(A[c, s, e]) for s in range(d))
    vals, vecs = sla.eig(T)
    k = np.argmax(vals.real)
    lam = vals[k]
    r = vecs[:, k].reshape(D, D)
    vals_l, vecs_l = sla.eig(T.T)
    kl = np.argmax(vals_l.real)
    # Left eigenvector of T as a matrix: (l T)[b, e] = sum l[a, c] T[(a c), (b e)];
    # as an operator l acts through Tr(l r), i.e. its transpose pairs with r.
    l = vecs_l[:, kl].reshape(D, D).T
    r = r / np.trace(r)
    r = 0.5 * (r + r.conj().T)
    l = 0.5 * (l + l.conj().T)
    l = l / np.trace(l @ r)
    return l, r, lam


def _chain_hamiltonian(h3: np.ndarray, n: int, periodic: bool) -> spla.LinearOperator:
    d = round(h3.shape[0] ** (1 / 3))
    h = np.asarray(h3, dtype=complex).reshape((d,) * 6)
    anchors = range(n) if periodic else range(n - 2)
    N = d**n

    def matvec(x):
        psi = np.asarray(x, dtype=complex).reshape((d,) * n)
        out = np.zeros_like(psi)
        for i in anchors:
            sites = [i, (i + 1) % n, (i + 2) % n]
            t = np.tensordot(h, psi, axes=([3, 4, 5], sites))
            out += np.moveaxis(t, [0, 1, 2], sites)
        return out.reshape(-1)

    return spla.LinearOperator((N, N), matvec=matvec, dtype=complex)


def exact_diag(h3: np.ndarray, n_sites: int, periodic: bool = True) -> float:
    """Ground-state energy per site of a finite chain of the three-site term."""
    if n_sites > MAX_ED_SITES:
        raise ValueError(f"exact diagonalisation limited to n <= {MAX_ED_SITES}")
    if n_sites < 3:
        raise ValueError("need at least 3 sites")
    op = _chain_hamiltonian(h3, n_sites, periodic)
    N = op.shape[0]
    if N <= 729:
        H = np.column_stack([op.matvec(e) for e in np.eye(N)])
        e0 = np.linalg.eigvalsh(0.5 * (H + H.conj().T))[0]
    else:
        rng = np.random.default_rng(0)
        v0 = rng.normal(size=N) + 0j
        e0 = spla.eigsh(op, k=1, which="SA", v0=v0, tol=1e-12, maxiter=20_000)[0][0]
    return float(np.real(e0)) / n_sites


def witness_value(witness: Witness, ox: np.ndarray, oy: np.ndarray) -> float:
    """Average of the witness correlator sum over one period of a periodic
    deterministic assignment (entries +-1)."""
    p = len(ox)
    obs = (np.asarray(ox, dtype=float), np.asarray(oy, dtype=float))
    J = witness.couplings
    total = 0.0
    for i in range(p):
        total += J[0] * obs[0][i] + J[1] * obs[1][i]
        k = 2
        for a in range(2):
            for b in range(2):
                total += J[k] * obs[a][i] * obs[b][(i + 1) % p]
                k += 1
        for a in range(2):
            for b in range(2):
                total += J[k] * obs[a][i] * obs[b][(i + 2) % p]
                k += 1
    return total / p


@dataclass
class ClassicalOptimum:
    value: float
    period: int
    ox: tuple[int, ...]
    oy: tuple[int, ...]


def classical_search(witness: Witness, max_period: int = 6) -> ClassicalOptimum:
    """Minimum over all periodic deterministic assignments with period <= max_period."""
    if max_period > 8:
        raise ValueError("max_period is limited to 8")
    best = None
    for p in range(1, max_period + 1):
        for bits in itertools.product((1, -1), repeat=2 * p):
            ox, oy = bits[:p], bits[p:]
            v = witness_value(witness, ox, oy)
            if best is None or v < best.value - 1e-12:
                best = ClassicalOptimum(v, p, tuple(ox), tuple(oy))
    return best


def classical_minimum(witness: Witness, max_period: int = 6) -> float:
    return classical_search(witness, max_period).value


# --------------------------------------------------------------------------
# qutrit-space circuit oracle


def gell_mann_basis(dim: int = 9) -> list[np.ndarray]:
    """Same ordering as the circuit parameterisation, but built independently."""
    mats = []
    pairs = [(j, k) for j in range(dim) for k in range(j + 1, dim)]
    for j, k in pairs:
        m = np.zeros((dim, dim), dtype=complex)
        m[j, k] = 1
        m[k, j] = 1
        mats.append(m)
    for j, k in pairs:
        m = np.zeros((dim, dim), dtype=complex)
        m[j, k] = -1j
        m[k, j] = 1j
        mats.append(m)
    for l in range(1, dim):
        m = np.zeros((dim, dim), dtype=complex)
        for j in range(l):
            m[j, j] = 1
        m[l, l] = -l
        mats.append(m * math.sqrt(2 / (l * (l + 1))))
    mats.append(np.eye(dim, dtype=complex))
    return mats


def qutrit_simulate(layers: int, params: np.ndarray, n_qutrits: int = 7) -> np.ndarray:
    """Apply the staircase of exp(iH) two-qutrit gates directly on 3^n amplitudes."""
    basis = gell_mann_basis()
    params = np.asarray(params, dtype=float).reshape(-1, 81)
    gates_per_layer = n_qutrits - 1
    if params.shape[0] != layers * gates_per_layer:
        raise ValueError("parameter count does not match the ansatz")
    psi = np.zeros((3,) * n_qutrits, dtype=complex)
    psi[(0,) * n_qutrits] = 1
    g = 0
    for _ in range(layers):
        for i in range(gates_per_layer):
            H = sum(t * b for t, b in zip(params[g], basis))
            U = sla.expm(1j * H).reshape(3, 3, 3, 3)
            psi = np.tensordot(U, psi, axes=([2, 3], [i, i + 1]))
            psi = np.moveaxis(psi, [0, 1], [i, i + 1])
            g += 1
    return psi.reshape(-1)


# --------------------------------------------------------------------------
# noncontextual targets


@dataclass
class NoncontextualSetup:
    """Commuting (diagonal) observables realising a classical optimum and a
    uMPS whose energy density equals the classical bound."""

    params: ObservableParams
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    A: np.ndarray
    optimum: ClassicalOptimum


def _diagonal_observable(values) -> tuple[np.ndarray, tuple[int, int, int], np.ndarray]:
    """Return (sigma, signature, w) with sigma = Q diag(sig) Q^T diagonal
    with entries ``values`` and Q a signed permutation reached by exp of the
    skew basis."""
    from .hamiltonian import observable

    values = tuple(int(v) for v in values)
    sig = (1, 1, -1) if values.count(-1) == 1 else (1, -1, -1)
    # A quarter turn in one coordinate plane swaps two levels (up to a sign
    # that cancels in Q diag Q^T).
    candidates = [np.zeros(3)]
    for k in range(3):
        w = np.zeros(3)
        w[k] = math.pi / 2
        candidates.append(w)
    for w in candidates:
        sigma = observable(w, sig)
        if np.allclose(sigma, np.diag(values), atol=1e-12):
            return sigma, sig, w
    raise ValueError(f"no single-plane rotation realises diag{values}")


def noncontextual_setup(witness: Witness, max_period: int = 6) -> NoncontextualSetup:
    """Diagonal observables plus a product or periodic uMPS attaining the
    classical minimum.

    Period-p assignments use p qutrit levels per observable table; each level
    carries the outcome pair of one site in the period.  For p = 1 the state
    is a product state on a non-zero level; otherwise the uMPS is the
    cyclic shift ``A^{label_i} = |i><i+1|`` with bond dimension p: the
    translation-invariant superposition of the p shifted product states.  Its
    transfer eigenvalue 1 is simple, but the other p-th roots of unity share
    its modulus, so the state is flagged as non-injective.
    """
    opt = classical_search(witness, max_period)
    p = opt.period
    pairs = list(zip(opt.ox, opt.oy))
    distinct = list(dict.fromkeys(pairs))
    if len(distinct) > 3:
        raise ValueError("assignment needs more than three distinct outcome pairs")
    # Put the first outcome pair on level 1 so the product target is not |0...0>.
    levels = [1, 2, 0][: len(distinct)]
    level_of = {pair: lev for pair, lev in zip(distinct, levels)}
    x_diag = [0, 0, 0]
    y_diag = [0, 0, 0]
    for pair, lev in level_of.items():
        x_diag[lev], y_diag[lev] = pair
    # Unused levels get a value that keeps the observable non-trivial.
    for diag in (x_diag, y_diag):
        used = [diag[lev] for lev in level_of.values()]
        for lev in range(3):
            if lev not in level_of.values():
                diag[lev] = -used[0] if len(set(used)) == 1 else used[0]
        if len(set(diag)) == 1:
            free = [lev for lev in range(3) if lev not in level_of.values()]
            if not free:
                raise ValueError("cannot make the observable non-trivial")
            diag[free[0]] = -diag[free[0]]
    sx, lx, wx = _diagonal_observable(x_diag)
    sy, ly, wy = _diagonal_observable(y_diag)
    params = ObservableParams(wx, wy, lx, ly)
    if p == 1:
        A = np.zeros((1, 3, 1), dtype=complex)
        A[0, level_of[pairs[0]], 0] = 1
    else:
        A = np.zeros((p, 3, p), dtype=complex)
        for i, pair in enumerate(pairs):
            A[i, level_of[pair], (i + 1) % p] = 1
    return NoncontextualSetup(params, sx, sy, A, opt)
