"""Exact purification of the three-site reduced state into a 7-site qutrit MPS.

With ``l = L^dagger L`` and ``r = R R^dagger`` the vector
``psi[a, s1 s2 s3, b] = (L A^s1 A^s2 A^s3 R)[a, b]`` satisfies
``Tr_{a,b} |psi><psi| = rho_3``.  The ancilla legs of ``L`` and ``R`` (of
dimension D, zero-padded to 3^k) are split by SVD into k qutrit sites each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .umps import FixedPoints, UmpsState, fixed_points

K_SITES = 2
MAX_BOND = 3**K_SITES


class NotPSDError(ValueError):
    pass


@dataclass
class PurifiedMps:
    """Open-boundary MPS with tensors ``T[left, s, right]``, ordered
    ``[L_2, L_1, A, A, A, R_1, R_2]`` for k = 2."""

    tensors: list[np.ndarray]

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    def to_dense(self) -> np.ndarray:
        psi = self.tensors[0]
        for t in self.tensors[1:]:
            psi = np.tensordot(psi, t, axes=(-1, 0))
        return psi.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_dense()))


def psd_factor(M: np.ndarray, side: str = "left", tol: float = 1e-8) -> np.ndarray:
    """Gram factor of a PSD matrix: ``L^dagger L = M`` (left) or
    ``R R^dagger = M`` (right).

    An eigendecomposition is used instead of a triangular Cholesky so that
    rank-deficient fixed points factor exactly.
    """
    M = np.asarray(M, dtype=complex)
    H = 0.5 * (M + M.conj().T)
    w, v = np.linalg.eigh(H)
    if w.min() < -tol * max(1.0, abs(w.max())):
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3e} < 0")
    root = np.sqrt(np.clip(w, 0.0, None))
    if side == "left":
        return root[:, None] * v.conj().T
    if side == "right":
        return v * root[None, :]
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def split_boundary(factor: np.ndarray, side: str, k: int | None = None, d: int = 3) -> list[np.ndarray]:
    """Split a boundary factor into ``k`` MPS tensors of physical dimension d.

    For ``side='left'`` the factor is ``L[a, beta]`` (ancilla a, bond beta)
    and the result is ``[L_k, ..., L_1]`` from the outer edge inwards; the
    contraction of the list equals the zero-padded factor.  For
    ``side='right'`` the factor is ``R[beta, b]`` and the result is
    ``[R_1, ..., R_k]``; in both cases ancilla digits are row-major in site
    order.
    """
    factor = np.asarray(factor, dtype=complex)
    if side == "left":
        n_anc, D = factor.shape
    elif side == "right":
        D, n_anc = factor.shape
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if k is None:
        k = max(1, int(np.ceil(np.log(n_anc) / np.log(d) - 1e-12)))
    full = d**k
    if n_anc > full:
        raise ValueError(f"ancilla dimension {n_anc} exceeds {d}^{k}")

    if side == "right":
        padded = np.zeros((D, full), dtype=complex)
        padded[:, :n_anc] = factor
        tensors = []
        bond = 1
        rest = padded.reshape(D, full, 1)
        for j in range(k - 1):
            remaining = d ** (k - j - 1)
            mat = rest.reshape(D * remaining, d * bond)
            u, s, vh = np.linalg.svd(mat, full_matrices=False)
            tensors.append(vh.reshape(-1, d, bond))
            bond = vh.shape[0]
            rest = (u * s[None, :]).reshape(D, remaining, bond)
        tensors.append(rest.reshape(D, d, bond))
        return tensors[::-1]

    padded = np.zeros((full, D), dtype=complex)
    padded[:n_anc] = factor
    tensors = []
    bond = 1
    rest = padded.reshape(1, full, D)
    for j in range(k - 1):
        remaining = d ** (k - j - 1)
        mat = rest.reshape(bond * d, remaining * D)
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        # Keep every singular vector, zeros included: the split must be exact.
        tensors.append(u.reshape(bond, d, -1))
        bond = u.shape[1]
        rest = (s[:, None] * vh).reshape(bond, remaining, D)
    tensors.append(rest.reshape(bond, d, D))
    return tensors


def purify(umps: UmpsState, fp: FixedPoints | None = None, k: int = K_SITES) -> PurifiedMps:
    A = umps.A if isinstance(umps, UmpsState) else np.asarray(umps)
    D, d, _ = A.shape
    if D > d**k:
        raise ValueError(f"bond dimension {D} exceeds {d}^{k} = {d**k}; purification pipeline supports D <= {d**k}")
    if fp is None:
        fp = fixed_points(A)
    L = psd_factor(fp.l, "left")
    R = psd_factor(fp.r, "right")
    left = split_boundary(L, "left", k, d)
    right = split_boundary(R, "right", k, d)
    return PurifiedMps(left + [A, A, A] + right)


def reduced_middle(psi: np.ndarray, n_left: int = K_SITES, n_mid: int = 3, n_right: int = K_SITES, d: int = 3) -> np.ndarray:
    """Trace out the outer ancilla sites of a dense 7-site vector."""
    t = np.asarray(psi).reshape(d**n_left, d**n_mid, d**n_right)
    return np.einsum("aib,ajb->ij", t, t.conj())
