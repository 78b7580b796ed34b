"""Uniform matrix product states on an infinite qutrit chain.

Tensor convention: ``A[alpha, s, beta]`` with bond indices ``alpha, beta`` and
physical index ``s``.  The transfer map acts on right environments as
``r -> sum_s A^s r A^s^dagger`` and on left environments as
``l -> sum_s A^s^dagger l A^s``.  Ground states are found by quasi-Newton
minimisation of the energy density using exact gradients from MPO
environments; MPO-based VUMPS in the mixed canonical gauge is available as
an alternative.  Everything is dense because bond dimensions stay below 10.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .hamiltonian import HamiltonianMpo, LocalTerm, ObservableParams, Witness, hamiltonian_term, to_mpo

log = logging.getLogger(__name__)

DENSE_MAX_D = 8


class DegenerateTransferWarning(UserWarning):
    """Leading transfer-matrix eigenvalue is (nearly) degenerate in magnitude."""


class ConvergenceError(RuntimeError):
    pass


class NumericalConsistencyError(RuntimeError):
    pass


@dataclass
class MixedCanonical:
    AL: np.ndarray
    AR: np.ndarray
    C: np.ndarray

    @property
    def AC(self) -> np.ndarray:
        return np.tensordot(self.AL, self.C, axes=(2, 0))


@dataclass
class UmpsState:
    A: np.ndarray
    degenerate: bool = False
    canonical: MixedCanonical | None = None
    meta: dict = field(default_factory=dict)

    @property
    def D(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]


@dataclass
class FixedPoints:
    l: np.ndarray
    r: np.ndarray


def random_tensor(D: int, d: int = 3, rng=None, real: bool = False) -> np.ndarray:
    rng = np.random.default_rng(rng)
    A = rng.normal(size=(D, d, D))
    if not real:
        A = A + 1j * rng.normal(size=(D, d, D))
    return A.astype(complex)


def right_transfer(A: np.ndarray) -> np.ndarray:
    """Superoperator r -> sum_s A^s r A^s^dagger on row-major vec(r)."""
    D = A.shape[0]
    return np.einsum("asb,csd->acbd", A, A.conj()).reshape(D * D, D * D)


def left_transfer(A: np.ndarray) -> np.ndarray:
    """Superoperator l -> sum_s A^s^dagger l A^s on row-major vec(l)."""
    D = A.shape[0]
    return np.einsum("asb,csd->bdac", A.conj(), A).reshape(D * D, D * D)


def _leading_eig(A: np.ndarray, side: str, v0=None, tol: float = 1e-12, maxiter: int = 10_000):
    """Dominant eigenpair (and second eigenvalue) of the transfer map."""
    D = A.shape[0]
    T = right_transfer(A) if side == "right" else left_transfer(A)
    if D <= DENSE_MAX_D:
        vals, vecs = np.linalg.eig(T)
        return _pick_dominant(vals, vecs)
    op = spla.LinearOperator((D * D, D * D), matvec=lambda x: T @ x, dtype=complex)
    try:
        vals, vecs = spla.eigs(op, k=min(4, D * D - 2), which="LM", v0=v0, tol=tol, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        x = exc.eigenvectors[:, 0] if exc.eigenvectors.size else np.zeros(D * D)
        lam = exc.eigenvalues[0] if exc.eigenvalues.size else 0.0
        resid = np.linalg.norm(T @ x - lam * x)
        raise ConvergenceError(f"transfer-matrix eigensolver did not converge (residual {resid:.3e})") from exc
    return _pick_dominant(vals, vecs)


def _pick_dominant(vals: np.ndarray, vecs: np.ndarray):
    """Choose the Perron eigenpair of a completely positive map.

    The spectral radius is itself an eigenvalue; among eigenvalues of
    maximal modulus (e.g. a periodic state's roots of unity) the one with
    the largest real part is taken.
    """
    mags = np.abs(vals)
    top = mags.max()
    cand = np.nonzero(mags >= top * (1 - 1e-9))[0]
    lead = cand[np.argmax(vals[cand].real)]
    rest = np.delete(np.arange(len(vals)), lead)
    second = vals[rest[np.argmax(mags[rest])]] if rest.size else 0.0
    return vals[lead], vecs[:, lead], second


def normalize(A: np.ndarray, gap_tol: float = 1e-10) -> UmpsState:
    """Rescale ``A`` so the spectral radius of its transfer matrix is one."""
    A = np.asarray(A, dtype=complex)
    if not np.any(A):
        raise ValueError("cannot normalize a zero tensor")
    lam, _, second = _leading_eig(A, "right")
    A = A / np.sqrt(np.abs(lam))
    degenerate = A.shape[0] > 1 and (np.abs(lam) - np.abs(second)) / np.abs(lam) < gap_tol
    if degenerate:
        warnings.warn("degenerate leading transfer eigenvalue: uMPS is not injective", DegenerateTransferWarning, stacklevel=2)
    return UmpsState(A, degenerate=bool(degenerate))


def _hermitian_psd(vec: np.ndarray, D: int) -> np.ndarray:
    m = vec.reshape(D, D)
    tr = np.trace(m)
    if abs(tr) > 1e-300:
        m = m * (abs(tr) / tr)
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    if w.sum() < 0:
        w = -w
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.conj().T


def fixed_points(A) -> FixedPoints:
    """Left/right dominant eigenvectors, Hermitised, PSD-projected and
    normalised to Tr(l r) = 1."""
    if isinstance(A, UmpsState):
        A = A.A
    D = A.shape[0]
    _, vr, _ = _leading_eig(A, "right")
    _, vl, _ = _leading_eig(A, "left")
    r = _hermitian_psd(vr, D)
    l = _hermitian_psd(vl, D)
    # Split the normalisation so that Tr(l) = Tr(r) stays roughly balanced.
    nrm = np.real(np.trace(l @ r))
    if nrm <= 1e-12 * np.linalg.norm(l) * np.linalg.norm(r):
        raise NumericalConsistencyError("left and right fixed points are orthogonal (degenerate transfer map)")
    scale_r = np.real(np.trace(r))
    scale_l = nrm / scale_r
    return FixedPoints(l / scale_l, r / scale_r)


def three_site_products(A: np.ndarray) -> np.ndarray:
    """M[(s1 s2 s3)] = A^s1 A^s2 A^s3, shape (d^3, D, D)."""
    D, d, _ = A.shape
    return np.einsum("asb,btc,cud->stuad", A, A, A).reshape(d**3, D, D)


def rho3(A, fp: FixedPoints | None = None) -> np.ndarray:
    """Three-site reduced density matrix Tr(l M_s r M_t^dagger)."""
    if isinstance(A, UmpsState):
        A = A.A
    if fp is None:
        fp = fixed_points(A)
    M = three_site_products(A)
    rho = np.einsum("xa,iab,bc,jxc->ij", fp.l, M, fp.r, M.conj())
    return 0.5 * (rho + rho.conj().T)


def energy_density(A, h3, fp: FixedPoints | None = None, imag_tol: float = 1e-10) -> float:
    if isinstance(h3, LocalTerm):
        h3 = h3.h3
    e = np.trace(rho3(A, fp) @ h3)
    if abs(e.imag) >= imag_tol:
        raise NumericalConsistencyError(f"energy has imaginary part {e.imag:.3e}")
    return float(e.real)


# --------------------------------------------------------------------------
# gauge fixing


def _qr_pos(m: np.ndarray):
    q, r = np.linalg.qr(m)
    ph = np.sign(np.diag(r))
    ph[ph == 0] = 1
    return q * ph, ph[:, None] * r


def left_orthonormalize(A: np.ndarray, L0=None, tol: float = 1e-14, maxiter: int = 10_000):
    """Return (A_L, L) with L A = A_L L and A_L left isometric."""
    D, d, _ = A.shape
    L = np.eye(D, dtype=complex) if L0 is None else L0 / np.linalg.norm(L0)
    for _ in range(maxiter):
        LA = np.tensordot(L, A, axes=(1, 0)).reshape(D * d, D)
        AL, Lnew = _qr_pos(LA)
        Lnew = Lnew / np.linalg.norm(Lnew)
        delta = np.linalg.norm(Lnew - L)
        L = Lnew
        if delta < tol:
            break
    return AL.reshape(D, d, D), L


def right_orthonormalize(A: np.ndarray, R0=None, tol: float = 1e-14, maxiter: int = 10_000):
    """Return (A_R, R) with A R = R A_R and A_R right isometric."""
    AL, L = left_orthonormalize(A.transpose(2, 1, 0), None if R0 is None else R0.T, tol, maxiter)
    return AL.transpose(2, 1, 0), L.T


def _sqrt_factor(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    return (np.sqrt(np.clip(w, 0, None))[:, None]) * v.conj().T


def mixed_canonical(A: np.ndarray) -> MixedCanonical:
    A = normalize(A).A if not isinstance(A, UmpsState) else A.A
    fp = fixed_points(A)
    # Seeding with the fixed points makes the QR iteration converge in a few steps.
    AL, L = left_orthonormalize(A, L0=_sqrt_factor(fp.l))
    AR, R = right_orthonormalize(A, R0=_sqrt_factor(fp.r).conj().T)
    C = L @ R
    U, S, Vh = np.linalg.svd(C)
    AL = np.einsum("ab,bsc,cd->asd", U.conj().T, AL, U)
    AR = np.einsum("ab,bsc,cd->asd", Vh, AR, Vh.conj().T)
    C = np.diag(S / np.linalg.norm(S)).astype(complex)
    return MixedCanonical(AL, AR, C)


# --------------------------------------------------------------------------
# MPO environments and VUMPS


def _solve_inhomogeneous(E: np.ndarray, y: np.ndarray, fixed: np.ndarray, D: int) -> np.ndarray:
    """Solve X - E(X) + Tr(X F) 1 = Y - Tr(Y F) 1 densely (F = fixed)."""
    return _solve_projected(E, y, np.eye(D), fixed, D)


def left_environment(W: np.ndarray, AL: np.ndarray, C: np.ndarray):
    chi = W.shape[0]
    D = AL.shape[0]
    env = [None] * chi
    env[0] = np.eye(D, dtype=complex)

    def apply(a, b, X):
        return np.einsum("xsa,xy,st,ytb->ab", AL.conj(), X, W[a, b], AL)

    for b in range(1, chi):
        acc = np.zeros((D, D), dtype=complex)
        for a in range(b):
            if np.any(W[a, b]):
                acc += apply(a, b, env[a])
        env[b] = acc
    r = C @ C.conj().T
    y = env[-1]
    e = np.real(np.trace(y @ r))
    E = left_transfer(AL)
    env[-1] = _solve_inhomogeneous(E, y.reshape(-1), r, D).reshape(D, D)
    return np.stack(env), e


def right_environment(W: np.ndarray, AR: np.ndarray, C: np.ndarray):
    chi = W.shape[0]
    D = AR.shape[0]
    env = [None] * chi
    env[-1] = np.eye(D, dtype=complex)

    def apply(a, b, X):
        return np.einsum("atx,st,xy,bsy->ab", AR, W[a, b], X, AR.conj())

    for a in range(chi - 2, -1, -1):
        acc = np.zeros((D, D), dtype=complex)
        for b in range(a + 1, chi):
            if np.any(W[a, b]):
                acc += apply(a, b, env[b])
        env[a] = acc
    l = C.conj().T @ C
    y = env[0]
    e = np.real(np.trace(l @ y))
    E = right_transfer(AR)
    env[0] = _solve_inhomogeneous(E, y.reshape(-1), l, D).reshape(D, D)
    return np.stack(env), e


def effective_hamiltonians(W, LE, RE):
    chi, _, d, _ = W.shape
    D = LE.shape[1]
    h_ac = np.einsum("axy,abst,bzw->xswytz", LE, W, RE).reshape(D * d * D, D * d * D)
    h_c = np.einsum("axy,azw->xwyz", LE, RE).reshape(D * D, D * D)
    return 0.5 * (h_ac + h_ac.conj().T), 0.5 * (h_c + h_c.conj().T)


def _lowest(h: np.ndarray) -> np.ndarray:
    _, v = sla.eigh(h, subset_by_index=[0, 0])
    return v[:, 0]


def _update_gauge(AC: np.ndarray, C: np.ndarray):
    D, d, _ = AC.shape
    u_ac, _ = sla.polar(AC.reshape(D * d, D), side="right")
    u_c, _ = sla.polar(C, side="right")
    AL = (u_ac @ u_c.conj().T).reshape(D, d, D)
    u_ac2, _ = sla.polar(AC.reshape(D, d * D), side="left")
    u_c2, _ = sla.polar(C, side="left")
    AR = (u_c2.conj().T @ u_ac2).reshape(D, d, D)
    err_l = np.linalg.norm(AC - np.tensordot(AL, C, axes=(2, 0)))
    err_r = np.linalg.norm(AC - np.tensordot(C, AR, axes=(1, 0)))
    return AL, AR, max(err_l, err_r)


def mpo_energy(mpo: HamiltonianMpo, mc: MixedCanonical) -> float:
    """Energy per site read off the MPO left environment."""
    _, e = left_environment(mpo.W, mc.AL, mc.C)
    return float(e)


@dataclass
class GroundStateResult:
    state: UmpsState
    energy: float
    converged: bool
    residual: float
    iterations: int


def _solve_projected(E: np.ndarray, y: np.ndarray, P: np.ndarray, F: np.ndarray, D: int) -> np.ndarray:
    """Solve X - E(X) + Tr(X F) P = Y - Tr(Y F) P, where P and F are the
    fixed points of E and of its adjoint with Tr(P F) = 1."""
    p = P.reshape(-1)
    f = F.T.reshape(-1)
    M = np.eye(D * D) - E + np.outer(p, f)
    rhs = y - (f @ y) * p
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        # Degenerate transfer spectrum (non-injective state): least squares.
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


def energy_and_gradient(A: np.ndarray, W: np.ndarray) -> tuple[float, np.ndarray]:
    """Energy density of the normalised uMPS generated by ``A`` and its
    Wirtinger gradient ``de/dconj(A)``.

    The energy is invariant under rescaling of ``A``, so the gradient is
    orthogonal to ``A``.  For a real perturbation ``dA``,
    ``de = 2 Re <G, dA>``.
    """
    A = np.asarray(A, dtype=complex)
    An = normalize(A, gap_tol=0.0).A
    scale = np.linalg.norm(A) / np.linalg.norm(An)
    fp = fixed_points(An)
    l, r = fp.l, fp.r
    D = A.shape[0]
    chi = W.shape[0]

    Ac = An.conj()
    active = [[b for b in range(chi) if np.any(W[a, b])] for a in range(chi)]

    LE = [np.zeros((D, D), dtype=complex) for _ in range(chi)]
    LE[0] = l
    for a in range(chi - 1):
        targets = [b for b in active[a] if b > a]
        if not targets:
            continue
        # X[s, x, t, y] = (A^s^dag LE[a] A^t)[x, y]
        X = np.tensordot(np.tensordot(Ac, LE[a], axes=(0, 0)), An, axes=(2, 0))
        for b in targets:
            LE[b] = LE[b] + np.tensordot(W[a, b], X, axes=([0, 1], [0, 2]))
    e = float(np.real(np.trace(LE[-1] @ r)))
    LE[-1] = _solve_projected(left_transfer(An), LE[-1].reshape(-1), l, r, D).reshape(D, D)

    RE = [np.zeros((D, D), dtype=complex) for _ in range(chi)]
    RE[-1] = r
    sources = [[a for a in range(b) if np.any(W[a, b])] for b in range(chi)]
    for b in range(chi - 1, 0, -1):
        if not sources[b]:
            continue
        # Y[x, t, y, s] = (A^t RE[b] A^s^dag)[x, y]
        Y = np.tensordot(np.tensordot(An, RE[b], axes=(2, 0)), Ac, axes=(2, 2))
        for a in sources[b]:
            RE[a] = RE[a] + np.tensordot(W[a, b], Y, axes=([0, 1], [3, 1]))
    RE[0] = _solve_projected(right_transfer(An), RE[0].reshape(-1), r, l, D).reshape(D, D)

    AR = np.tensordot(An, np.stack(RE), axes=(2, 1))  # [y, t, b, w]
    LW = np.tensordot(np.stack(LE), W, axes=(0, 0))  # [x, y, b, s, t]
    G = np.tensordot(LW, AR, axes=([1, 2, 4], [0, 2, 1]))
    lAr = np.einsum("xy,ysz,zw->xsw", l, An, r)
    G = G - np.vdot(An, G) * lAr
    return e, G / scale


def _canonical_residual(AL: np.ndarray, W: np.ndarray) -> float:
    """Gradient norm evaluated on a left-canonical tensor (a gauge-fixed stationarity measure)."""
    return float(np.linalg.norm(energy_and_gradient(AL, W)[1]))


def minimize_energy(
    mpo: HamiltonianMpo,
    D: int,
    init=None,
    tol: float = 1e-7,
    max_iter: int = 5000,
    rng=None,
    h3: np.ndarray | None = None,
) -> GroundStateResult:
    """Ground state by quasi-Newton (L-BFGS) minimisation of the energy
    density over the unconstrained tensor ``A``.

    Each function evaluation normalises ``A``, builds its fixed points and
    MPO environments and returns the exact gradient, so every accepted step
    lowers the energy.  Stationarity is reported as the gradient norm in the
    left-canonical gauge.
    """
    from scipy.optimize import minimize

    d = mpo.W.shape[2]
    A0 = _initial_tensor(init, D, d, rng)
    W = mpo.W
    n = A0.size

    def fun(x):
        A = (x[:n] + 1j * x[n:]).reshape(D, d, D)
        try:
            e, G = energy_and_gradient(A, W)
        except NumericalConsistencyError:
            # Non-injective trial point: reject it so the line search backs off.
            return ceiling, np.zeros_like(x)
        G = G.reshape(-1)
        return e, np.concatenate([2 * G.real, 2 * G.imag])

    x0 = np.concatenate([A0.real.ravel(), A0.imag.ravel()])
    ceiling = np.inf
    e0 = fun(x0)[0]
    ceiling = e0 + 1e3 * (1 + abs(e0))
    opt = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "maxfun": 2 * max_iter, "gtol": 0.1 * tol, "ftol": 1e-16})
    x = opt.x if opt.fun <= e0 else x0
    A = normalize((x[:n] + 1j * x[n:]).reshape(D, d, D), gap_tol=0.0).A
    mc = mixed_canonical(A)
    residual = _canonical_residual(mc.AL, W)
    state = UmpsState(mc.AL, canonical=mc)
    energy = energy_density(mc.AL, h3) if h3 is not None else energy_and_gradient(mc.AL, W)[0]
    return GroundStateResult(state, float(energy), residual < tol, residual, int(opt.nit))


def _initial_tensor(init, D: int, d: int, rng) -> np.ndarray:
    if init is None:
        return random_tensor(D, d, rng)
    A0 = init.A if isinstance(init, UmpsState) else np.asarray(init, dtype=complex)
    if A0.shape != (D, d, D):
        raise ValueError(f"init tensor has shape {A0.shape}, expected {(D, d, D)}")
    return A0


SOLVERS = ("lbfgs", "vumps")


def ground_state(
    mpo: HamiltonianMpo,
    D: int,
    init=None,
    tol: float = 1e-7,
    max_iter: int | None = None,
    rng=None,
    h3: np.ndarray | None = None,
    method: str = "lbfgs",
) -> GroundStateResult:
    """Variational ground state of a translation-invariant MPO.

    Args:
        mpo: Hamiltonian MPO.
        D: bond dimension.
        init: initial tensor, ``UmpsState`` or None for a seeded random start.
        tol: stationarity threshold.
        max_iter: iteration cap (solver dependent default).
        rng: seed or generator for random starts.
        h3: optional dense three-site term used to report the energy.
        method: ``"lbfgs"`` (default) or ``"vumps"``.

    Returns:
        ``GroundStateResult``; the energy never exceeds that of ``init``.
    """
    if D < 1:
        raise ValueError("bond dimension must be positive")
    if method == "lbfgs":
        return minimize_energy(mpo, D, init, tol, max_iter or 5000, rng, h3)
    if method == "vumps":
        if D == 1:
            return _product_ground_state(mpo, _initial_tensor(init, D, mpo.W.shape[2], rng), h3)
        return vumps(mpo, D, init, tol, max_iter or 500, rng, h3)
    raise ValueError(f"unknown solver {method!r}; choose from {SOLVERS}")

def vumps(
    mpo: HamiltonianMpo,
    D: int,
    init=None,
    tol: float = 1e-9,
    max_iter: int = 500,
    rng=None,
    h3: np.ndarray | None = None,
) -> GroundStateResult:
    """VUMPS ground-state search (alternative to ``minimize_energy``).

    Args:
        mpo: Hamiltonian MPO.
        D: bond dimension.
        init: initial tensor ``A`` (D x d x D), a ``UmpsState`` or None for a
            seeded random start.
        tol: convergence threshold on max(|A_C - A_L C|, |A_C - C A_R|).
        h3: optional dense local term; when given, energies are evaluated as
            Tr(rho_3 h3) instead of from the MPO environment.

    Returns:
        The best state seen.  ``converged`` is False when ``max_iter`` is
        exhausted before reaching ``tol``.
    """
    d = mpo.W.shape[2]
    if init is None:
        A0 = random_tensor(D, d, rng, real=np.isrealobj(mpo.W) or not np.any(mpo.W.imag))
    elif isinstance(init, UmpsState):
        A0 = init.A
    else:
        A0 = np.asarray(init, dtype=complex)
    if A0.shape != (D, d, D):
        raise ValueError(f"init tensor has shape {A0.shape}, expected {(D, d, D)}")

    mc = init.canonical if isinstance(init, UmpsState) and init.canonical is not None else mixed_canonical(A0)

    def energy_of(m: MixedCanonical) -> float:
        # Mid-iteration A_L and C need not be consistent; use A_L's own fixed point.
        _, vr, _ = _leading_eig(m.AL, "right")
        r = _hermitian_psd(vr, D)
        r = r / np.real(np.trace(r))
        if h3 is not None:
            return energy_density(m.AL, h3, FixedPoints(np.eye(D), r))
        return mpo_energy(mpo, MixedCanonical(m.AL, m.AR, _sqrt_factor(r).conj().T))

    e_init = energy_of(mc)
    best = (e_init, mc, np.inf)
    AL, AR, C = mc.AL, mc.AR, mc.C
    W = mpo.W
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        LE, _ = left_environment(W, AL, C)
        RE, _ = right_environment(W, AR, C)
        h_ac, h_c = effective_hamiltonians(W, LE, RE)
        # Eigen-residual of the current A_C; zero exactly at a VUMPS fixed point.
        ac_cur = np.tensordot(AL, C, axes=(2, 0)).reshape(-1)
        ac_cur = ac_cur / np.linalg.norm(ac_cur)
        hv = h_ac @ ac_cur
        grad = np.linalg.norm(hv - np.vdot(ac_cur, hv) * ac_cur)
        if it > 1:
            residual = max(grad, err)
            if residual < tol:
                if e <= best[0] + 1e-12:
                    best = (e, cur, residual)
                break
        AC = _lowest(h_ac).reshape(D, d, D)
        C = _lowest(h_c).reshape(D, D)
        AL, AR, err = _update_gauge(AC, C)
        C = C / np.linalg.norm(C)
        cur = MixedCanonical(AL, AR, C)
        e = energy_of(cur)
        if e < best[0] - 1e-13:
            best = (e, cur, np.inf)
    e_best, mc_best, res_best = best
    converged = res_best < tol
    state = UmpsState(mc_best.AL, canonical=mc_best)
    return GroundStateResult(state, e_best, bool(converged), float(min(res_best, residual)), it)


def _product_ground_state(mpo: HamiltonianMpo, A0: np.ndarray, h3=None) -> GroundStateResult:
    """D = 1 VUMPS fallback: direct minimisation over normalised product states.

    The VUMPS update degenerates to a mean-field iteration at D = 1, which
    has no descent guarantee, so the product manifold is searched directly.
    """
    from scipy.optimize import minimize

    d = A0.shape[1]
    if h3 is None:
        h3 = mpo_local_term(mpo)

    def unpack(x):
        v = x[:d] + 1j * x[d:]
        return v / np.linalg.norm(v)

    def energy(x):
        v = unpack(x)
        psi = np.kron(np.kron(v, v), v)
        return float(np.real(np.vdot(psi, h3 @ psi)))

    v0 = A0.reshape(d)
    x0 = np.concatenate([v0.real, v0.imag])
    e0 = energy(x0)
    opt = minimize(energy, x0, method="BFGS", options={"gtol": 1e-12, "maxiter": 2000})
    if opt.fun > e0:
        opt.x, opt.fun = x0, e0
    v = unpack(opt.x)
    A = v.reshape(1, d, 1)
    mc = MixedCanonical(A, A, np.ones((1, 1), dtype=complex))
    grad = np.linalg.norm(opt.jac) if opt.jac is not None else np.inf
    return GroundStateResult(UmpsState(A, canonical=mc), float(opt.fun), bool(opt.success or grad < 1e-6), float(grad), int(opt.nit))


def mpo_local_term(mpo: HamiltonianMpo) -> np.ndarray:
    """Recover the 27x27 anchored local term from an MPO built by ``to_mpo``."""
    W = mpo.W
    chi, _, d, _ = W.shape
    h = np.zeros((d**3, d**3), dtype=complex)
    final = chi - 1
    eye = np.eye(d)
    for b in range(1, chi):
        if not np.any(W[0, b]):
            continue
        if b == final:
            h += np.kron(np.kron(W[0, b], eye), eye)
            continue
        for c in range(b + 1, chi):
            if not np.any(W[b, c]):
                continue
            if c == final:
                h += np.kron(np.kron(W[0, b], W[b, c]), eye)
            else:
                h += np.kron(np.kron(W[0, b], W[b, c]), W[c, final])
    return h


def ground_state_restarts(mpo, D, restarts: int = 3, rng=None, **kwargs) -> GroundStateResult:
    """Best of several seeded random starts."""
    rng = np.random.default_rng(rng)
    best = None
    for _ in range(restarts):
        res = ground_state(mpo, D, rng=rng, **kwargs)
        if best is None or res.energy < best.energy:
            best = res
    return best


# --------------------------------------------------------------------------
# observable descent


@dataclass
class DescentSchedule:
    step: float = 0.05
    points: int = 60
    fd_step: float = 1e-4
    gtol: float = 1e-7
    max_halvings: int = 20
    grow: float = 1.5
    solver_tol: float = 1e-8
    solver_max_iter: int = 5000
    solver: str = "lbfgs"
    # Stop once the last ``stall_points`` accepted steps lowered the energy by
    # less than ``stall_tol`` in total; 0 disables the check.
    stall_points: int = 5
    stall_tol: float = 1e-8


@dataclass
class TrajectoryPoint:
    W: np.ndarray
    state: UmpsState
    energy: float
    gradient: np.ndarray | None = None
    converged: bool = True


def _solve_at(witness, params, D, warm, schedule, rng):
    term = hamiltonian_term(witness, params)
    mpo = to_mpo(term)
    res = ground_state(mpo, D, init=warm, tol=schedule.solver_tol, max_iter=schedule.solver_max_iter, rng=rng,
                       method=schedule.solver)
    return res


def energy_gradient(witness, params: ObservableParams, state: UmpsState, schedule: DescentSchedule):
    """Central finite differences of the ground-state energy over W."""
    W = params.W
    D = state.D
    g = np.zeros(6)
    for k in range(6):
        e = []
        for sign in (1.0, -1.0):
            Wk = W.copy()
            Wk[k] += sign * schedule.fd_step
            e.append(_solve_at(witness, params.with_W(Wk), D, state, schedule, None).energy)
        g[k] = (e[0] - e[1]) / (2 * schedule.fd_step)
    return g


def observable_descent(
    witness: Witness,
    params: ObservableParams,
    D: int,
    schedule: DescentSchedule | None = None,
    rng=None,
    init=None,
    callback=None,
) -> list[TrajectoryPoint]:
    """Gradient descent of the ground-state energy density over the
    observable parameters W with backtracking on the step size.

    Every accepted point is appended to the trajectory; each ground-state
    solve is warm-started from the previous point's state.
    """
    schedule = schedule or DescentSchedule()
    rng = np.random.default_rng(rng)
    if not np.all(np.isfinite(params.W)):
        raise ValueError("observable parameters must be finite")
    res = _solve_at(witness, params, D, init, schedule, rng)
    if init is None:
        # A single random start is prone to local minima; take the best of a few.
        for _ in range(2):
            alt = _solve_at(witness, params, D, None, schedule, rng)
            if alt.energy < res.energy:
                res = alt
    traj = [TrajectoryPoint(params.W.copy(), res.state, res.energy, converged=res.converged)]
    step = schedule.step
    while len(traj) < schedule.points:
        cur = traj[-1]
        cur_params = params.with_W(cur.W)
        g = energy_gradient(witness, cur_params, cur.state, schedule)
        cur.gradient = g
        if np.linalg.norm(g) < schedule.gtol:
            break
        accepted = None
        for _ in range(schedule.max_halvings + 1):
            W_new = cur.W - step * g
            trial = _solve_at(witness, params.with_W(W_new), D, cur.state, schedule, rng)
            if trial.energy <= cur.energy + 1e-12:
                accepted = TrajectoryPoint(W_new, trial.state, trial.energy, converged=trial.converged)
                break
            step *= 0.5
        if accepted is None:
            log.info("line search failed after %d halvings", schedule.max_halvings)
            break
        traj.append(accepted)
        if callback is not None:
            callback(accepted)
        step *= schedule.grow
        k = schedule.stall_points
        if k > 0 and len(traj) > k and traj[-k - 1].energy - traj[-1].energy < schedule.stall_tol:
            break
    return traj


SIGNATURES = ((1, 1, -1), (1, -1, -1))


def random_params(rng, lambda_x=(1, 1, -1), lambda_y=(1, 1, -1)) -> ObservableParams:
    """Observable parameters with W drawn uniformly from [-pi, pi)^6."""
    rng = np.random.default_rng(rng)
    W = rng.uniform(-np.pi, np.pi, 6)
    return ObservableParams(W[:3], W[3:], lambda_x, lambda_y)


@dataclass
class DescentRun:
    start: int
    seed: int
    params: ObservableParams
    trajectory: list[TrajectoryPoint]

    @property
    def final_energy(self) -> float:
        return self.trajectory[-1].energy


def start_seeds(seed: int, starts: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(starts)]


def descent_search(witness: Witness, D: int, starts: int = 10, seed: int = 0, signatures=None,
                   schedule: DescentSchedule | None = None, stop_below: float | None = None,
                   callback=None) -> list[DescentRun]:
    """Observable descent from several random starts.

    Start ``k`` draws W from its own seed; every listed signature pair is
    tried from that W.  With ``stop_below`` the search ends at the first run
    whose endpoint energy is at or below the given value.
    """
    if signatures is None:
        signatures = [(lx, ly) for lx in SIGNATURES for ly in SIGNATURES]
    runs = []
    for k, s in enumerate(start_seeds(seed, starts)):
        W = np.random.default_rng(s).uniform(-np.pi, np.pi, 6)
        for lx, ly in signatures:
            params = ObservableParams(W[:3], W[3:], tuple(lx), tuple(ly))
            traj = observable_descent(witness, params, D, schedule, rng=s)
            run = DescentRun(k, s, params, traj)
            runs.append(run)
            if callback is not None:
                callback(run)
            if stop_below is not None and run.final_energy <= stop_below:
                return runs
    return runs


# --------------------------------------------------------------------------
# file I/O


def save_tensor_file(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    from .tensorio import write_tensors

    write_tensors(path, tensors, meta or {})


def save_umps(path, state: UmpsState, meta: dict | None = None) -> None:
    from .tensorio import write_tensors

    m = dict(state.meta)
    m.update(meta or {})
    m.update({"kind": "umps", "D": state.D, "d": state.d})
    write_tensors(path, {"A": state.A}, m)


def load_umps(path) -> UmpsState:
    from .tensorio import read_tensors

    tensors, meta = read_tensors(path)
    if meta.get("kind") != "umps":
        raise ValueError(f"{path} does not hold a uMPS")
    return UmpsState(tensors["A"], meta=meta)
