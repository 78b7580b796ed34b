"""Dense qubit state-vector simulation of the layered two-qutrit ansatz.

Seven qutrits are encoded on fourteen qubits (qutrit ``q`` on wires
``2q, 2q+1``).  One layer applies six encoded two-qutrit unitaries on
neighbouring qutrit pairs in ascending order; each unitary is
``exp(i sum_j theta_j G_j)`` over an 81-element Hermitian basis of 9x9
matrices.  The cost is the negative log-fidelity per qubit and its gradient
is computed by reverse accumulation through the staircase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .encode import DICKE

log = logging.getLogger(__name__)

N_QUTRITS = 7
N_QUBITS = 2 * N_QUTRITS
GATES_PER_LAYER = N_QUTRITS - 1
DIM_PAIR = 9
PARAMS_PER_GATE = DIM_PAIR**2


class WireError(ValueError):
    pass


# --------------------------------------------------------------------------
# state-vector kernel


def zero_state(n_qubits: int = N_QUBITS) -> np.ndarray:
    psi = np.zeros(2**n_qubits, dtype=complex)
    psi[0] = 1.0
    return psi


def _check_wires(wires, n_qubits: int) -> tuple[int, ...]:
    wires = tuple(int(w) for w in wires)
    if len(set(wires)) != len(wires):
        raise WireError(f"wire collision in {wires}")
    if any(w < 0 or w >= n_qubits for w in wires):
        raise WireError(f"wires {wires} out of range for {n_qubits} qubits")
    return wires


def apply(state: np.ndarray, gate: np.ndarray, wires) -> np.ndarray:
    """Apply a ``2^k x 2^k`` gate to ``k`` wires of a dense state.

    Wire 0 is the most significant bit; the first listed wire is the most
    significant bit of the gate's index.
    """
    psi = np.asarray(state, dtype=complex)
    n = round(math.log2(psi.size))
    wires = _check_wires(wires, n)
    k = len(wires)
    gate = np.asarray(gate, dtype=complex)
    if gate.shape != (2**k, 2**k):
        raise ValueError(f"gate shape {gate.shape} does not match {k} wires")
    if wires == tuple(range(wires[0], wires[0] + k)):
        # Contiguous ascending wires: a single batched matrix product.
        t = psi.reshape(2 ** wires[0], 2**k, -1)
        return np.matmul(gate, t).reshape(-1)
    t = psi.reshape((2,) * n)
    t = np.tensordot(gate.reshape((2,) * (2 * k)), t, axes=(list(range(k, 2 * k)), list(wires)))
    t = np.moveaxis(t, list(range(k)), list(wires))
    return t.reshape(-1)


def _pair_wires(i: int) -> tuple[int, int, int, int]:
    return (2 * i, 2 * i + 1, 2 * i + 2, 2 * i + 3)


def _reduced_outer(lam: np.ndarray, phi: np.ndarray, wires) -> np.ndarray:
    """B[a, b] = sum_rest lam[a, rest] conj(phi[b, rest]) over the given wires."""
    n = round(math.log2(lam.size))
    k = len(wires)
    if tuple(wires) == tuple(range(wires[0], wires[0] + k)):
        L = lam.reshape(2 ** wires[0], 2**k, -1)
        P = phi.reshape(2 ** wires[0], 2**k, -1)
        return np.einsum("lar,lbr->ab", L, P.conj())
    rest = [w for w in range(n) if w not in wires]
    perm = list(wires) + rest
    L = lam.reshape((2,) * n).transpose(perm).reshape(2**k, -1)
    P = phi.reshape((2,) * n).transpose(perm).reshape(2**k, -1)
    return L @ P.conj().T


# --------------------------------------------------------------------------
# parameterisation


def hermitian_basis(dim: int = DIM_PAIR) -> np.ndarray:
    """Generalised Gell-Mann matrices plus the identity, shape (dim^2, dim, dim).

    Order: symmetric off-diagonal (j<k), antisymmetric off-diagonal (j<k),
    diagonal, identity.  The non-identity elements satisfy Tr(G_a G_b) = 2 delta_ab.
    """
    out = []
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[j, k] = m[k, j] = 1.0
            out.append(m)
    for j in range(dim):
        for k in range(j + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[j, k] = -1j
            m[k, j] = 1j
            out.append(m)
    for l in range(1, dim):
        diag = np.zeros(dim)
        diag[:l] = 1.0
        diag[l] = -l
        out.append(np.diag(diag * math.sqrt(2.0 / (l * (l + 1)))).astype(complex))
    out.append(np.eye(dim, dtype=complex))
    return np.stack(out)


BASIS = hermitian_basis()


def generator(theta: np.ndarray) -> np.ndarray:
    return np.tensordot(np.asarray(theta, dtype=float), BASIS, axes=1)


def unitary(theta: np.ndarray) -> np.ndarray:
    """exp(i H(theta)) by Hermitian eigendecomposition."""
    H = generator(theta)
    w, v = np.linalg.eigh(H)
    return (v * np.exp(1j * w)) @ v.conj().T


@dataclass(frozen=True)
class Ansatz:
    layers: int = 2
    n_qutrits: int = N_QUTRITS

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("ansatz needs at least one layer")
        if self.n_qutrits < 2:
            raise ValueError("ansatz needs at least two qutrits")

    @property
    def gates_per_layer(self) -> int:
        return self.n_qutrits - 1

    @property
    def n_params(self) -> int:
        return PARAMS_PER_GATE * self.gates_per_layer * self.layers

    @property
    def n_qubits(self) -> int:
        return 2 * self.n_qutrits

    def schedule(self):
        """Yield (gate index, first qutrit of the pair) in application order."""
        g = 0
        for _ in range(self.layers):
            for i in range(self.gates_per_layer):
                yield g, i
                g += 1

    def split(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.size}")
        return params.reshape(-1, PARAMS_PER_GATE)


_EE = np.kron(DICKE, DICKE)
_COMPLEMENT = np.eye(16) - _EE @ _EE.conj().T


def _encode_fast(U: np.ndarray) -> np.ndarray:
    """encode_two_qutrit without the input validation (inner-loop use)."""
    return _EE @ U @ _EE.conj().T + _COMPLEMENT


def _forward(ansatz: Ansatz, thetas: np.ndarray):
    psi = zero_state(ansatz.n_qubits)
    states = [psi]
    gates = []
    for g, i in ansatz.schedule():
        Uenc = _encode_fast(unitary(thetas[g]))
        psi = apply(psi, Uenc, _pair_wires(i))
        states.append(psi)
        gates.append(Uenc)
    return states, gates


def prepare(ansatz: Ansatz, params: np.ndarray, return_states: bool = False):
    """Run the ansatz from the all-zero state; optionally return every
    intermediate state (index 0 is the input)."""
    states, _ = _forward(ansatz, ansatz.split(params))
    return states if return_states else states[-1]


# --------------------------------------------------------------------------
# cost and gradient


def _encoded_qubits(size: int) -> int:
    n2 = round(math.log2(size))
    if 2**n2 == size:
        return n2
    n3 = round(math.log(size, 3))
    if 3**n3 == size:
        return 2 * n3
    raise ValueError(f"state length {size} is neither a power of 2 nor of 3")


def nlf(candidate: np.ndarray, target: np.ndarray, n_sites: int | None = None) -> float:
    """-ln|<candidate|target>| / N.

    N defaults to the number of qubits of the encoded state: log2 of the
    length for qubit vectors, twice the qutrit count for 3^n vectors, so the
    value is the same in either representation.
    """
    c = np.asarray(candidate).reshape(-1)
    t = np.asarray(target).reshape(-1)
    if c.size != t.size:
        raise ValueError("states differ in dimension")
    if n_sites is None:
        n_sites = _encoded_qubits(c.size)
    ov = abs(np.vdot(c, t))
    if ov < 1e-300:
        return math.inf
    # Rounding can push |ov| a hair above 1; the cost is non-negative by definition.
    return max(0.0, -math.log(min(ov, 1.0)) / n_sites)


def _expm_adjoint_derivative(X: np.ndarray, Gbar: np.ndarray) -> np.ndarray:
    """Top-right block of expm([[X^dag, Gbar], [0, X^dag]]): the adjoint of
    the Frechet derivative of the exponential at X applied to Gbar."""
    n = X.shape[0]
    big = np.zeros((2 * n, 2 * n), dtype=complex)
    Xd = X.conj().T
    big[:n, :n] = Xd
    big[n:, n:] = Xd
    big[:n, n:] = Gbar
    return sla.expm(big)[:n, n:]


def cost_and_gradient(ansatz: Ansatz, params: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """NLF-per-site and its exact gradient with respect to all parameters."""
    target = np.asarray(target, dtype=complex).reshape(-1)
    thetas = ansatz.split(params)
    N = ansatz.n_qubits
    states, gates = _forward(ansatz, thetas)
    ov = np.vdot(states[-1], target)
    if abs(ov) < 1e-300:
        return math.inf, np.full(ansatz.n_params, np.nan)
    F = max(0.0, -math.log(min(abs(ov), 1.0)) / N)
    grad = np.zeros_like(thetas)
    lam = target
    sched = list(ansatz.schedule())
    for g, i in reversed(sched):
        wires = _pair_wires(i)
        Uenc = gates[g]
        B = _reduced_outer(lam, states[g], wires)
        Gbar_enc = -(B / ov) / N
        Gbar = _EE.conj().T @ Gbar_enc @ _EE
        M = _expm_adjoint_derivative(1j * generator(thetas[g]), Gbar)
        # d/dtheta_j: Re Tr(M^dag (i G_j)).
        grad[g] = np.real(1j * np.einsum("ab,jab->j", M.conj(), BASIS))
        lam = apply(lam, Uenc.conj().T, wires)
    return F, grad.reshape(-1)


def gradient(ansatz: Ansatz, params: np.ndarray, target: np.ndarray) -> np.ndarray:
    return cost_and_gradient(ansatz, params, target)[1]


# --------------------------------------------------------------------------
# optimisation


@dataclass
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1
    final_lr_ratio: float = 1.0

    def rate(self, it: int, iterations: int) -> float:
        """Exponentially decayed step size, from ``lr`` to ``lr * final_lr_ratio``."""
        if iterations <= 1:
            return self.lr
        return self.lr * self.final_lr_ratio ** ((it - 1) / (iterations - 1))


@dataclass
class RepeatResult:
    seed: int
    params: np.ndarray
    trace: list[float]
    final: float
    failed: bool = False


@dataclass
class OptimizeResult:
    best_params: np.ndarray
    repeats: list[RepeatResult] = field(default_factory=list)

    @property
    def finals(self) -> list[float]:
        return [r.final for r in self.repeats]

    @property
    def mean_final(self) -> float:
        ok = [r.final for r in self.repeats if not r.failed]
        return float(np.mean(ok)) if ok else math.inf


def adam_run(ansatz: Ansatz, target: np.ndarray, iterations: int, seed: int,
             config: AdamConfig | None = None, callback=None) -> RepeatResult:
    """One Adam optimisation from a seeded uniform(-s, s) initialisation.

    The trace holds the cost evaluated at each iterate before its update;
    ``final`` is the cost at the last iterate.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    cfg = config or AdamConfig()
    rng = np.random.default_rng(seed)
    x = rng.uniform(-cfg.init_scale, cfg.init_scale, ansatz.n_params)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace = []
    for it in range(1, iterations + 1):
        F, g = cost_and_gradient(ansatz, x, target)
        if not (np.isfinite(F) and np.all(np.isfinite(g))):
            log.warning("non-finite cost at iteration %d (seed %d); repeat aborted", it, seed)
            return RepeatResult(seed, x, trace, math.inf, failed=True)
        trace.append(F)
        if callback is not None:
            callback(it, F)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1**it)
        vhat = v / (1 - cfg.beta2**it)
        x = x - cfg.rate(it, iterations) * mhat / (np.sqrt(vhat) + cfg.eps)
    final = nlf(prepare(ansatz, x), target)
    return RepeatResult(seed, x, trace, final, failed=not np.isfinite(final))


def repeat_seeds(seed: int, repeats: int) -> list[int]:
    """Independent per-repeat seeds derived from one base seed."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(repeats)]


def optimize(target: np.ndarray, layers: int = 2, iterations: int = 500, seed: int = 0, repeats: int = 10,
             config: AdamConfig | None = None, n_qutrits: int = N_QUTRITS, workers: int = 1) -> OptimizeResult:
    """Adam optimisation of the ansatz towards ``target`` over several seeded repeats."""
    ansatz = Ansatz(layers, n_qutrits)
    seeds = repeat_seeds(seed, repeats)
    if workers > 1 and repeats > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(adam_run, ansatz, target, iterations, s, config) for s in seeds]
            runs = [f.result() for f in futs]
    else:
        runs = [adam_run(ansatz, target, iterations, s, config) for s in seeds]
    ok = [r for r in runs if not r.failed]
    best = min(ok, key=lambda r: r.final).params if ok else runs[0].params
    return OptimizeResult(best, runs)
