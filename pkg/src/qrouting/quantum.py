"""Dense state-vector engine for the entangled routing pipeline.

Each decision node of the network owns one qubit.  A round of the game
prepares |0...0>, entangles the qubits with J(gamma), lets every player
apply a local unitary rotation, un-entangles with J(gamma) adjoint and
reads out the per-qubit probabilities of outcome 0.  Those probabilities
are the routing fractions used by the network layer.

Conventions (fixed so traces are comparable across runs):

* Qubit 0 belongs to the first decision node (player ``s`` on the
  canonical network) and is the most significant bit of the basis index,
  so basis state ``0b100`` means qubit 0 measured 1 and the others 0.
* Measurement outcome 0 routes along a node's option-0 edge.

The entangler J(gamma) = exp(i * gamma * X^(x)N) is applied in closed form
cos(gamma) * I + i * sin(gamma) * X^(x)N, exact because X^(x)N squares to
the identity.  X^(x)N flips every bit, i.e. reverses the amplitude vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NORM_ATOL = 1e-9        # state vectors must be normalized to this
UNITARY_ATOL = 1e-9     # player matrices must be unitary to this


@dataclass(frozen=True)
class StrategyParams:
    """One player's rotation angles (radians). Any finite values are legal."""

    theta: float
    phi: float
    alpha: float

    def __post_init__(self):
        for name in ("theta", "phi", "alpha"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"strategy parameter {name} must be finite, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.alpha], dtype=float)


@dataclass(frozen=True)
class QuantumState:
    """Normalized amplitudes over the 2**n_qubits computational basis."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be a positive integer")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2 ** self.n_qubits,):
            raise ValueError(
                f"expected {2 ** self.n_qubits} amplitudes, got shape {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(f"state norm {norm} deviates from 1 beyond {NORM_ATOL}")
        object.__setattr__(self, "amplitudes", amps)

    @staticmethod
    def zero(n_qubits: int) -> "QuantumState":
        """|0...0> on n_qubits qubits."""
        amps = np.zeros(2 ** n_qubits, dtype=complex)
        amps[0] = 1.0
        return QuantumState(n_qubits, amps)


def strategy_unitary(params: StrategyParams) -> np.ndarray:
    """2x2 rotation a player applies to its qubit.

    Rows/columns follow the (|0>, |1>) basis:

        [ e^{-i phi} cos(theta/2)   e^{ i alpha} sin(theta/2) ]
        [ -e^{-i alpha} sin(theta/2)  e^{ i phi} cos(theta/2) ]
    """
    c = math.cos(params.theta / 2.0)
    s = math.sin(params.theta / 2.0)
    ephi = complex(math.cos(params.phi), math.sin(params.phi))
    ealp = complex(math.cos(params.alpha), math.sin(params.alpha))
    return np.array(
        [[c / ephi, s * ealp],
         [-s / ealp, c * ephi]],
        dtype=complex,
    )


def apply_entangler(state: QuantumState, gamma: float, adjoint: bool = False) -> QuantumState:
    """Apply J(gamma), or its adjoint, to the state.

    J(gamma) = cos(gamma) I + i sin(gamma) X^(x)N; the adjoint flips the
    sign of the imaginary part.  gamma may be any finite real; experiment
    drivers restrict it to [0, pi/2].
    """
    if not math.isfinite(gamma):
        raise ValueError(f"gamma must be finite, got {gamma!r}")
    sign = -1.0 if adjoint else 1.0
    amps = state.amplitudes
    out = math.cos(gamma) * amps + sign * 1j * math.sin(gamma) * amps[::-1]
    return QuantumState(state.n_qubits, out)


def apply_local_unitaries(state: QuantumState, unitaries) -> QuantumState:
    """Apply one 2x2 unitary per qubit (tensor-product action)."""
    mats = [np.asarray(u, dtype=complex) for u in unitaries]
    if len(mats) != state.n_qubits:
        raise ValueError(
            f"need {state.n_qubits} unitaries, got {len(mats)}")
    eye = np.eye(2)
    for i, u in enumerate(mats):
        if u.shape != (2, 2):
            raise ValueError(f"unitary {i} has shape {u.shape}, expected (2, 2)")
        if np.max(np.abs(u.conj().T @ u - eye)) > UNITARY_ATOL:
            raise ValueError(f"matrix {i} is not unitary within {UNITARY_ATOL}")
    n = state.n_qubits
    psi = state.amplitudes.reshape((2,) * n)
    # Contract qubit axis k with U_k's input index; axis order is preserved.
    for k, u in enumerate(mats):
        psi = np.tensordot(u, psi, axes=([1], [k]))
        psi = np.moveaxis(psi, 0, k)
    return QuantumState(n, psi.reshape(-1))


def final_state(strategies, gamma: float) -> QuantumState:
    """Run the full pipeline J+ (U_1 x ... x U_N) J on |0...0>."""
    strategies = list(strategies)
    state = QuantumState.zero(len(strategies))
    state = apply_entangler(state, gamma)
    state = apply_local_unitaries(state, [strategy_unitary(p) for p in strategies])
    return apply_entangler(state, gamma, adjoint=True)


def marginals(state: QuantumState) -> np.ndarray:
    """P(qubit k = 0) for every qubit, computed exactly (no sampling)."""
    n = state.n_qubits
    probs = np.abs(state.amplitudes.reshape((2,) * n)) ** 2
    out = np.empty(n)
    for k in range(n):
        out[k] = probs.take(0, axis=k).sum()
    return out


# ---------------------------------------------------------------------------
# Batched fast path.  The repeated game evaluates one base point plus one
# perturbed point per strategy parameter each round; doing all of them in a
# single vectorized pass keeps long runs cheap.  Results agree with the
# single-state operations above to floating-point roundoff.
# ---------------------------------------------------------------------------

_ABC = "abcdefghijklmnopqrstuvwxyz"
_EINSUM_PATHS: dict = {}


def strategy_unitaries_batch(params: np.ndarray) -> np.ndarray:
    """(B, K, 3) angle array -> (B, K, 2, 2) unitaries."""
    theta, phi, alpha = params[..., 0], params[..., 1], params[..., 2]
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    ephi = np.exp(1j * phi)
    ealp = np.exp(1j * alpha)
    out = np.empty(params.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = c / ephi
    out[..., 0, 1] = s * ealp
    out[..., 1, 0] = -s / ealp
    out[..., 1, 1] = c * ephi
    return out


def pipeline_marginals_batch(params: np.ndarray, gamma: float) -> np.ndarray:
    """(B, K, 3) strategy batch -> (B, K) outcome-0 probabilities."""
    if not np.all(np.isfinite(params)):
        raise ValueError("strategy parameters must be finite")
    bsize, n, _ = params.shape
    mats = strategy_unitaries_batch(params)
    psi = np.zeros((bsize, 2 ** n), dtype=complex)
    psi[:, 0] = 1.0
    cg, sg = math.cos(gamma), math.sin(gamma)
    psi = cg * psi + 1j * sg * psi[:, ::-1]
    psi = psi.reshape((bsize,) + (2,) * n)
    # einsum 'zAa,zBb,...,zab...->zAB...' applies all per-qubit unitaries;
    # z is the batch axis.  The contraction path is cached per qubit count
    # (path search costs more than the contraction itself here).
    ins = _ABC[:n]
    outs = _ABC.upper()[:n]
    spec = ",".join(f"z{o}{i}" for o, i in zip(outs, ins))
    spec += f",z{ins}->z{outs}"
    operands = [mats[:, k] for k in range(n)] + [psi]
    path = _EINSUM_PATHS.get(n)
    if path is None:
        path = np.einsum_path(spec, *operands, optimize="greedy")[0]
        _EINSUM_PATHS[n] = path
    psi = np.einsum(spec, *operands, optimize=path)
    psi = psi.reshape(bsize, 2 ** n)
    psi = cg * psi - 1j * sg * psi[:, ::-1]
    probs = (psi.real ** 2 + psi.imag ** 2).reshape((bsize,) + (2,) * n)
    marg = np.empty((bsize, n))
    for k in range(n):
        marg[:, k] = probs.take(0, axis=1 + k).reshape(bsize, -1).sum(axis=1)
    return marg
