"""Jones-calculus algebra for polarization qubits and photon pairs.

Basis ordering for two-qubit objects is fixed to ``{HH, HV, VH, VV}``; the
first qubit is the left tensor factor.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

_UNITARY_TOL = 1e-9


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.complex128)
    if arr.shape != shape:
        raise InvalidArgument(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PolarizationOperator:
    """2x2 Jones matrix acting on one polarization qubit."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, (2, 2)))

    @classmethod
    def identity(cls) -> PolarizationOperator:
        return cls(np.eye(2))

    @property
    def dagger(self) -> PolarizationOperator:
        return PolarizationOperator(self.matrix.conj().T)

    def __matmul__(self, other: PolarizationOperator) -> PolarizationOperator:
        return PolarizationOperator(self.matrix @ other.matrix)

    def unitarity_error(self) -> float:
        return float(np.max(np.abs(self.matrix @ self.matrix.conj().T - np.eye(2))))

    def is_unitary(self, tol: float = _UNITARY_TOL) -> bool:
        return self.unitarity_error() <= tol

    @property
    def rotation_angle(self) -> float:
        """Poincare-sphere rotation angle in radians, in [0, pi].

        Global phase is discarded, so this is the angle of the closest SO(3)
        rotation: ``2 arccos(|tr U| / 2)``.
        """
        c = min(1.0, abs(np.trace(self.matrix)) / 2.0)
        return 2.0 * math.acos(c)

    def allclose(self, other: PolarizationOperator, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0))


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    """Density matrix of a photon pair's joint polarization.

    Validated once on construction (Hermitian, unit trace, positive
    semidefinite); operations trust their inputs afterwards.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix, (4, 4))
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise InvalidArgument("density matrix is not Hermitian")
        tr = np.trace(m)
        if abs(tr - 1.0) > 1e-12:
            raise InvalidArgument(f"density matrix trace {tr.real:.15g} != 1")
        if np.linalg.eigvalsh(m).min() < -1e-10:
            raise InvalidArgument("density matrix has a negative eigenvalue")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_ket(cls, ket) -> TwoQubitState:
        v = np.asarray(ket, dtype=np.complex128).reshape(4)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls) -> TwoQubitState:
        return cls(np.eye(4) / 4)

    @property
    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def reduced(self, qubit: int) -> np.ndarray:
        """Single-qubit reduced density matrix (qubit 0 or 1)."""
        r = self.matrix.reshape(2, 2, 2, 2)
        if qubit == 0:
            return np.einsum("ajbj->ab", r)
        if qubit == 1:
            return np.einsum("jajb->ab", r)
        raise InvalidArgument("qubit must be 0 or 1")

    def fidelity_pure(self, other: TwoQubitState) -> float:
        """Overlap tr(rho sigma); equals the fidelity when ``other`` is pure."""
        return float(np.trace(self.matrix @ other.matrix).real)

    def allclose(self, other: TwoQubitState, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0))


class BellKind(enum.Enum):
    PHI_PLUS = "phi+"
    PHI_MINUS = "phi-"
    PSI_PLUS = "psi+"
    PSI_MINUS = "psi-"

    @property
    def heraldable(self) -> bool:
        return self in (BellKind.PSI_PLUS, BellKind.PSI_MINUS)


_S = 1 / math.sqrt(2)
_BELL_KETS = {
    BellKind.PHI_PLUS: np.array([_S, 0, 0, _S]),
    BellKind.PHI_MINUS: np.array([_S, 0, 0, -_S]),
    BellKind.PSI_PLUS: np.array([0, _S, _S, 0]),
    BellKind.PSI_MINUS: np.array([0, _S, -_S, 0]),
}


def bell_ket(kind: BellKind) -> np.ndarray:
    return _BELL_KETS[kind].astype(np.complex128)


def bell_state(kind: BellKind) -> TwoQubitState:
    v = bell_ket(kind)
    return TwoQubitState(np.outer(v, v.conj()))


def _check_finite(name: str, x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise InvalidArgument(f"{name} must be finite, got {x}")
    return x


def hwp_operator(theta: float) -> PolarizationOperator:
    """Half-waveplate with fast axis at ``theta`` degrees from H.

    Real symmetric form ``[[cos 2t, sin 2t], [sin 2t, -cos 2t]]``; rotating
    the plate by ``theta`` rotates the analysed linear polarization by
    ``2 theta``.
    """
    t = math.radians(_check_finite("theta", theta))
    c, s = math.cos(2 * t), math.sin(2 * t)
    return PolarizationOperator(np.array([[c, s], [s, -c]]))


def rotation_operator(axis, angle: float) -> PolarizationOperator:
    """SU(2) element rotating the Poincare sphere by ``angle`` rad about ``axis``.

    Axis components are (S1, S2, S3) = (H/V, D/A, R/L).
    """
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    half = 0.5 * float(angle)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    gen = n[0] * sz + n[1] * sx + n[2] * sy
    return PolarizationOperator(math.cos(half) * np.eye(2) - 1j * math.sin(half) * gen)


def analyzer_projector(angle: float) -> np.ndarray:
    """Projector onto the linear polarization cos(a)|H> + sin(a)|V> (a in degrees)."""
    a = math.radians(_check_finite("angle", angle))
    v = np.array([math.cos(a), math.sin(a)], dtype=np.complex128)
    return np.outer(v, v)


def apply_local(uA: PolarizationOperator, uB: PolarizationOperator, rho: TwoQubitState) -> TwoQubitState:
    """Apply (uA ⊗ uB) rho (uA ⊗ uB)^dagger."""
    for name, u in (("uA", uA), ("uB", uB)):
        if not u.is_unitary():
            raise InvalidArgument(f"{name} is not unitary (error {u.unitarity_error():.3g})")
    U = np.kron(uA.matrix, uB.matrix)
    out = U @ rho.matrix @ U.conj().T
    # Re-symmetrise so round-off cannot accumulate across repeated rotations.
    out = 0.5 * (out + out.conj().T)
    out = out / np.trace(out).real
    return TwoQubitState(out)


def joint_projection_prob(rho: TwoQubitState, alpha: float, beta: float) -> float:
    """Probability that both photons pass linear analyzers at ``alpha``, ``beta`` degrees."""
    P = np.kron(analyzer_projector(alpha), analyzer_projector(beta))
    p = float(np.trace(rho.matrix @ P).real)
    return min(1.0, max(0.0, p))


def correlation_tensor(rho: TwoQubitState) -> np.ndarray:
    """3x3 matrix T_ij = tr(rho s_i ⊗ s_j) in Stokes order (H/V, D/A, R/L)."""
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    ops = (sz, sx, sy)
    return np.array([[np.trace(rho.matrix @ np.kron(a, b)).real for b in ops] for a in ops])
