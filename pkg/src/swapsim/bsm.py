"""Linear-optics Bell-state measurement at the hub.

Network: a 50:50 fiber splitter with inputs ``a`` (from S1) and ``b`` (from
S2), outputs Port1 / Port2, each followed by a polarizing beamsplitter.
The four detectors are Port1-H, Port1-V, Port2-H, Port2-V.

Partial indistinguishability uses a scalar mixture: with probability equal
to the mode overlap the two photons interfere as identical bosons,
otherwise they route independently.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument
from .polarization import BellKind, PolarizationOperator, TwoQubitState


class Detector(enum.IntEnum):
    P1H = 0
    P1V = 1
    P2H = 2
    P2V = 3

    @property
    def label(self) -> str:
        return ("Port1-H", "Port1-V", "Port2-H", "Port2-V")[self]

    @classmethod
    def from_label(cls, label: str) -> Detector:
        return {d.label: d for d in cls}[label]


ClickPattern = frozenset  # frozenset[Detector]

_PSI_PLUS_PATTERNS = (
    frozenset({Detector.P1H, Detector.P1V}),
    frozenset({Detector.P2H, Detector.P2V}),
)
_PSI_MINUS_PATTERNS = (
    frozenset({Detector.P1H, Detector.P2V}),
    frozenset({Detector.P1V, Detector.P2H}),
)
HERALD_MAP: dict[frozenset, BellKind] = {
    **{p: BellKind.PSI_PLUS for p in _PSI_PLUS_PATTERNS},
    **{p: BellKind.PSI_MINUS for p in _PSI_MINUS_PATTERNS},
}


def herald_from_clicks(pattern) -> BellKind | None:
    return HERALD_MAP.get(frozenset(Detector(d) for d in pattern))


@dataclass(frozen=True)
class BsmParams:
    excess_loss: float = 1.3  # dB
    hom_visibility: float = 0.80
    overlap_width: float | None = None  # ps; None -> source coherence time
    paddle: PolarizationOperator = field(default_factory=PolarizationOperator.identity)

    def __post_init__(self):
        if not 0 <= self.hom_visibility <= 1:
            raise InvalidArgument(f"hom_visibility must be in [0, 1], got {self.hom_visibility}")
        if self.excess_loss < 0:
            raise InvalidArgument(f"excess_loss must be >= 0, got {self.excess_loss}")
        if self.overlap_width is not None and not self.overlap_width > 0:
            raise InvalidArgument(f"overlap_width must be > 0, got {self.overlap_width}")

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.excess_loss / 10.0)


def pair_overlap(dt, params: BsmParams, overlap_width: float | None = None):
    """Mode overlap of two photons whose hub arrivals differ by ``dt`` ps."""
    w = overlap_width if overlap_width is not None else params.overlap_width
    if w is None:
        raise InvalidArgument("overlap_width is not set")
    return params.hom_visibility * np.exp(-np.abs(dt) / w)


def mode_transfer(paddle: PolarizationOperator | None = None) -> np.ndarray:
    """4x4 single-photon transfer matrix, rows = detectors, cols = (aH, aV, bH, bV)."""
    J = np.eye(2) if paddle is None else paddle.matrix
    s = 1 / math.sqrt(2)
    L = np.zeros((4, 4), dtype=np.complex128)
    L[0:2, 0:2] = s * np.eye(2)  # a -> Port1
    L[2:4, 0:2] = s * J  # a -> Port2
    L[0:2, 2:4] = s * np.eye(2)  # b -> Port1
    L[2:4, 2:4] = -s * J  # b -> Port2
    return L


@lru_cache(maxsize=8)
def _povms_cached(paddle_key: bytes | None):
    paddle = None if paddle_key is None else PolarizationOperator(np.frombuffer(paddle_key, dtype=np.complex128).reshape(2, 2))
    return _build_povms(mode_transfer(paddle))


def _build_povms(L: np.ndarray):
    """Two-photon POVMs on the (idler_a ⊗ idler_b) polarization space.

    Returns (M_ind, M_dist, E_a, E_b): ``M_*[m, n]`` is the 4x4 element for
    photon from ``a`` registering on detector m and photon from ``b`` on n
    (for interfering photons the two orderings share the pattern weight
    equally); ``E_a[m]`` / ``E_b[m]`` are single-photon elements.
    """
    la = L[:, 0:2]
    lb = L[:, 2:4]
    E_a = np.einsum("mp,mq->mpq", la.conj(), la)
    E_b = np.einsum("mp,mq->mpq", lb.conj(), lb)
    M_dist = np.einsum("mab,ncd->mnacbd", E_a, E_b).reshape(4, 4, 4, 4)

    # Bosonic amplitude for detectors {m, n}: a_p^dag b_q^dag -> sum over
    # both assignments of the two creation operators to the output modes.
    amp = np.einsum("mp,nq->mnpq", la, lb) + np.einsum("np,mq->mnpq", la, lb)
    amp = amp.reshape(4, 4, 4)
    M_ind = np.empty((4, 4, 4, 4), dtype=np.complex128)
    for m in range(4):
        for n in range(4):
            if m == n:
                # (c^dag)^2 |0> = sqrt(2) |2>, and amp carries both orderings.
                a = amp[m, m] / math.sqrt(2)
                M_ind[m, m] = np.outer(a.conj(), a)
            else:
                a = amp[m, n]
                M_ind[m, n] = np.outer(a.conj(), a) / 2.0
    return M_ind, M_dist, E_a, E_b


def povms(paddle: PolarizationOperator | None = None):
    key = None if paddle is None or paddle.allclose(PolarizationOperator.identity()) else paddle.matrix.tobytes()
    return _povms_cached(key)


def click_probabilities(joint_state: TwoQubitState, overlap: float, transmission: float = 1.0,
                        paddle: PolarizationOperator | None = None) -> dict[frozenset, float]:
    """Exact distribution of click patterns for one photon in each BSM input.

    ``joint_state`` is the polarization state of (photon a, photon b).
    Each photon survives ``transmission`` independently before the
    splitter; detectors do not resolve photon number.
    """
    if not 0 <= overlap <= 1:
        raise InvalidArgument(f"overlap must be in [0, 1], got {overlap}")
    M_ind, M_dist, E_a, E_b = povms(paddle)
    rho = joint_state.matrix
    out: dict[frozenset, float] = {}

    def add(pattern, p):
        out[pattern] = out.get(pattern, 0.0) + p

    both = transmission * transmission
    M = overlap * M_ind + (1 - overlap) * M_dist
    for m in range(4):
        for n in range(4):
            p = float(np.trace(M[m, n] @ rho).real)
            add(frozenset({Detector(m), Detector(n)}), both * p)
    only = transmission * (1 - transmission)
    rho_a = joint_state.reduced(0)
    rho_b = joint_state.reduced(1)
    for m in range(4):
        add(frozenset({Detector(m)}), only * float(np.trace(E_a[m] @ rho_a).real))
        add(frozenset({Detector(m)}), only * float(np.trace(E_b[m] @ rho_b).real))
    add(frozenset(), (1 - transmission) ** 2)
    return out


def two_photon_click_distribution(joint_state: TwoQubitState, overlap: float, rng: np.random.Generator,
                                  paddle: PolarizationOperator | None = None) -> frozenset:
    """Sample one click pattern for a photon pair entering both BSM inputs."""
    probs = click_probabilities(joint_state, overlap, 1.0, paddle)
    patterns = sorted(probs, key=lambda p: sorted(int(d) for d in p))
    weights = np.array([max(0.0, probs[p]) for p in patterns])
    return patterns[int(rng.choice(len(patterns), p=weights / weights.sum()))]


def herald_povm(herald: BellKind, overlap: float, paddle: PolarizationOperator | None = None) -> np.ndarray:
    if not herald.heraldable:
        raise InvalidArgument(f"{herald.value} cannot be heralded by this BSM")
    M_ind, M_dist, _, _ = povms(paddle)
    M = overlap * M_ind + (1 - overlap) * M_dist
    out = np.zeros((4, 4), dtype=np.complex128)
    for m in range(4):
        for n in range(4):
            if HERALD_MAP.get(frozenset({Detector(m), Detector(n)})) is herald:
                out += M[m, n]
    return out


def _four_photon(stateA: TwoQubitState, stateB: TwoQubitState) -> np.ndarray:
    """rho_A ⊗ rho_B indexed [sA, iA, sB, iB, sA', iA', sB', iB']."""
    return np.kron(stateA.matrix, stateB.matrix).reshape((2,) * 8)


def herald_probability(stateA: TwoQubitState, stateB: TwoQubitState, herald: BellKind, overlap: float,
                       paddle: PolarizationOperator | None = None) -> float:
    """Probability that the two idlers produce ``herald`` (lossless detection)."""
    M = herald_povm(herald, overlap, paddle).reshape(2, 2, 2, 2)
    r = _four_photon(stateA, stateB)
    return float(np.einsum("bdBD,pBrDpbrd->", M, r).real)


def heralded_state(stateA: TwoQubitState, stateB: TwoQubitState, herald: BellKind, overlap: float,
                   paddle: PolarizationOperator | None = None) -> TwoQubitState:
    """State of the two signal photons conditioned on a BSM herald.

    ``stateA`` / ``stateB`` are (signal, idler) states of S1 and S2 as they
    reach the BSM.  Output qubit order is (signal S1, signal S2).
    """
    if not 0 <= overlap <= 1:
        raise InvalidArgument(f"overlap must be in [0, 1], got {overlap}")
    M = herald_povm(herald, overlap, paddle).reshape(2, 2, 2, 2)
    r = _four_photon(stateA, stateB)
    sigma = np.einsum("bdBD,pBrDqbsd->prqs", M, r).reshape(4, 4)
    p = np.trace(sigma).real
    if p <= 0:
        raise InvalidArgument(f"herald {herald.value} has zero probability for these inputs")
    sigma = sigma / p
    sigma = 0.5 * (sigma + sigma.conj().T)
    return TwoQubitState(sigma / np.trace(sigma).real)


def joint_outcome_tables(stateA: TwoQubitState, stateB: TwoQubitState, passA: np.ndarray, passB: np.ndarray,
                         paddle: PolarizationOperator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Outcome tables for a BSM pair event with signal-photon analyzers.

    Returns ``(P_ind, P_dist)`` each shaped [xA, xB, m, n]: x = 0 if the
    signal passes its analyzer (projector ``passA`` / ``passB``), 1 if
    blocked; m / n are the detectors hit by idler A / idler B.  The event
    distribution for overlap v is ``v * P_ind + (1 - v) * P_dist``.
    """
    M_ind, M_dist, _, _ = povms(paddle)
    proj_a = np.stack([passA, np.eye(2) - passA])
    proj_b = np.stack([passB, np.eye(2) - passB])
    r = _four_photon(stateA, stateB)
    tables = []
    for M in (M_ind, M_dist):
        Mr = M.reshape(4, 4, 2, 2, 2, 2)
        P = np.einsum("xpq,yrs,mnbdBD,qBsDpbrd->xymn", proj_a, proj_b, Mr, r).real
        tables.append(np.clip(P, 0.0, None))
    return tables[0], tables[1]


def single_outcome_table(state: TwoQubitState, pass_proj: np.ndarray, port: str,
                         paddle: PolarizationOperator | None = None) -> np.ndarray:
    """[x, m] outcome table for an idler routed alone (no partner at the BSM)."""
    _, _, E_a, E_b = povms(paddle)
    E = E_a if port == "a" else E_b
    proj = np.stack([pass_proj, np.eye(2) - pass_proj])
    r = state.matrix.reshape(2, 2, 2, 2)
    P = np.einsum("xpq,mbB,qBpb->xm", proj, E, r).real
    return np.clip(P, 0.0, None)
