"""Independent Fock-space calculation of the linear-optics BSM.

Works directly with creation operators: each idler creation operator is
expanded over the splitter outputs (port 1 = (a + b)/sqrt2, port 2 =
(a - b)/sqrt2, polarization unchanged) and over two temporal modes.  The
second idler occupies the first idler's temporal mode with amplitude
sqrt(v) and an orthogonal one with amplitude sqrt(1 - v).  Only click
patterns on two distinct detectors are evaluated; detectors do not
resolve time bins, so different temporal assignments add incoherently.

Shares no code with ``swapsim.bsm``.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

DETECTORS = ("P1H", "P1V", "P2H", "P2V")
PSI_PLUS_PATTERNS = ({"P1H", "P1V"}, {"P2H", "P2V"})
PSI_MINUS_PATTERNS = ({"P1H", "P2V"}, {"P1V", "P2H"})


def _expand_a(pol: int):
    s = 1 / math.sqrt(2)
    return [((pol, 0), s), ((2 + pol, 0), s)]


def _expand_b(pol: int, v: float):
    s = 1 / math.sqrt(2)
    out = []
    for t, w in ((0, math.sqrt(v)), (1, math.sqrt(1 - v))):
        if w:
            out += [((pol, t), s * w), ((2 + pol, t), -s * w)]
    return out


def pattern_amplitudes(i: int, k: int, v: float) -> dict:
    """Amplitudes of two-photon output Fock states for input a_i^dag b_k^dag |0>."""
    amps: dict = {}
    for (ma, ca), (mb, cb) in itertools.product(_expand_a(i), _expand_b(k, v)):
        key = tuple(sorted((ma, mb)))
        amps[key] = amps.get(key, 0.0) + ca * cb
    return amps


def conditional_signal_matrix(psi_a: np.ndarray, psi_b: np.ndarray, pattern: set, v: float) -> np.ndarray:
    """Unnormalized signal density matrix for one two-detector click pattern.

    ``psi_a`` / ``psi_b`` are (signal, idler) two-qubit kets of the two sources.
    """
    m, n = sorted(DETECTORS.index(d) for d in pattern)
    A = np.asarray(psi_a, complex).reshape(2, 2)
    B = np.asarray(psi_b, complex).reshape(2, 2)
    table = {(i, k): pattern_amplitudes(i, k, v) for i in range(2) for k in range(2)}
    rho = np.zeros((4, 4), complex)
    for tm, tn in itertools.product(range(2), repeat=2):
        key = tuple(sorted(((m, tm), (n, tn))))
        phi = np.zeros((2, 2), complex)
        for s1, s2, i, k in itertools.product(range(2), repeat=4):
            phi[s1, s2] += A[s1, i] * B[s2, k] * table[(i, k)].get(key, 0.0)
        vec = phi.reshape(4)
        rho += np.outer(vec, vec.conj())
    return rho


def heralded_signal_state(psi_a, psi_b, patterns, v: float) -> tuple[np.ndarray, float]:
    """(normalized signal state, herald probability) summed over ``patterns``."""
    rho = sum(conditional_signal_matrix(psi_a, psi_b, p, v) for p in patterns)
    p = float(np.trace(rho).real)
    return rho / p, p
