"""Fringes, correlation values and the CHSH S parameter from fourfold counts.

Waveplate angles are HWP angles in degrees; the analysis angle is twice
the HWP angle, and the orthogonal setting of a HWP angle x is x + 45.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NoSignalError

TSIRELSON = 2.0 * math.sqrt(2.0)
DEFAULT_SETTINGS_HWP = (0.0, 22.5, 11.25, 33.75)


@dataclass(frozen=True)
class FringeFit:
    """Fit of ``offset + amplitude * cos(4 * (theta - phase))``."""

    amplitude: float
    visibility: float
    phase: float  # deg, in (-45, 45]
    offset: float
    residual: float  # reduced chi-square with Poisson weights
    visibility_error: float
    iterations: int

    def model(self, theta) -> np.ndarray:
        return self.offset + self.amplitude * np.cos(np.radians(4.0 * (np.asarray(theta, float) - self.phase)))


def _design(theta: np.ndarray) -> np.ndarray:
    x = np.radians(4.0 * theta)
    return np.column_stack([np.ones_like(x), np.cos(x), np.sin(x)])


def fit_fringe(points: Sequence[tuple[float, float]], max_iter: int = 100, rtol: float = 1e-9) -> FringeFit:
    """Fit a 90-degree-period fringe to (hwp_angle_deg, counts) points.

    Initialization is the discrete Fourier component at the fringe period;
    refinement is iteratively reweighted least squares with Poisson weights
    ``1 / max(model, 1)`` until the relative parameter change is below
    ``rtol`` (at most ``max_iter`` rounds).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidArgument("points must be (angle, counts) pairs")
    theta, y = pts[:, 0], pts[:, 1]
    if np.unique(theta).size < 5 or np.ptp(theta) < 90.0 - 1e-9:
        raise InvalidArgument("fringe fit needs >= 5 distinct angles spanning >= 90 degrees")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise InvalidArgument("counts must be finite and non-negative")
    if not np.any(y > 0):
        raise NoSignalError("all fringe counts are zero")

    X = _design(theta)
    x = np.radians(4.0 * theta)
    params = np.array([y.mean(), 2.0 * np.mean(y * np.cos(x)), 2.0 * np.mean(y * np.sin(x))])
    # Non-uniform grids: fall back to the unweighted solution as the start.
    if not np.allclose(X.T @ X / len(y), np.diag([1.0, 0.5, 0.5]), atol=1e-9):
        params = np.linalg.lstsq(X, y, rcond=None)[0]
    it = 0
    for it in range(1, max_iter + 1):
        w = 1.0 / np.maximum(X @ params, 1.0)
        A = X.T @ (X * w[:, None])
        new = np.linalg.solve(A, X.T @ (w * y))
        change = np.max(np.abs(new - params)) / max(np.max(np.abs(new)), 1e-300)
        params = new
        if change < rtol:
            break
    c, p, q = params
    w = 1.0 / np.maximum(X @ params, 1.0)
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    s = math.hypot(p, q)
    phase = math.degrees(math.atan2(q, p)) / 4.0
    if phase <= -45.0:
        phase += 90.0
    if c <= 0:
        raise NoSignalError("fitted fringe offset is not positive")
    vis = min(max(s / c, 0.0), 1.0)
    # Delta method for V = sqrt(p^2 + q^2) / c.
    if s > 0:
        grad = np.array([-s / c**2, p / (s * c), q / (s * c)])
    else:
        grad = np.array([0.0, 1.0 / c, 0.0])
    v_err = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    resid = y - X @ params
    dof = max(len(y) - 3, 1)
    chi2 = float(np.sum(resid**2 * w)) / dof
    return FringeFit(float(s), vis, phase, float(c), chi2, v_err, it)


def correlation_E(counts) -> float:
    """Correlation from the four joint outcome counts of one setting pair.

    ``counts`` is either a mapping keyed by ``(a_perp, b_perp)`` booleans or
    a sequence ordered like the estimator numerator:
    ``(C(a,b), C(a_perp,b_perp), C(a,b_perp), C(a_perp,b))``.
    """
    if isinstance(counts, Mapping):
        same = counts[(False, False)] + counts[(True, True)]
        diff = counts[(False, True)] + counts[(True, False)]
    else:
        c = list(counts)
        if len(c) != 4:
            raise InvalidArgument("need exactly four counts")
        same, diff = c[0] + c[1], c[2] + c[3]
    if min(same, diff) < 0:
        raise InvalidArgument("counts must be non-negative")
    total = same + diff
    if total <= 0:
        raise NoSignalError("no coincidences for this setting pair")
    return float((same - diff) / total)


@dataclass(frozen=True)
class ChshResult:
    S: float
    standard_error: float
    E_values: tuple[float, float, float, float]  # (a,b), (a,b'), (a',b), (a',b')
    settings: tuple[float, float, float, float]  # analysis angles a, a', b, b' in degrees
    E_errors: tuple[float, float, float, float] = (math.nan,) * 4
    counts: float = math.nan

    @property
    def unphysical(self) -> bool:
        return self.S > TSIRELSON + 3.0 * self.standard_error

    @property
    def violates_local_realism(self) -> bool:
        return self.S > 2.0


def chsh_s(E, errors=None, settings=(0.0, 45.0, 22.5, 67.5), counts: float = math.nan) -> ChshResult:
    """S = |E(a,b) - E(a,b')| + |E(a',b) + E(a',b')|.

    ``E`` is ordered (a,b), (a,b'), (a',b), (a',b'); ``errors`` are their
    standard errors (zeros when omitted).  Values beyond the quantum bound
    by more than three standard errors trigger a warning.
    """
    E = tuple(float(e) for e in E)
    if len(E) != 4:
        raise InvalidArgument("need four correlation values")
    err = tuple(float(e) for e in (errors if errors is not None else (0.0,) * 4))
    S = abs(E[0] - E[1]) + abs(E[2] + E[3])
    se = math.sqrt(sum(e * e for e in err))
    res = ChshResult(S, se, E, tuple(float(s) for s in settings), err, counts)
    if res.unphysical or any(abs(e) > 1 + 1e-12 for e in E):
        warnings.warn(f"S = {S:.4f} exceeds 2*sqrt(2) beyond 3 standard errors", RuntimeWarning, stacklevel=2)
    return res


def setting_grid(settings_hwp=DEFAULT_SETTINGS_HWP) -> list[tuple[float, float]]:
    """The 16 (hwp1, hwp2) dwell settings needed for four correlation values."""
    a, a2, b, b2 = settings_hwp
    return [(x, y) for x in (a, a + 45.0, a2, a2 + 45.0) for y in (b, b + 45.0, b2, b2 + 45.0)]


def _lookup(table: Mapping, x: float, y: float):
    for (kx, ky), v in table.items():
        if math.isclose(kx % 180.0, x % 180.0, abs_tol=1e-9) and math.isclose(ky % 180.0, y % 180.0, abs_tol=1e-9):
            return v
    return None


def chsh_from_counts(table: Mapping[tuple[float, float], float], settings_hwp=DEFAULT_SETTINGS_HWP,
                     method: str = "poisson", rng: np.random.Generator | None = None,
                     n_boot: int = 2000) -> ChshResult:
    """CHSH result from a {(hwp1_deg, hwp2_deg): counts} table.

    Standard errors follow Poisson propagation, ``var(E) = (1 - E^2) / N``;
    ``method="bootstrap"`` resamples every count as Poisson instead
    (needs ``rng``).
    """
    a, a2, b, b2 = settings_hwp
    missing = [(x, y) for x, y in setting_grid(settings_hwp) if _lookup(table, x, y) is None]
    if missing:
        raise InvalidArgument("missing dwell settings (hwp1, hwp2): " + ", ".join(f"({x:g}, {y:g})" for x, y in missing))
    pairs = [(a, b), (a, b2), (a2, b), (a2, b2)]

    def quads(tab):
        out = []
        for x, y in pairs:
            out.append([_lookup(tab, x, y), _lookup(tab, x + 45, y + 45), _lookup(tab, x, y + 45),
                        _lookup(tab, x + 45, y)])
        return np.asarray(out, dtype=float)

    q = quads(table)
    E = [correlation_E(row) for row in q]
    N = q.sum(axis=1)
    if method == "poisson":
        errs = [math.sqrt(max(1 - e * e, 0.0) / n) for e, n in zip(E, N)]
    elif method == "bootstrap":
        if rng is None:
            raise InvalidArgument("bootstrap needs an rng")
        draws = rng.poisson(np.broadcast_to(q, (n_boot,) + q.shape))
        tot = draws.sum(axis=2)
        Eb = np.where(tot > 0, (draws[..., 0] + draws[..., 1] - draws[..., 2] - draws[..., 3]) / np.maximum(tot, 1), 0.0)
        errs = list(Eb.std(axis=0, ddof=1))
    else:
        raise InvalidArgument(f"unknown error method {method!r}")
    analysis = (2 * a, 2 * a2, 2 * b, 2 * b2)
    return chsh_s(E, errs, analysis, float(N.sum()))


@dataclass(frozen=True)
class SvsRatePoint:
    roi: float  # ps half-width
    measured_rate_hz: float
    corrected_rate_hz: float
    S: float
    standard_error: float
    counts: int


def s_vs_rate(dataset, roi_list, herald, settings_hwp=DEFAULT_SETTINGS_HWP, **window_kw) -> list[SvsRatePoint]:
    """S and fourfold rate for every ROI of a sweep.

    The rate is the fourfold count over the live time of the CHSH dwells;
    the corrected rate divides by the product of the spoke detector
    efficiencies recorded in the dataset metadata.  S is NaN for ROIs where
    some setting pair has no fourfolds.
    """
    from .analysis import roi_sweep

    grid = setting_grid(settings_hwp)
    dwells = dataset.dwells
    use = [i for i, d in enumerate(dwells) if any(_same_setting(d, x, y) for x, y in grid)]
    present = {(x, y) for x, y in grid if any(_same_setting(dwells[i], x, y) for i in use)}
    absent = [g for g in grid if g not in present]
    if absent:
        raise InvalidArgument("missing dwell settings (hwp1, hwp2): " + ", ".join(f"({x:g}, {y:g})" for x, y in absent))
    sweep = roi_sweep(dataset, roi_list, herald, dwell_indices=use, **window_kw)
    eff = float(np.prod(dataset.spoke_efficiencies))
    out = []
    for point in sweep:
        table: dict[tuple[float, float], float] = {}
        for x, y in grid:
            table[(x, y)] = float(sum(point.counts[i] for i in use if _same_setting(dwells[i], x, y)))
        try:
            res = chsh_from_counts(table, settings_hwp)
            S, se = res.S, res.standard_error
        except NoSignalError:
            # Some setting pair has no fourfolds at this ROI.
            S = se = math.nan
        out.append(SvsRatePoint(point.roi, point.rate_hz, point.rate_hz / eff, S, se,
                                int(sum(point.counts[i] for i in use))))
    return out


def _same_setting(dwell, x: float, y: float) -> bool:
    return (math.isclose(dwell.hwp1 % 180.0, x % 180.0, abs_tol=1e-9)
            and math.isclose(dwell.hwp2 % 180.0, y % 180.0, abs_tol=1e-9))
