"""Dynamic temporal window proposals from frame-wise probabilities.

Peaks of the probability trace are detected with a height threshold, a
one-sided Gaussian is fitted by nonlinear least squares to each flank of
every peak, and the fitted spreads set the window extent. Windows are
half-open frame intervals [l, r) suitable for slicing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIGMA_MIN = 2.0
SIGMA_FALLBACK = 30.0
FIT_TOL = 1e-8
FIT_MAX_ITER = 100


@dataclass(frozen=True)
class Peak:
    """A local maximum of the probability trace."""
    index: int
    height: float


@dataclass(frozen=True)
class FitResult:
    """One-sided Gaussian fit: amplitude, spread, and convergence info."""
    amplitude: float
    sigma: float
    residual_norm: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class WindowProposal:
    """Half-open frame window [left, right) around a probability peak."""
    peak: int
    sigma_left: float
    sigma_right: float
    left: int
    right: int
    peak_height: float

    def length(self) -> int:
        return self.right - self.left


def detect_peaks(probs: np.ndarray, threshold: float) -> list[Peak]:
    """Find local maxima with height >= threshold, in ascending index order.

    A run of equal values bounded by strictly lower (or absent) neighbors is
    a plateau and contributes its center index, rounded down. Boundary frames
    qualify on the strength of their single neighbor.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"detect_peaks: need a non-empty 1-D array, got shape {p.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"detect_peaks: threshold must be in (0, 1), got {threshold}")
    t = p.size
    # compress equal-valued runs, then compare each run against its neighbors
    change = np.flatnonzero(p[1:] != p[:-1])
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [t - 1]))
    vals = p[starts]
    left_ok = np.empty(starts.size, dtype=bool)
    right_ok = np.empty(starts.size, dtype=bool)
    left_ok[0] = True
    left_ok[1:] = vals[1:] > vals[:-1]
    right_ok[-1] = True
    right_ok[:-1] = vals[:-1] > vals[1:]
    keep = left_ok & right_ok & (vals >= threshold)
    centers = (starts[keep] + ends[keep]) // 2
    return [Peak(int(c), float(v)) for c, v in zip(centers, vals[keep])]


def _half_gaussian(tau: np.ndarray, mu: int, amplitude: float, sigma: float) -> np.ndarray:
    z = (tau - mu) / sigma
    return amplitude * np.exp(-0.5 * z * z)


def fit_side_gaussian(probs: np.ndarray, peak: Peak, side: str) -> FitResult:
    """Fit amplitude and spread of a Gaussian flank by Levenberg-Marquardt.

    The mean is pinned to the peak index; only the samples on the requested
    side ("left" covers [0, peak], "right" covers [peak, end]) enter the
    residual. Damped Gauss-Newton steps run until the relative change in the
    squared residual drops below ``FIT_TOL`` or ``FIT_MAX_ITER`` is reached.
    A collapsed or exploded spread is clamped to [SIGMA_MIN, len(probs)] and
    a fit that never settles reports ``SIGMA_FALLBACK``; both cases come back
    with ``converged=False``.
    """
    p = np.asarray(probs, dtype=np.float64)
    t = p.size
    mu = peak.index
    if side == "left":
        tau = np.arange(0, mu + 1, dtype=np.float64)
        y = p[: mu + 1]
    elif side == "right":
        tau = np.arange(mu, t, dtype=np.float64)
        y = p[mu:]
    else:
        raise ValueError(f"fit_side_gaussian: side must be 'left' or 'right', got {side!r}")

    if tau.size < 2:
        return FitResult(float(p[mu]), SIGMA_MIN, float(abs(p[mu])), False, 0)

    sigma_max = float(t)
    amp = float(p[mu])
    sigma = max(5.0, t / 50.0)

    def cost(a: float, s: float) -> float:
        r = y - _half_gaussian(tau, mu, a, s)
        return float(r @ r)

    c = cost(amp, sigma)
    lam = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, FIT_MAX_ITER + 1):
        z = (tau - mu) / sigma
        e = np.exp(-0.5 * z * z)
        model = amp * e
        r = y - model
        # Jacobian of the model w.r.t. (amplitude, sigma)
        j_a = e
        j_s = model * z * z / sigma
        jtj = np.array([[j_a @ j_a, j_a @ j_s], [j_a @ j_s, j_s @ j_s]])
        jtr = np.array([j_a @ r, j_s @ r])
        damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
        try:
            step = np.linalg.solve(damped, jtr)
        except np.linalg.LinAlgError:
            break
        trial_amp = amp + step[0]
        trial_sigma = abs(sigma + step[1])
        if trial_sigma < 1e-6 or not np.isfinite(trial_sigma) or not np.isfinite(trial_amp):
            break
        trial_cost = cost(trial_amp, trial_sigma)
        if trial_cost <= c:
            rel_change = abs(c - trial_cost) / max(c, 1e-300)
            amp, sigma, c = trial_amp, trial_sigma, trial_cost
            lam = max(lam * 0.3, 1e-12)
            if rel_change < FIT_TOL or c < 1e-24:
                converged = True
                break
            if sigma < 1e-3:
                break
        else:
            lam = min(lam * 10.0, 1e12)

    residual = math.sqrt(max(c, 0.0))
    # a collapsed or exploded spread is informative: clamp to the nearer bound
    if sigma < SIGMA_MIN:
        return FitResult(amp, SIGMA_MIN, residual, False, iterations)
    if sigma > sigma_max:
        return FitResult(amp, sigma_max, residual, False, iterations)
    if not converged:
        return FitResult(amp, SIGMA_FALLBACK, residual, False, iterations)
    return FitResult(amp, sigma, residual, True, iterations)


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def window_bounds(mu: int, sigma_l: float, sigma_r: float, n_std: float, t: int) -> tuple[int, int]:
    left = max(0, min(t, _round_half_away(mu - n_std * sigma_l)))
    right = max(0, min(t, _round_half_away(mu + n_std * sigma_r)))
    # widen symmetrically if rounding collapsed the window
    while right - left < 2 and (left > 0 or right < t):
        if left > 0:
            left -= 1
        if right < t and right - left < 2:
            right += 1
    return left, right


def _cap_peaks(peaks: list[Peak], max_peaks: int | None) -> list[Peak]:
    if max_peaks is None or len(peaks) <= max_peaks:
        return peaks
    order = sorted(range(len(peaks)), key=lambda i: -peaks[i].height)
    return [peaks[i] for i in sorted(order[:max_peaks])]


def propose_windows(probs: np.ndarray, n_std: float = 2.0, threshold: float = 0.5,
                    max_peaks: int | None = None) -> list[WindowProposal]:
    """Turn a probability trace into one window per detected peak.

    Always returns at least one proposal: when nothing clears the threshold,
    a fallback window with spread ``SIGMA_FALLBACK`` is centered on the
    global argmax so downstream grading has input. ``max_peaks`` optionally
    keeps only the tallest peaks (ascending index order preserved), which
    bounds the work on noisy traces.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"propose_windows: need a non-empty 1-D array, got shape {p.shape}")
    t = p.size
    peaks = _cap_peaks(detect_peaks(p, threshold), max_peaks)
    proposals: list[WindowProposal] = []
    if not peaks:
        idx = int(np.argmax(p))
        left, right = window_bounds(idx, SIGMA_FALLBACK, SIGMA_FALLBACK, n_std, t)
        return [WindowProposal(idx, SIGMA_FALLBACK, SIGMA_FALLBACK, left, right, float(p[idx]))]
    for peak in peaks:
        fl = fit_side_gaussian(p, peak, "left")
        fr = fit_side_gaussian(p, peak, "right")
        left, right = window_bounds(peak.index, fl.sigma, fr.sigma, n_std, t)
        proposals.append(
            WindowProposal(peak.index, fl.sigma, fr.sigma, left, right, peak.height)
        )
    return proposals


def fixed_windows(probs: np.ndarray, width: int, threshold: float = 0.5,
                  max_peaks: int | None = None) -> list[WindowProposal]:
    """Same peak detection, but constant-width windows centered on each peak."""
    if width < 2:
        raise ValueError(f"fixed_windows: width must be >= 2, got {width}")
    p = np.asarray(probs, dtype=np.float64)
    t = p.size
    peaks = _cap_peaks(detect_peaks(p, threshold), max_peaks)
    if not peaks:
        peaks = [Peak(int(np.argmax(p)), float(p[int(np.argmax(p))]))]
    half = width / 2.0
    out = []
    for peak in peaks:
        left, right = window_bounds(peak.index, half, half, 1.0, t)
        out.append(WindowProposal(peak.index, half, half, left, right, peak.height))
    return out
