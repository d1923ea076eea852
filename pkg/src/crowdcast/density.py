"""Crowd density maps: Gaussian rasterization of pedestrian positions and
divergence metrics between maps.

A density frame is an (H, W) float array with values in [0, 1]; a density
sequence stacks T frames into a (T, H, W) array. Each pedestrian contributes
an isotropic Gaussian kernel with peak amplitude 1.0 centered at its
(x, y) position; overlaps are summed and the frame is clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RangeError

DEFAULT_SIGMA = 3.0
DEFAULT_EPSILON = 1e-12

# Kernel support radius in sigmas. Tail mass beyond 4 sigma is < 1e-6, so the
# truncation keeps rasterization O(agents) without visible artifacts.
KERNEL_RADIUS_SIGMAS = 4.0


@dataclass
class MetricReport:
    """Per-step JS divergences plus their mean (ad_js) and final value (fd_js)."""

    per_step_js: list[float]
    ad_js: float
    fd_js: float

    @classmethod
    def from_steps(cls, per_step_js) -> "MetricReport":
        steps = [float(v) for v in per_step_js]
        if not steps:
            raise ParameterError("metric report needs at least one prediction step")
        return cls(per_step_js=steps, ad_js=float(np.mean(steps)), fd_js=steps[-1])


def rasterize_frame(positions, width: int, height: int, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Rasterize pedestrian positions into one (height, width) density frame.

    `positions` is an iterable of (x, y) pixel coordinates with x in [0, width)
    and y in [0, height). The kernel value at pixel (row i, col j) is
    exp(-((j-x)^2 + (i-y)^2) / (2 sigma^2)), truncated at radius ceil(4 sigma).
    Contributions are summed over pedestrians, then clamped to [0, 1].
    """
    if sigma <= 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be positive and finite, got {sigma}")
    if width <= 0 or height <= 0:
        raise ParameterError(f"scene dimensions must be positive, got {width}x{height}")

    frame = np.zeros((height, width), dtype=np.float64)
    pts = np.asarray(positions, dtype=np.float64)
    if pts.size == 0:
        return frame
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ParameterError(f"positions must be an (N, 2) array of (x, y), got shape {pts.shape}")

    radius = math.ceil(KERNEL_RADIUS_SIGMAS * sigma)
    inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma)
    for x, y in pts:
        if not (0.0 <= x < width and 0.0 <= y < height):
            raise RangeError(f"position ({x}, {y}) outside scene [0, {width}) x [0, {height})")
        col_lo = max(0, math.ceil(x - radius))
        col_hi = min(width - 1, math.floor(x + radius))
        row_lo = max(0, math.ceil(y - radius))
        row_hi = min(height - 1, math.floor(y + radius))
        cols = np.arange(col_lo, col_hi + 1, dtype=np.float64)
        rows = np.arange(row_lo, row_hi + 1, dtype=np.float64)
        dist_sq = (rows[:, None] - y) ** 2 + (cols[None, :] - x) ** 2
        frame[row_lo:row_hi + 1, col_lo:col_hi + 1] += np.exp(-dist_sq * inv_two_sigma_sq)
    np.clip(frame, 0.0, 1.0, out=frame)
    return frame


def rasterize_sequence(frame_positions, width: int, height: int,
                       sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Rasterize a window of per-frame position lists into a (T, H, W) sequence.

    `frame_positions` holds one positions array per frame; frame t contains
    exactly the agents observed at that frame, so agents absent from a frame
    contribute nothing to it.
    """
    frame_positions = list(frame_positions)
    if not frame_positions:
        raise ParameterError("cannot rasterize an empty window")
    frames = [rasterize_frame(pts, width, height, sigma) for pts in frame_positions]
    return np.stack(frames, axis=0)


def validate_density_sequence(seq: np.ndarray) -> np.ndarray:
    """Check the (T, H, W) shape, finiteness and [0, 1] range of a sequence."""
    seq = np.asarray(seq)
    if seq.ndim != 3:
        raise ParameterError(f"density sequence must be (T, H, W), got shape {seq.shape}")
    if not np.isfinite(seq).all():
        raise ParameterError("density sequence contains non-finite values")
    if seq.min() < 0.0 or seq.max() > 1.0:
        raise ParameterError("density values must lie in [0, 1]")
    return seq


def normalize_map(frame: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Turn a non-negative map into a probability grid.

    Epsilon is added to every pixel before normalization, so all-zero maps
    normalize to the uniform distribution and divergences stay finite.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise ParameterError("cannot normalize an empty map")
    if frame.min() < 0.0:
        raise ParameterError("normalize_map requires non-negative values")
    smoothed = frame + epsilon
    total = smoothed.sum()
    if total <= 0.0:
        raise ParameterError("map has zero total mass and epsilon is zero")
    return smoothed / total


def kl_divergence(g: np.ndarray, c: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> float:
    """KL divergence between epsilon-normalized maps, with a 1/(W*H) prefactor.

    Computed as sum(gbar * log(gbar / cbar)) / (W * H). The prefactor rescales
    but never reorders comparisons; it is kept for consistency with the
    companion JS metric used throughout evaluation.
    """
    g = np.asarray(g, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if g.shape != c.shape:
        raise ParameterError(f"map shapes differ: {g.shape} vs {c.shape}")
    gbar = normalize_map(g, epsilon)
    cbar = normalize_map(c, epsilon)
    value = float(np.sum(gbar * np.log(gbar / cbar))) / g.size
    # Gibbs' inequality guarantees >= 0; clamp float round-off on near-equal maps.
    return max(value, 0.0)


def js_divergence(g: np.ndarray, c: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> float:
    """Symmetrized-KL Jensen-Shannon divergence: 0.5*(KL(g||c) + KL(c||g)).

    This is the symmetrized form, not the midpoint-mixture JS. Symmetry is
    bit-exact because float addition commutes.
    """
    return 0.5 * (kl_divergence(g, c, epsilon) + kl_divergence(c, g, epsilon))


def score_forecast(pred: np.ndarray, gt: np.ndarray,
                   epsilon: float = DEFAULT_EPSILON) -> MetricReport:
    """Score a predicted (T_pred, H, W) sequence against ground truth.

    per_step_js[t] is the JS divergence at step t; ad_js its mean, fd_js its
    final entry.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ParameterError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    if pred.ndim != 3 or pred.shape[0] < 1:
        raise ParameterError("score_forecast expects non-empty (T, H, W) sequences")
    steps = [js_divergence(pred[t], gt[t], epsilon) for t in range(pred.shape[0])]
    return MetricReport.from_steps(steps)
