"""Temporal-density-aware masking (TDM), frame masking and the multi-task
mask scheduler.

Three training tasks exist: future prediction, past prediction and
interpolation. Future/past prediction combine a frame mask (whole temporal
slices masked) with TDM on the opposite side; interpolation uses TDM over all
slices. TDM itself has two parts: a temporal masking ratio gamma(t) that
fixes how many tokens of slice t are masked, and density-aware sampling that
picks which tokens, with probability softmax(d_t / tau) over the slice's
accumulated densities.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMaskError, ParameterError
from .tokenizer import TokenField, TokenLayout, decubify


class MaskTask(enum.Enum):
    FUTURE_PREDICTION = "future_prediction"
    PAST_PREDICTION = "past_prediction"
    INTERPOLATION = "interpolation"


# Canonical ordering for task weight vectors.
TASK_ORDER = (MaskTask.FUTURE_PREDICTION, MaskTask.PAST_PREDICTION, MaskTask.INTERPOLATION)

TM_FUNCTION_NAMES = ("constant", "square_root", "linear", "square", "cubic", "exponential")


@dataclass
class TDMConfig:
    """Masking hyperparameters.

    task_weights follows TASK_ORDER (future, past, interpolation). The
    exponential ratio function is the default; the alternatives exist for the
    ablation harness and share its endpoint gamma(T_max) = 1 - e^{-lambda}
    (constant excepted, which uses constant_ratio everywhere).
    """

    lambda_max: float = 9.0
    tau: float = 500.0
    task_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    dm_enabled: bool = True
    lambda_per_batch: bool = False
    tm_function: str = "exponential"
    constant_ratio: float = 0.5

    def __post_init__(self):
        if self.lambda_max < 0:
            raise ParameterError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if self.tau <= 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        w = np.asarray(self.task_weights, dtype=np.float64)
        if w.shape != (3,) or (w < 0).any() or w.sum() <= 0:
            raise ParameterError(f"task_weights must be 3 non-negative values, got {self.task_weights}")
        self.task_weights = tuple(float(v) for v in w / w.sum())
        if self.tm_function not in TM_FUNCTION_NAMES:
            raise ParameterError(f"unknown TM ratio function {self.tm_function!r}; "
                                 f"choose from {TM_FUNCTION_NAMES}")
        if not (0.0 <= self.constant_ratio < 1.0):
            raise ParameterError(f"constant_ratio must lie in [0, 1), got {self.constant_ratio}")


@dataclass
class MaskPlan:
    """Boolean (n_r, n_s) mask (True = masked) for one task instance."""

    mask: np.ndarray
    task: MaskTask
    lambda_used: float

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    @property
    def n_visible(self) -> int:
        return int(self.mask.size - self.mask.sum())


def _time_fraction(t: int, t_max: int, task: MaskTask) -> float:
    """Map the 1-based slice index to the masking-curve abscissa u in [0, 1].

    Future prediction and interpolation mask more of the later slices; past
    prediction mirrors the curve (u = (T_max - t)/T_max) so the earlier
    future slices, the informative ones for reconstructing the past, are
    masked more.
    """
    if t_max < 1:
        raise ParameterError(f"t_max must be >= 1, got {t_max}")
    if not 1 <= t <= t_max:
        raise ParameterError(f"slice index t={t} outside 1..{t_max}")
    if task is MaskTask.PAST_PREDICTION:
        return (t_max - t) / t_max
    return t / t_max


# Largest double below 1.0: keeps gamma < 1 even where 1 - e^{-x} rounds up,
# so floor(gamma * N_s) always leaves at least one token unmasked per slice.
_BELOW_ONE = math.nextafter(1.0, 0.0)


def tm_ratio(t: int, t_max: int, lam: float, task: MaskTask) -> float:
    """Temporal masking ratio gamma(t) = 1 - e^{-lambda * u}.

    u = t/T_max for future prediction and interpolation (increasing in t),
    u = (T_max - t)/T_max for past prediction (decreasing in t). Always < 1.
    """
    return masking_ratio(t, t_max, lam, task, "exponential")


def masking_ratio(t: int, t_max: int, lam: float, task: MaskTask,
                  function: str = "exponential", constant_ratio: float = 0.5) -> float:
    """Evaluate one of the TM ratio function family members at slice t.

    Polynomial variants are scaled so gamma(T_max) matches the exponential
    curve's endpoint 1 - e^{-lambda}, isolating curve shape from total
    masking budget.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ParameterError(f"lambda must be finite and >= 0, got {lam}")
    u = _time_fraction(t, t_max, task)
    if function == "exponential":
        return min(-math.expm1(-lam * u), _BELOW_ONE)
    if function == "constant":
        if not (0.0 <= constant_ratio < 1.0):
            raise ParameterError(f"constant_ratio must lie in [0, 1), got {constant_ratio}")
        return constant_ratio
    peak = min(-math.expm1(-lam), _BELOW_ONE)
    if function == "square_root":
        return peak * math.sqrt(u)
    if function == "linear":
        return peak * u
    if function == "square":
        return peak * u ** 2
    if function == "cubic":
        return peak * u ** 3
    raise ParameterError(f"unknown TM ratio function {function!r}")


def sample_lambda(rng: np.random.Generator, lambda_max: float) -> float:
    """Draw lambda ~ U[0, lambda_max]. Drawn once per epoch during training."""
    if lambda_max < 0:
        raise ParameterError(f"lambda_max must be >= 0, got {lambda_max}")
    return float(rng.uniform(0.0, lambda_max))


def dm_probabilities(d_t: np.ndarray, tau: float) -> np.ndarray:
    """Density-aware masking probabilities softmax(d_t / tau).

    Max-subtraction keeps the exponentials in range; entries are strictly
    positive and sum to 1.
    """
    if tau <= 0 or not math.isfinite(tau):
        raise ParameterError(f"tau must be positive and finite, got {tau}")
    d = np.asarray(d_t, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ParameterError(f"d_t must be a non-empty vector, got shape {d.shape}")
    if (d < 0).any():
        raise ParameterError("accumulated densities must be non-negative")
    z = d / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sample_tdm_slice(d_t: np.ndarray, gamma_t: float, tau: float,
                     rng: np.random.Generator, dm_enabled: bool = True) -> np.ndarray:
    """Mask exactly floor(gamma_t * N_s) tokens of one temporal slice.

    Tokens are drawn without replacement by sequential weighted sampling:
    each draw picks index i with probability proportional to its remaining
    weight, then zeroes that weight (renormalizing implicitly). Weights are
    the density-aware probabilities, or uniform with dm_enabled=False.
    """
    if not (0.0 <= gamma_t < 1.0):
        raise ParameterError(f"gamma_t must lie in [0, 1), got {gamma_t}")
    d = np.asarray(d_t, dtype=np.float64)
    n_s = d.size
    mask = np.zeros(n_s, dtype=bool)
    k = int(math.floor(gamma_t * n_s))
    if k == 0:
        return mask
    if dm_enabled:
        weights = dm_probabilities(d, tau).copy()
    else:
        weights = np.full(n_s, 1.0 / n_s)
    for _ in range(k):
        cum = np.cumsum(weights)
        u = rng.random() * cum[-1]
        idx = int(np.searchsorted(cum, u, side="right"))
        if idx >= n_s or weights[idx] == 0.0:  # float edge: land on last positive weight
            idx = int(np.flatnonzero(weights)[-1])
        mask[idx] = True
        weights[idx] = 0.0
    return mask


def frame_mask(task: MaskTask, n_r: int, n_s: int, obs_slices: int) -> np.ndarray:
    """Whole-slice mask: future slices for future prediction, past slices for
    past prediction, nothing for interpolation."""
    if not 0 <= obs_slices <= n_r:
        raise ParameterError(f"obs_slices={obs_slices} outside 0..{n_r}")
    mask = np.zeros((n_r, n_s), dtype=bool)
    if task is MaskTask.FUTURE_PREDICTION:
        mask[obs_slices:, :] = True
    elif task is MaskTask.PAST_PREDICTION:
        mask[:obs_slices, :] = True
    return mask


def tdm_slice_indices(task: MaskTask, n_r: int, obs_slices: int):
    """(slice indices, t_max) of the side TDM applies to for a task."""
    if task is MaskTask.FUTURE_PREDICTION:
        return range(0, obs_slices), obs_slices
    if task is MaskTask.PAST_PREDICTION:
        return range(obs_slices, n_r), n_r - obs_slices
    return range(0, n_r), n_r


def planned_mask_counts(task: MaskTask, n_r: int, n_s: int, obs_slices: int, lam: float,
                        function: str = "exponential", constant_ratio: float = 0.5) -> np.ndarray:
    """Masked-token count per temporal slice, before any sampling.

    Counts depend only on (task, lambda, geometry), never on the density
    table, so degeneracy of a plan can be decided up front.
    """
    counts = np.zeros(n_r, dtype=np.int64)
    fm = frame_mask(task, n_r, n_s, obs_slices)
    counts += fm.sum(axis=1)
    slices, t_max = tdm_slice_indices(task, n_r, obs_slices)
    for offset, r in enumerate(slices):
        gamma = masking_ratio(offset + 1, t_max, lam, task, function, constant_ratio)
        counts[r] += int(math.floor(gamma * n_s))
    return counts


def build_mask_plan(task: MaskTask, table: np.ndarray, cfg: TDMConfig, lam: float,
                    obs_slices: int, rng: np.random.Generator) -> MaskPlan:
    """Compose the frame mask with per-slice TDM masks for one sample.

    `table` is the (n_r, n_s) accumulated-density matrix of the input
    sequence. A plan that would mask every token or no token is retried once
    with a freshly sampled lambda, then rejected.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2:
        raise ParameterError(f"density table must be (n_r, n_s), got shape {table.shape}")
    n_r, n_s = table.shape

    def assemble(lam_val: float) -> np.ndarray:
        mask = frame_mask(task, n_r, n_s, obs_slices)
        slices, t_max = tdm_slice_indices(task, n_r, obs_slices)
        for offset, r in enumerate(slices):
            gamma = masking_ratio(offset + 1, t_max, lam_val, task,
                                  cfg.tm_function, cfg.constant_ratio)
            mask[r] |= sample_tdm_slice(table[r], gamma, cfg.tau, rng, cfg.dm_enabled)
        return mask

    mask = assemble(lam)
    if mask.all() or not mask.any():
        lam = sample_lambda(rng, cfg.lambda_max)
        mask = assemble(lam)
        if mask.all() or not mask.any():
            state = "every token masked" if mask.all() else "no token masked"
            raise DegenerateMaskError(
                f"{task.value} plan degenerate after lambda resample: {state}")
    return MaskPlan(mask=mask, task=task, lambda_used=lam)


def inference_mask(n_r: int, n_s: int, obs_slices: int) -> MaskPlan:
    """Pure forecasting mask: all and only the future slices are masked.

    Equals the future-prediction plan at lambda=0 (gamma identically zero).
    """
    mask = frame_mask(MaskTask.FUTURE_PREDICTION, n_r, n_s, obs_slices)
    if not mask.any() or mask.all():
        raise DegenerateMaskError(
            f"inference mask with obs_slices={obs_slices} of {n_r} slices is degenerate")
    return MaskPlan(mask=mask, task=MaskTask.FUTURE_PREDICTION, lambda_used=0.0)


def sample_task(rng: np.random.Generator, task_weights) -> MaskTask:
    """Categorical draw of one training task, ordered per TASK_ORDER."""
    w = np.asarray(task_weights, dtype=np.float64)
    if w.shape != (3,) or (w < 0).any() or w.sum() <= 0:
        raise ParameterError(f"task_weights must be 3 non-negative values, got {task_weights}")
    idx = int(rng.choice(3, p=w / w.sum()))
    return TASK_ORDER[idx]


def mask_to_sequence(plan: MaskPlan, layout: TokenLayout) -> np.ndarray:
    """Expand a token mask to a (T, H, W) sequence of 0.0/1.0 pixels.

    Used for the CDMP sidecar files written by the mask-viz command.
    """
    if plan.mask.shape != (layout.n_r, layout.n_s):
        raise ParameterError(f"mask shape {plan.mask.shape} does not match layout "
                             f"({layout.n_r}, {layout.n_s})")
    values = np.broadcast_to(plan.mask[:, :, None].astype(np.float64),
                             (layout.n_r, layout.n_s, layout.token_len)).copy()
    return decubify(TokenField(values=values, layout=layout))
