"""End-to-end evaluation: forecasting metrics over datasets, the persistence
baseline, miss-detection robustness sweeps and the ablation grids.

Every protocol scores predict_future output against ground-truth rasterized
future frames with the JS-divergence metrics; aggregates are means over
windows. Reference numbers from full-scale runs on public data are carried as
printed annotations only, never as assertions at this scale.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .density import MetricReport, score_forecast
from .errors import ParameterError, ProtocolError
from .masking import MaskTask, TDMConfig
from .model import ModelConfig, ModelState, predict_future
from .simdata import CorruptionSpec, TrajectoryDataset, corrupt_missdetect, window_split
from .tokenizer import CubeGrid
from .training import AugmentPolicy, TrainConfig, train


@dataclass
class EvalProtocol:
    """Forecasting evaluation settings; geometry must match the trained model."""

    t_obs: int = 8
    t_pred: int = 12
    sigma: float = 3.0
    epsilon: float = 1e-12
    stride: int | None = None  # None: non-overlapping windows (t_obs + t_pred)
    miss_ratio: float | None = None
    seed: int = 0

    def effective_stride(self) -> int:
        return self.stride if self.stride is not None else self.t_obs + self.t_pred


@dataclass
class EvalResult:
    aggregate: MetricReport
    per_window: list[MetricReport]

    @property
    def n_windows(self) -> int:
        return len(self.per_window)


def _window_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def evaluate_predictor(predict_fn, dataset: TrajectoryDataset, protocol: EvalProtocol,
                       width: int, height: int) -> EvalResult:
    """Score any predictor over the dataset's windows.

    predict_fn(obs_seq, window) must return a (t_pred, H, W) sequence. With
    protocol.miss_ratio set, each window's observation records are corrupted
    (seeded per window) before rasterization; ground-truth futures stay clean.
    """
    windows = window_split(dataset, protocol.t_obs, protocol.t_pred,
                           protocol.effective_stride())
    if not windows:
        raise ProtocolError("dataset yields zero evaluation windows")
    reports = []
    for i, win in enumerate(windows):
        traj = win.traj
        if protocol.miss_ratio is not None:
            spec = CorruptionSpec(miss_ratio=protocol.miss_ratio,
                                  seed=_window_seed(protocol.seed, i))
            traj = corrupt_missdetect(win.traj, spec, win.obs_frame_ids())
        obs = win.rasterize_obs(width, height, protocol.sigma, traj=traj)
        gt_future = win.rasterize_future(width, height, protocol.sigma)
        pred = predict_fn(obs, win)
        reports.append(score_forecast(pred, gt_future, protocol.epsilon))
    per_step = np.mean([r.per_step_js for r in reports], axis=0)
    return EvalResult(aggregate=MetricReport.from_steps(per_step.tolist()),
                      per_window=reports)


def evaluate(state: ModelState, dataset: TrajectoryDataset,
             protocol: EvalProtocol) -> EvalResult:
    """Evaluate a trained model under the protocol."""
    if (protocol.t_obs, protocol.t_pred) != (state.t_obs, state.t_pred):
        raise ProtocolError(
            f"protocol horizons ({protocol.t_obs}, {protocol.t_pred}) do not match "
            f"the model ({state.t_obs}, {state.t_pred})")
    return evaluate_predictor(lambda obs, _win: predict_future(obs, state),
                              dataset, protocol, state.layout.w, state.layout.h)


def persistence_baseline(obs: np.ndarray, t_pred: int = 12) -> np.ndarray:
    """Repeat the last observed frame t_pred times."""
    obs = np.asarray(obs)
    if obs.ndim != 3 or obs.shape[0] < 1:
        raise ParameterError("persistence baseline needs at least one observed frame")
    if t_pred < 1:
        raise ParameterError(f"t_pred must be >= 1, got {t_pred}")
    return np.repeat(obs[-1:], t_pred, axis=0)


def evaluate_persistence(dataset: TrajectoryDataset, protocol: EvalProtocol,
                         width: int, height: int) -> EvalResult:
    return evaluate_predictor(
        lambda obs, _win: persistence_baseline(obs, protocol.t_pred),
        dataset, protocol, width, height)


def robustness_sweep(state: ModelState, dataset: TrajectoryDataset, ratios,
                     protocol: EvalProtocol, out_dir=None) -> list[dict]:
    """Evaluate under increasing miss-detection ratios.

    Each ratio gets a fixed derived seed, so the curve is reproducible; p=0
    reproduces the clean evaluation exactly. Writes robustness.csv and
    robustness.png when out_dir is given.
    """
    rows = []
    for k, p in enumerate(ratios):
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"miss ratio {p} outside [0, 1]")
        proto_p = replace(protocol, miss_ratio=float(p),
                          seed=_window_seed(protocol.seed, 7919 + k))
        result = evaluate(state, dataset, proto_p)
        rows.append({"miss_ratio": float(p),
                     "ad_js": result.aggregate.ad_js,
                     "fd_js": result.aggregate.fd_js})
    if out_dir is not None:
        write_robustness_csv(f"{out_dir}/robustness.csv", rows)
        plot_robustness(f"{out_dir}/robustness.png", rows)
    return rows


def write_robustness_csv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["miss_ratio", "ad_js", "fd_js"])
        for r in rows:
            writer.writerow([f"{r['miss_ratio']:.6f}", f"{r['ad_js']:.6f}", f"{r['fd_js']:.6f}"])


def plot_robustness(path, rows: list[dict]) -> None:
    from matplotlib.figure import Figure

    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    ps = [r["miss_ratio"] for r in rows]
    ax.plot(ps, [r["ad_js"] for r in rows], marker="o", label="AD_JS")
    ax.plot(ps, [r["fd_js"] for r in rows], marker="s", label="FD_JS")
    ax.set_xlabel("miss-detection ratio")
    ax.set_ylabel("JS divergence")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


# -- ablation grids -----------------------------------------------------------

TM_FUNCTION_ORDER = ("constant", "square_root", "linear", "square", "cubic", "exponential")

# Full-scale SDD reference results for context when reading desk-scale tables.
TM_REFERENCE_SDD = {
    "constant": (0.077, 0.136),
    "square_root": (0.076, 0.138),
    "linear": (0.074, 0.137),
    "square": (0.071, 0.129),
    "cubic": (0.075, 0.134),
    "exponential": (0.068, 0.129),
}

TASK_COMBO_ORDER = (
    (MaskTask.FUTURE_PREDICTION,),
    (MaskTask.FUTURE_PREDICTION, MaskTask.INTERPOLATION),
    (MaskTask.FUTURE_PREDICTION, MaskTask.PAST_PREDICTION),
    (MaskTask.FUTURE_PREDICTION, MaskTask.INTERPOLATION, MaskTask.PAST_PREDICTION),
)

TASKS_REFERENCE_SDD = {
    "future": (0.080, 0.146),
    "future+interpolation": (0.070, 0.129),
    "future+past": (0.075, 0.143),
    "future+interpolation+past": (0.068, 0.129),
}


@dataclass
class AblationGrid:
    """Cells for the TM-function and multi-task ablation harnesses."""

    tm_cells: list[tuple[str, bool]] = field(
        default_factory=lambda: [(fn, True) for fn in TM_FUNCTION_ORDER])
    task_combos: list[tuple[MaskTask, ...]] = field(
        default_factory=lambda: list(TASK_COMBO_ORDER))

    def __post_init__(self):
        if not self.tm_cells and not self.task_combos:
            raise ParameterError("ablation grid must contain at least one cell")


@dataclass
class CellResult:
    cell_id: str
    config: dict
    ad_js: float
    fd_js: float
    train_seconds: float


def _task_combo_id(combo) -> str:
    short = {MaskTask.FUTURE_PREDICTION: "future",
             MaskTask.INTERPOLATION: "interpolation",
             MaskTask.PAST_PREDICTION: "past"}
    return "+".join(short[t] for t in combo)


def _combo_weights(combo) -> tuple[float, float, float]:
    from .masking import TASK_ORDER

    w = [1.0 if task in combo else 0.0 for task in TASK_ORDER]
    return tuple(v / sum(w) for v in w)


def _run_cell(cell_id: str, cell_cfg: dict, train_seqs, dataset, protocol,
              model_cfg: ModelConfig, train_cfg: TrainConfig, tdm_cfg: TDMConfig,
              grid: CubeGrid, policy: AugmentPolicy | None) -> CellResult:
    started = time.perf_counter()
    state, _curve = train(train_seqs, model_cfg, train_cfg, tdm_cfg, grid,
                          protocol.t_obs, protocol.t_pred, policy=policy)
    result = evaluate(state, dataset, protocol)
    return CellResult(cell_id=cell_id, config=cell_cfg,
                      ad_js=result.aggregate.ad_js, fd_js=result.aggregate.fd_js,
                      train_seconds=time.perf_counter() - started)


def ablate_tm_functions(train_seqs, dataset: TrajectoryDataset, protocol: EvalProtocol,
                        model_cfg: ModelConfig, train_cfg: TrainConfig, tdm_cfg: TDMConfig,
                        grid: CubeGrid, cells=None,
                        policy: AugmentPolicy | None = None) -> list[CellResult]:
    """Train one model per TM ratio function with identical seeds and budgets."""
    cells = list(cells) if cells is not None else [(fn, tdm_cfg.dm_enabled)
                                                   for fn in TM_FUNCTION_ORDER]
    results = []
    for fn, dm_enabled in cells:
        cell_tdm = replace(tdm_cfg, tm_function=fn, dm_enabled=dm_enabled)
        cfg = {"tm_function": fn, "dm_enabled": dm_enabled,
               "constant_ratio": tdm_cfg.constant_ratio,
               "lambda_max": tdm_cfg.lambda_max, "tau": tdm_cfg.tau,
               "epochs": train_cfg.epochs, "seed": train_cfg.seed}
        results.append(_run_cell(f"tm-{fn}", cfg, train_seqs, dataset, protocol,
                                 model_cfg, train_cfg, cell_tdm, grid, policy))
    return results


def ablate_multitask(train_seqs, dataset: TrajectoryDataset, protocol: EvalProtocol,
                     model_cfg: ModelConfig, train_cfg: TrainConfig, tdm_cfg: TDMConfig,
                     grid: CubeGrid, combos=None,
                     policy: AugmentPolicy | None = None) -> list[CellResult]:
    """Train one model per task combination; each combo must include future
    prediction, the task evaluation exercises."""
    combos = list(combos) if combos is not None else list(TASK_COMBO_ORDER)
    results = []
    for combo in combos:
        if MaskTask.FUTURE_PREDICTION not in combo:
            raise ProtocolError(f"combo {_task_combo_id(combo)} lacks the future prediction task")
        cell_tdm = replace(tdm_cfg, task_weights=_combo_weights(combo))
        cfg = {"tasks": _task_combo_id(combo), "lambda_max": tdm_cfg.lambda_max,
               "tau": tdm_cfg.tau, "epochs": train_cfg.epochs, "seed": train_cfg.seed}
        results.append(_run_cell(f"tasks-{_task_combo_id(combo)}", cfg, train_seqs,
                                 dataset, protocol, model_cfg, train_cfg, cell_tdm,
                                 grid, policy))
    return results


def write_results_csv(path, results: list[CellResult]) -> None:
    """Schema-stable table: cell_id, config_json, ad_js, fd_js, train_seconds."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["cell_id", "config_json", "ad_js", "fd_js", "train_seconds"])
        for r in results:
            writer.writerow([r.cell_id, json.dumps(r.config, sort_keys=True),
                             f"{r.ad_js:.6f}", f"{r.fd_js:.6f}", f"{r.train_seconds:.3f}"])


def format_results_table(results: list[CellResult], reference: dict | None = None) -> str:
    """Human-readable table with optional full-scale reference annotations."""
    lines = [f"{'cell':<36} {'AD_JS':>10} {'FD_JS':>10} {'train_s':>9}"]
    for r in results:
        lines.append(f"{r.cell_id:<36} {r.ad_js:>10.6f} {r.fd_js:>10.6f} "
                     f"{r.train_seconds:>9.1f}")
    if reference:
        lines.append("")
        lines.append("full-scale SDD reference (context only, not asserted at this scale):")
        for key, (ad, fd) in reference.items():
            lines.append(f"  {key:<34} AD_JS {ad:.3f}  FD_JS {fd:.3f}")
    return "\n".join(lines)
