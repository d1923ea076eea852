"""Training loop, learning-rate schedule, augmentation and checkpoint IO.

One training step: sample a task for the batch, augment each sequence, build
its mask plan from the augmented accumulated densities, run the autoencoder
and take an AdamW step on the masked MSE. Lambda is drawn once per epoch
(optionally per batch). Everything is reproducible from the config seed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np
import torch

from .errors import DegenerateMaskError, ParameterError
from .masking import (MaskTask, TDMConfig, build_mask_plan, planned_mask_counts,
                      sample_lambda, sample_task)
from .model import DensityMAE, ModelConfig, ModelState, build_model, masked_mse_loss
from .tokenizer import CubeGrid, accumulated_density, cubify

CHECKPOINT_MAGIC = b"CDCK\x00\x00\x00\x01"


@dataclass
class TrainConfig:
    """Optimizer and schedule settings.

    The peak learning rate is base_lr * batch_size / 256 unless absolute_lr
    overrides it. epochs is the total budget; resuming continues toward the
    same total.
    """

    base_lr: float = 5e-4
    absolute_lr: float | None = None
    weight_decay: float = 1e-5
    epochs: int = 200
    warmup_epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.base_lr <= 0 or (self.absolute_lr is not None and self.absolute_lr <= 0):
            raise ParameterError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be >= 0")
        if self.epochs < 1 or self.warmup_epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs, warmup_epochs and batch_size must be valid counts")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ParameterError("steps_per_epoch must be >= 1")

    def peak_lr(self) -> float:
        if self.absolute_lr is not None:
            return self.absolute_lr
        return self.base_lr * self.batch_size / 256.0


def learning_rate(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warmup to `peak`, then cosine decay reaching exactly 0 at the end."""
    if step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    span = max(1, total_steps - 1 - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_optimizer(module: DensityMAE, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW with decoupled weight decay on matrices only.

    Biases, LayerNorm parameters and the mask token (all 1-D) are excluded
    from decay.
    """
    decay, no_decay = [], []
    for _, p in module.named_parameters():
        (decay if p.ndim >= 2 else no_decay).append(p)
    groups = [{"params": decay, "weight_decay": cfg.weight_decay},
              {"params": no_decay, "weight_decay": 0.0}]
    return torch.optim.AdamW(groups, lr=cfg.peak_lr())


@dataclass
class AugmentPolicy:
    """Spatial augmentations applied identically to all frames of a sample."""

    rotate: bool = True
    flip_h: bool = True
    flip_v: bool = True
    scale: bool = True
    scale_range: tuple[float, float] = (0.8, 1.25)


def apply_transform(seq: np.ndarray, rot_steps: int = 0, flip_h: bool = False,
                    flip_v: bool = False, scale: float = 1.0) -> np.ndarray:
    """Deterministic core of augment: clockwise 90-degree steps, flips, and
    bilinear scaling with center crop/pad back to the original (H, W)."""
    out = np.asarray(seq)
    if rot_steps % 4:
        if out.shape[1] != out.shape[2] and rot_steps % 2:
            raise ParameterError("odd 90-degree rotations need a square scene")
        out = np.rot90(out, k=-(rot_steps % 4), axes=(1, 2))
    if flip_h:
        out = out[:, :, ::-1]
    if flip_v:
        out = out[:, ::-1, :]
    if scale != 1.0:
        t, h, w = out.shape
        nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
        frames = np.empty((t, nh, nw), dtype=np.float32)
        src = np.ascontiguousarray(out, dtype=np.float32)
        for i in range(t):
            frames[i] = cv2.resize(src[i], (nw, nh), interpolation=cv2.INTER_LINEAR)
        canvas = np.zeros((t, h, w), dtype=np.float32)
        if nh >= h:
            top = (nh - h) // 2
            left = (nw - w) // 2
            canvas = frames[:, top:top + h, left:left + w]
        else:
            top = (h - nh) // 2
            left = (w - nw) // 2
            canvas[:, top:top + nh, left:left + nw] = frames
        out = np.clip(canvas, 0.0, 1.0)
    return np.ascontiguousarray(out)


def augment(seq: np.ndarray, rng: np.random.Generator,
            policy: AugmentPolicy | None = None) -> np.ndarray:
    """Sample one transform per call and apply it to all frames."""
    policy = policy or AugmentPolicy()
    rot = int(rng.integers(4)) if policy.rotate else 0
    fh = bool(rng.integers(2)) if policy.flip_h else False
    fv = bool(rng.integers(2)) if policy.flip_v else False
    sc = float(rng.uniform(*policy.scale_range)) if policy.scale else 1.0
    return apply_transform(seq, rot, fh, fv, sc)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    lam: float


def write_loss_csv(path, curve: list[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,mean_loss,lr,lambda\n")
        for s in curve:
            f.write(f"{s.epoch},{s.mean_loss:.10g},{s.lr:.10g},{s.lam:.10g}\n")


def _check_finite_grads(module: DensityMAE) -> None:
    for name, p in module.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise RuntimeError(f"non-finite gradient in parameter {name!r}; aborting step")


def _step_mask_plans(task: MaskTask, tables, tdm_cfg: TDMConfig, lam: float,
                     obs_slices: int, layout, rng: np.random.Generator) -> tuple[list, float]:
    """Mask plans for one batch. Degeneracy depends only on (task, lambda,
    geometry), so it is vetted once for the whole batch, with one lambda
    resample before giving up."""
    for attempt in range(2):
        counts = planned_mask_counts(task, layout.n_r, layout.n_s, obs_slices, lam,
                                     tdm_cfg.tm_function, tdm_cfg.constant_ratio)
        total = int(counts.sum())
        if 0 < total < layout.n_tokens:
            break
        if attempt == 1:
            raise DegenerateMaskError(
                f"{task.value} at lambda={lam:.4g} masks {total} of {layout.n_tokens} tokens")
        lam = sample_lambda(rng, tdm_cfg.lambda_max)
    plans = [build_mask_plan(task, table, tdm_cfg, lam, obs_slices, rng) for table in tables]
    return plans, lam


def train(sequences, model_cfg: ModelConfig, train_cfg: TrainConfig, tdm_cfg: TDMConfig,
          grid: CubeGrid, t_obs: int, t_pred: int,
          policy: AugmentPolicy | None = None,
          initial: ModelState | None = None,
          initial_moments: dict | None = None,
          log_every: int | None = None) -> tuple[ModelState, list[EpochStats]]:
    """Train on a list of (T, H, W) windows; returns the state and loss curve.

    Passing `initial` (plus moments from a checkpoint) resumes: the step
    counter continues and only the remaining epochs of the total budget run.
    """
    seqs = [np.asarray(s, dtype=np.float32) for s in sequences]
    if not seqs:
        raise ParameterError("training needs at least one window")
    shape = seqs[0].shape
    if any(s.shape != shape for s in seqs):
        raise ParameterError("all training windows must share one shape")
    t, h, w = shape
    if t != t_obs + t_pred:
        raise ParameterError(f"windows have {t} frames, expected t_obs+t_pred={t_obs + t_pred}")

    if initial is None:
        state = build_model(model_cfg, grid, t_obs, t_pred, h, w, seed=train_cfg.seed)
    else:
        state = initial
        if (state.layout.t, state.layout.h, state.layout.w) != shape:
            raise ParameterError("resume checkpoint geometry does not match the dataset")
    layout = state.layout
    obs_slices = state.obs_slices
    if not 1 <= obs_slices <= layout.n_r - 1:
        raise ParameterError(f"need 1 <= obs_slices < n_r, got {obs_slices} of {layout.n_r}")

    module = state.module
    module.train()
    optimizer = make_optimizer(module, train_cfg)
    if initial_moments:
        load_optimizer_moments(optimizer, module, initial_moments, state.step)

    ss = np.random.SeedSequence(train_cfg.seed)
    order_rng, lambda_rng, task_rng, mask_rng, aug_rng = \
        [np.random.default_rng(c) for c in ss.spawn(5)]

    steps_per_epoch = train_cfg.steps_per_epoch or math.ceil(len(seqs) / train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch
    warmup_steps = train_cfg.warmup_epochs * steps_per_epoch
    peak = train_cfg.peak_lr()
    start_epoch = state.step // steps_per_epoch

    curve: list[EpochStats] = []
    for epoch in range(train_cfg.epochs):
        lam_epoch = sample_lambda(lambda_rng, tdm_cfg.lambda_max)
        order = order_rng.permutation(len(seqs))
        if epoch < start_epoch:
            continue  # resumed: rng streams above stay aligned with a fresh run
        cursor = 0
        losses = []
        lr = peak
        for _ in range(steps_per_epoch):
            if cursor + train_cfg.batch_size > len(order) and len(seqs) > train_cfg.batch_size:
                order = order_rng.permutation(len(seqs))
                cursor = 0
            idx = [int(order[(cursor + i) % len(order)]) for i in range(min(train_cfg.batch_size, len(seqs)))]
            cursor += len(idx)

            task = sample_task(task_rng, tdm_cfg.task_weights)
            lam = sample_lambda(lambda_rng, tdm_cfg.lambda_max) if tdm_cfg.lambda_per_batch \
                else lam_epoch
            batch = [augment(seqs[i], aug_rng, policy) for i in idx]
            tables = [accumulated_density(s, grid) for s in batch]
            # A step whose (task, lambda) floors every slice count to zero
            # (tiny lambda, few spatial tokens) retries with fresh lambdas so
            # long runs survive; the per-plan contract still resamples once.
            lam_step = lam
            for attempt in range(8):
                try:
                    plans, lam_step = _step_mask_plans(task, tables, tdm_cfg, lam_step,
                                                       obs_slices, layout, mask_rng)
                    break
                except DegenerateMaskError:
                    if attempt == 7:
                        raise
                    lam_step = sample_lambda(mask_rng, tdm_cfg.lambda_max)
            tokens = np.stack([cubify(s, grid).values.reshape(layout.n_tokens, -1)
                               for s in batch])
            masks = np.stack([p.mask.reshape(-1) for p in plans])

            tokens_t = torch.from_numpy(tokens).float()
            masks_t = torch.from_numpy(masks)
            lr = learning_rate(state.step, total_steps, warmup_steps, peak)
            for g in optimizer.param_groups:
                g["lr"] = lr
            recon = module(tokens_t, masks_t)
            loss = masked_mse_loss(recon, tokens_t, masks_t)
            optimizer.zero_grad()
            loss.backward()
            _check_finite_grads(module)
            optimizer.step()
            state.step += 1
            losses.append(float(loss.detach()))
        stats = EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), lr=lr, lam=lam_epoch)
        curve.append(stats)
        if log_every and (epoch % log_every == 0 or epoch == train_cfg.epochs - 1):
            print(f"epoch {epoch:4d}  loss {stats.mean_loss:.6f}  lr {lr:.3e}  "
                  f"lambda {lam_epoch:.3f}")
    module.eval()
    return state, curve


# -- checkpoint container ----------------------------------------------------
#
# Layout: magic, uint32 header length, JSON header, then raw little-endian
# float32 tensor data. The header echoes the geometry/config and carries the
# step counter plus (name, shape, offset) for every tensor. Optimizer first
# and second moments are stored under "adam.m." / "adam.v." prefixes.


def save_checkpoint(path, state: ModelState, optimizer: torch.optim.AdamW | None = None,
                    extra_config: dict | None = None) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in state.module.named_parameters():
        tensors.append((name, p.detach().numpy().astype("<f4")))
    if optimizer is not None:
        param_names = {id(p): name for name, p in state.module.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if not st:
                    continue
                name = param_names[id(p)]
                tensors.append((f"adam.m.{name}", st["exp_avg"].numpy().astype("<f4")))
                tensors.append((f"adam.v.{name}", st["exp_avg_sq"].numpy().astype("<f4")))

    entries = []
    offset = 0
    for name, arr in tensors:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "format": 1,
        "step": state.step,
        "config": {
            "model": asdict(state.cfg),
            "grid": asdict(state.grid),
            "scene": {"t": state.layout.t, "h": state.layout.h, "w": state.layout.w},
            "horizons": {"t_obs": state.t_obs, "t_pred": state.t_pred},
            **(extra_config or {}),
        },
        "tensors": entries,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> tuple[ModelState, dict, dict]:
    """Rebuild a ModelState from a checkpoint.

    Returns (state, adam_moments, header_config); moments map parameter name
    to (exp_avg, exp_avg_sq) arrays and may be empty for inference-only
    checkpoints.
    """
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ParameterError(f"{path}: bad checkpoint magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        data = f.read()

    cfg = ModelConfig(**header["config"]["model"])
    grid = CubeGrid(**header["config"]["grid"])
    scene = header["config"]["scene"]
    horizons = header["config"]["horizons"]
    state = build_model(cfg, grid, horizons["t_obs"], horizons["t_pred"],
                        scene["h"], scene["w"], seed=0)
    state.step = int(header["step"])

    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(
            data, dtype="<f4", count=count, offset=start).reshape(shape).copy()

    with torch.no_grad():
        for name, p in state.module.named_parameters():
            if name not in arrays:
                raise ParameterError(f"{path}: checkpoint missing parameter {name!r}")
            p.copy_(torch.from_numpy(arrays[name]).to(p.dtype))
    moments = {}
    for name in list(arrays):
        if name.startswith("adam.m."):
            base = name[len("adam.m."):]
            v = arrays.get(f"adam.v.{base}")
            if v is not None:
                moments[base] = (arrays[name], v)
    state.module.eval()
    return state, moments, header["config"]


def load_optimizer_moments(optimizer: torch.optim.AdamW, module: DensityMAE,
                           moments: dict, step: int) -> None:
    """Inject saved Adam moments so a resumed run continues seamlessly."""
    by_name = dict(module.named_parameters())
    for name, (m, v) in moments.items():
        p = by_name.get(name)
        if p is None:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(step), dtype=torch.float32),
            "exp_avg": torch.from_numpy(m).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(v).to(p.dtype),
        }
