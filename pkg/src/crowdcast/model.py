"""Masked-autoencoder transformer over space-time cube tokens.

An asymmetric encoder/decoder: the encoder sees only the visible tokens
(cube projection plus fixed sinusoidal space-time position embeddings); the
decoder sees all positions, with a single shared learned mask token standing
in at masked ones, and predicts the raw token values. The loss is the mean
squared error over masked token values only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import DegenerateMaskError, ParameterError
from .masking import MaskPlan, inference_mask
from .tokenizer import CubeGrid, TokenField, TokenLayout, cubify, decubify


@dataclass
class ModelConfig:
    """Backbone sizes. Defaults are a desk-scale stand-in for a small ViT."""

    embed_dim: int = 64
    encoder_depth: int = 4
    decoder_dim: int = 32
    decoder_depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    token_len: int = 256

    def __post_init__(self):
        if min(self.embed_dim, self.decoder_dim, self.heads, self.token_len) <= 0:
            raise ParameterError("model dimensions and heads must be positive")
        if self.encoder_depth < 0 or self.decoder_depth < 0:
            raise ParameterError("depths must be >= 0")
        if self.embed_dim % self.heads or self.decoder_dim % self.heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} and decoder_dim {self.decoder_dim} "
                f"must be divisible by heads {self.heads}")
        if self.mlp_ratio <= 0:
            raise ParameterError("mlp_ratio must be positive")


def _sinusoid(positions: np.ndarray, dim: int) -> np.ndarray:
    """Standard sin/cos embedding of integer positions into `dim` channels."""
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) / half))
    angles = positions[:, None] * freqs[None, :]
    out = np.empty((positions.size, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def position_embedding(layout: TokenLayout, dim: int) -> np.ndarray:
    """Fixed space-time position embedding, factored over the token axes.

    Channels are split into (near-)thirds for the temporal slice, spatial row
    block and spatial column block; each third is a sinusoidal embedding of
    that axis index. Rows follow the canonical temporal-major flattening, so
    row r*n_s + bh*blocks_w + bw belongs to token (r, bh, bw). Every row has
    squared norm dim/2, since sin^2 + cos^2 = 1 per frequency pair.
    """
    if dim < 6 or dim % 2:
        raise ParameterError(f"position embedding dim must be even and >= 6, got {dim}")
    d_t = (dim // 3) & ~1
    d_r = (dim // 3) & ~1
    d_c = dim - d_t - d_r
    r_idx, bh_idx, bw_idx = np.meshgrid(np.arange(layout.n_r), np.arange(layout.blocks_h),
                                        np.arange(layout.blocks_w), indexing="ij")
    emb_t = _sinusoid(r_idx.reshape(-1).astype(np.float64), d_t)
    emb_r = _sinusoid(bh_idx.reshape(-1).astype(np.float64), d_r)
    emb_c = _sinusoid(bw_idx.reshape(-1).astype(np.float64), d_c)
    return np.concatenate([emb_t, emb_r, emb_c], axis=1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm transformer block with GELU MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class DensityMAE(nn.Module):
    """Encoder over visible tokens, decoder over all positions."""

    def __init__(self, cfg: ModelConfig, layout: TokenLayout):
        super().__init__()
        if cfg.token_len != layout.token_len:
            raise ParameterError(
                f"config token_len {cfg.token_len} does not match layout {layout.token_len}")
        self.cfg = cfg
        self.layout = layout
        self.patch_embed = nn.Linear(cfg.token_len, cfg.embed_dim)
        self.blocks = nn.ModuleList(
            [Block(cfg.embed_dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.encoder_depth)])
        self.norm = nn.LayerNorm(cfg.embed_dim)
        # One shared learned vector stands in for every masked position; it is
        # projected by decoder_embed together with the encoder outputs.
        self.mask_token = nn.Parameter(torch.zeros(cfg.embed_dim))
        self.decoder_embed = nn.Linear(cfg.embed_dim, cfg.decoder_dim)
        self.decoder_blocks = nn.ModuleList(
            [Block(cfg.decoder_dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.decoder_depth)])
        self.decoder_norm = nn.LayerNorm(cfg.decoder_dim)
        self.head = nn.Linear(cfg.decoder_dim, cfg.token_len)

        enc_pos = position_embedding(layout, cfg.embed_dim)
        dec_pos = position_embedding(layout, cfg.decoder_dim)
        self.register_buffer("enc_pos", torch.from_numpy(enc_pos).float()[None])
        self.register_buffer("dec_pos", torch.from_numpy(dec_pos).float()[None])
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.mask_token, std=0.02)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor,
                visible_order: torch.Tensor | None = None) -> torch.Tensor:
        """Reconstruct all token values from the visible subset.

        tokens: (B, N, token_len); mask: (B, N) bool, True = masked. Every
        sample must expose the same visible count so the batch stays
        rectangular. `visible_order` optionally permutes the per-sample
        visible index list fed to the encoder; outputs do not depend on it
        beyond float round-off.
        """
        b, n, _ = tokens.shape
        if mask.shape != (b, n):
            raise ParameterError(f"mask shape {tuple(mask.shape)} does not match tokens {(b, n)}")
        visible = ~mask
        counts = visible.sum(dim=1)
        n_vis = int(counts[0].item())
        if n_vis == 0:
            raise DegenerateMaskError("mask plan leaves no visible token")
        if not bool((counts == n_vis).all()):
            raise ParameterError("all samples in a batch must share one visible-token count")

        x = self.patch_embed(tokens) + self.enc_pos
        vis_idx = visible.nonzero(as_tuple=False)[:, 1].reshape(b, n_vis)
        if visible_order is not None:
            vis_idx = torch.gather(vis_idx, 1, visible_order)
        x_vis = torch.gather(x, 1, vis_idx[:, :, None].expand(-1, -1, x.shape[2]))
        for blk in self.blocks:
            x_vis = blk(x_vis)
        x_vis = self.norm(x_vis)

        full = self.mask_token.expand(b, n, -1).clone()
        full.scatter_(1, vis_idx[:, :, None].expand(-1, -1, x_vis.shape[2]), x_vis)
        y = self.decoder_embed(full) + self.dec_pos
        for blk in self.decoder_blocks:
            y = blk(y)
        y = self.decoder_norm(y)
        return self.head(y)


def masked_mse_loss(recon: torch.Tensor, target: torch.Tensor,
                    mask: torch.Tensor) -> torch.Tensor:
    """MSE over masked token values only, normalized by the masked-value count."""
    if recon.shape != target.shape:
        raise ParameterError(f"shapes differ: {tuple(recon.shape)} vs {tuple(target.shape)}")
    m = mask.to(recon.dtype)
    n_masked = m.sum()
    if float(n_masked) == 0.0:
        raise DegenerateMaskError("loss needs at least one masked token")
    sq = ((recon - target) ** 2 * m[..., None]).sum()
    return sq / (n_masked * recon.shape[-1])


@dataclass
class ModelState:
    """Model plus the geometry it was trained for."""

    module: DensityMAE
    cfg: ModelConfig
    grid: CubeGrid
    layout: TokenLayout
    t_obs: int
    t_pred: int
    step: int = 0

    @property
    def obs_slices(self) -> int:
        return self.t_obs // self.grid.t_c

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())


def build_model(cfg: ModelConfig, grid: CubeGrid, t_obs: int, t_pred: int,
                height: int, width: int, seed: int = 0) -> ModelState:
    """Construct a seeded model for the given scene geometry."""
    total = t_obs + t_pred
    if t_obs % grid.t_c:
        raise ParameterError(f"t_obs {t_obs} must be divisible by cube size t_c={grid.t_c}")
    layout = grid.layout(total, height, width)
    cfg = ModelConfig(**{**cfg.__dict__, "token_len": layout.token_len})
    torch.manual_seed(seed)
    module = DensityMAE(cfg, layout)
    return ModelState(module=module, cfg=cfg, grid=grid, layout=layout,
                      t_obs=t_obs, t_pred=t_pred)


def _to_tokens_tensor(tf: TokenField, module: DensityMAE) -> torch.Tensor:
    dtype = module.patch_embed.weight.dtype
    flat = tf.values.reshape(1, tf.layout.n_tokens, tf.layout.token_len)
    return torch.from_numpy(np.ascontiguousarray(flat)).to(dtype)


def embed_tokens(tf: TokenField, state: ModelState) -> np.ndarray:
    """Affine cube projection of every token; (N, embed_dim), no position term."""
    if tf.layout.token_len != state.cfg.token_len:
        raise ParameterError(
            f"token length {tf.layout.token_len} does not match model {state.cfg.token_len}")
    with torch.no_grad():
        out = state.module.patch_embed(_to_tokens_tensor(tf, state.module))
    return out.squeeze(0).double().numpy()


def forward(seq: np.ndarray, plan: MaskPlan, state: ModelState) -> TokenField:
    """Run the autoencoder on one sequence under one mask plan.

    Returns the reconstructed token field over all positions; visible
    positions carry predictions too (unused by the loss).
    """
    tf = cubify(np.asarray(seq, dtype=np.float64), state.grid)
    if tf.layout != state.layout:
        raise ParameterError(f"sequence layout {tf.layout} does not match model {state.layout}")
    if plan.mask.shape != (tf.layout.n_r, tf.layout.n_s):
        raise ParameterError(f"mask shape {plan.mask.shape} does not match token grid")
    tokens = _to_tokens_tensor(tf, state.module)
    mask = torch.from_numpy(plan.mask.reshape(1, -1).copy())
    with torch.no_grad():
        pred = state.module(tokens, mask)
    values = pred.squeeze(0).double().numpy().reshape(tf.layout.n_r, tf.layout.n_s,
                                                      tf.layout.token_len)
    return TokenField(values=values, layout=tf.layout)


def predict_future(obs: np.ndarray, state: ModelState) -> np.ndarray:
    """Forecast t_pred frames from t_obs observed frames.

    The unknown future frames are zero-filled; the inference mask hides them,
    so their fill value never reaches the encoder or decoder. Output is
    clamped to [0, 1].
    """
    obs = np.asarray(obs, dtype=np.float64)
    expected = (state.t_obs, state.layout.h, state.layout.w)
    if obs.shape != expected:
        raise ParameterError(f"observation shape {obs.shape} does not match model {expected}")
    full = np.zeros((state.layout.t, state.layout.h, state.layout.w))
    full[:state.t_obs] = obs
    plan = inference_mask(state.layout.n_r, state.layout.n_s, state.obs_slices)
    recon = forward(full, plan, state)
    seq = decubify(recon, clamp=True)
    return seq[state.t_obs:]


@dataclass
class GradCheckReport:
    """Worst analytic-vs-finite-difference discrepancies over sampled parameters."""

    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(state: ModelState, seq: np.ndarray, plan: MaskPlan,
               tolerance: float = 1e-4, n_params: int = 200, h: float = 1e-4,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs in float64 on a copy of the model. Samples >= n_params parameter
    scalars uniformly across all tensors; relative error uses
    |a - fd| / max(|a|, |fd|, 1e-6). Raises nothing on failure; the report
    carries the verdict and the worst offenders.
    """
    import copy

    module = copy.deepcopy(state.module).double()
    tf = cubify(np.asarray(seq, dtype=np.float64), state.grid)
    tokens = torch.from_numpy(tf.values.reshape(1, tf.layout.n_tokens, -1).copy())
    mask = torch.from_numpy(plan.mask.reshape(1, -1).copy())
    target = tokens.clone()

    def loss_value() -> float:
        with torch.no_grad():
            return float(masked_mse_loss(module(tokens, mask), target, mask))

    module.zero_grad()
    loss = masked_mse_loss(module(tokens, mask), target, mask)
    loss.backward()

    named = [(name, p) for name, p in module.named_parameters()]
    sizes = np.array([p.numel() for _, p in named])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    n = min(n_params, total)
    picks = rng.choice(total, size=n, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    entries = []
    for flat in sorted(picks.tolist()):
        t_idx = int(np.searchsorted(offsets, flat, side="right")) - 1
        name, p = named[t_idx]
        local = flat - int(offsets[t_idx])
        analytic = float(p.grad.reshape(-1)[local])
        with torch.no_grad():
            flat_p = p.reshape(-1)
            orig = float(flat_p[local])
            flat_p[local] = orig + h
            f_plus = loss_value()
            flat_p[local] = orig - h
            f_minus = loss_value()
            flat_p[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        entries.append((name, local, analytic, numeric, rel))

    entries.sort(key=lambda e: -e[4])
    max_rel = entries[0][4] if entries else 0.0
    report = GradCheckReport(max_rel_error=max_rel, n_checked=len(entries),
                             tolerance=tolerance, worst=entries[:10])
    return report
