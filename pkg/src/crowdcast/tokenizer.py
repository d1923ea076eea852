"""Space-time cube tokenization of density sequences.

A (T, H, W) sequence is split into non-overlapping cubes of T_c frames by
H_c x W_c pixels. Token (r, s) covers frames [r*T_c, (r+1)*T_c) and one
contiguous spatial block; the flattened token index is temporal-major, then
row-major over spatial blocks. Values within a token are ordered
(dt, dy, dx) row-major. These orderings are the single canonical index map
every mask and position embedding relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class CubeGrid:
    """Cube sizes along time, height and width."""

    t_c: int = 4
    h_c: int = 8
    w_c: int = 8

    def __post_init__(self):
        for name, v in (("t_c", self.t_c), ("h_c", self.h_c), ("w_c", self.w_c)):
            if int(v) != v or v <= 0:
                raise ParameterError(f"cube size {name} must be a positive integer, got {v}")

    @property
    def token_len(self) -> int:
        return self.t_c * self.h_c * self.w_c

    def layout(self, t: int, h: int, w: int) -> "TokenLayout":
        """Token layout for a (t, h, w) sequence; rejects non-divisible axes."""
        if t % self.t_c != 0:
            raise ParameterError(f"time axis {t} not divisible by cube size t_c={self.t_c}")
        if h % self.h_c != 0:
            raise ParameterError(f"height axis {h} not divisible by cube size h_c={self.h_c}")
        if w % self.w_c != 0:
            raise ParameterError(f"width axis {w} not divisible by cube size w_c={self.w_c}")
        return TokenLayout(t=t, h=h, w=w, t_c=self.t_c, h_c=self.h_c, w_c=self.w_c)


@dataclass(frozen=True)
class TokenLayout:
    """Concrete token geometry for one sequence shape."""

    t: int
    h: int
    w: int
    t_c: int
    h_c: int
    w_c: int

    @property
    def n_r(self) -> int:
        return self.t // self.t_c

    @property
    def blocks_h(self) -> int:
        return self.h // self.h_c

    @property
    def blocks_w(self) -> int:
        return self.w // self.w_c

    @property
    def n_s(self) -> int:
        return self.blocks_h * self.blocks_w

    @property
    def n_tokens(self) -> int:
        return self.n_r * self.n_s

    @property
    def token_len(self) -> int:
        return self.t_c * self.h_c * self.w_c

    @property
    def grid(self) -> CubeGrid:
        return CubeGrid(self.t_c, self.h_c, self.w_c)


@dataclass
class TokenField:
    """An (n_r, n_s, token_len) value array plus its layout."""

    values: np.ndarray
    layout: TokenLayout

    def __post_init__(self):
        expected = (self.layout.n_r, self.layout.n_s, self.layout.token_len)
        if self.values.shape != expected:
            raise ParameterError(
                f"token values shape {self.values.shape} inconsistent with layout {expected}")


def cubify(seq: np.ndarray, grid: CubeGrid) -> TokenField:
    """Rearrange a (T, H, W) sequence into space-time cube tokens, losslessly."""
    seq = np.asarray(seq)
    if seq.ndim != 3:
        raise ParameterError(f"expected a (T, H, W) sequence, got shape {seq.shape}")
    layout = grid.layout(*seq.shape)
    x = seq.reshape(layout.n_r, layout.t_c, layout.blocks_h, layout.h_c,
                    layout.blocks_w, layout.w_c)
    x = x.transpose(0, 2, 4, 1, 3, 5)  # (n_r, bh, bw, t_c, h_c, w_c)
    values = np.ascontiguousarray(x).reshape(layout.n_r, layout.n_s, layout.token_len)
    return TokenField(values=values, layout=layout)


def decubify(tokens: TokenField, clamp: bool = False) -> np.ndarray:
    """Exact inverse of cubify. Set clamp=True for model output to clip to [0, 1]."""
    layout = tokens.layout
    x = tokens.values.reshape(layout.n_r, layout.blocks_h, layout.blocks_w,
                              layout.t_c, layout.h_c, layout.w_c)
    x = x.transpose(0, 3, 1, 4, 2, 5)  # (n_r, t_c, bh, h_c, bw, w_c)
    seq = np.ascontiguousarray(x).reshape(layout.t, layout.h, layout.w)
    if clamp:
        seq = np.clip(seq, 0.0, 1.0)
    return seq


def accumulated_density(seq: np.ndarray, grid: CubeGrid) -> np.ndarray:
    """Per-token accumulated density: the sum of all pixel values in each cube.

    Returns an (n_r, n_s) matrix whose total equals the pixel sum of the
    whole sequence.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 3:
        raise ParameterError(f"expected a (T, H, W) sequence, got shape {seq.shape}")
    layout = grid.layout(*seq.shape)
    x = seq.reshape(layout.n_r, layout.t_c, layout.blocks_h, layout.h_c,
                    layout.blocks_w, layout.w_c)
    return x.sum(axis=(1, 3, 5)).reshape(layout.n_r, layout.n_s)
