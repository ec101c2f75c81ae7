"""Attention kernels of the layer-customized module.

Three kernels operate on plain numpy arrays:

* guided spatial cross-attention (pixels attend to prompt tokens), with
  the box/foreground-token restriction and an additive Gaussian boost;
* oriented attention-sharing, a two-token FG/BG attention per frame and
  latent pixel whose map is reweighted inside the box;
* attention-isolation, cross-frame self-attention run on each plane alone.

Everything is float64 and single-head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

# Stands in for -inf: exp(NEG_INF - rowmax) underflows to exactly 0.0.
NEG_INF = -1.0e30

PHI_NEITHER, PHI_ONE, PHI_BOTH = 0, 1, 2


@dataclass(frozen=True)
class GuidanceConfig:
    lam: float = 2.5
    gamma_key: float = 1.2
    mu1: float = 1.5
    mu2: float = 2.0
    t_eps_fraction: float = 0.5
    cross_attn_window: float = 0.10
    oas_window: float = 0.50

    _DOC_KEYS = {
        "lambda": "lam",
        "gamma_key": "gamma_key",
        "mu1": "mu1",
        "mu2": "mu2",
        "t_eps_fraction": "t_eps_fraction",
        "cross_attn_window": "cross_attn_window",
        "oas_window": "oas_window",
    }

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"{f.name} must be a finite number, got {v!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.gamma_key < 1:
            raise ValueError("gamma_key must be >= 1")
        if self.mu1 < 1 or self.mu2 < 1:
            raise ValueError("mu1 and mu2 must be >= 1")
        for name in ("t_eps_fraction", "cross_attn_window", "oas_window"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "GuidanceConfig":
        unknown = sorted(set(doc) - set(cls._DOC_KEYS))
        if unknown:
            raise ValueError(f"unknown guidance field {unknown[0]!r}")
        return cls(**{cls._DOC_KEYS[k]: v for k, v in doc.items()})

    def to_document(self) -> dict:
        return {k: getattr(self, attr) for k, attr in self._DOC_KEYS.items()}

    def replace(self, **changes: float) -> "GuidanceConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return GuidanceConfig(**data)

    @property
    def is_degenerate(self) -> bool:
        """True when every guidance term is an exact identity."""
        return self.lam == 0 and self.gamma_key == 1 and self.mu1 == 1 and self.mu2 == 1


@dataclass(frozen=True)
class PromptEmbedding:
    tokens: np.ndarray  # [n_tokens, d_text]
    fg_token_indices: frozenset[int]

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[1] < 1:
            raise ValueError("tokens must be a [n_tokens, d_text] matrix with d_text >= 1")
        n = self.tokens.shape[0]
        if any(not 0 <= i < n for i in self.fg_token_indices):
            raise ValueError(f"foreground token index outside [0, {n})")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    def fg_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_tokens, dtype=bool)
        mask[list(self.fg_token_indices)] = True
        return mask


@dataclass(frozen=True)
class Projections:
    """Query/key/value/output matrices of one single-head attention block."""

    wq: np.ndarray  # [d_query_in, d]
    wk: np.ndarray  # [d_key_in, d]
    wv: np.ndarray  # [d_key_in, d_v]
    wo: np.ndarray  # [d_v, d_out]

    @property
    def d(self) -> int:
        return self.wq.shape[1]


# ------------------------------------------------------------------ helpers


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def box_pixel_mask(cell_range: tuple[int, int, int, int], grid_shape: tuple[int, int]) -> np.ndarray:
    """Flattened (row-major) boolean mask of the cells inside ``cell_range``."""
    h, w = grid_shape
    r0, c0, r1, c1 = cell_range
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ValueError(f"cell range {cell_range} not within a {h}x{w} grid")
    mask = np.zeros((h, w), dtype=bool)
    mask[r0:r1, c0:c1] = True
    return mask.reshape(-1)


def partition_phi(
    cell_range: tuple[int, int, int, int],
    fg_token_indices: Iterable[int],
    grid_shape: tuple[int, int],
    n_tokens: int,
) -> np.ndarray:
    """Label every (pixel, token) pair with 0, 1 or 2.

    The label counts how many of "pixel in box" and "token is a
    foreground token" hold.
    """
    in_box = box_pixel_mask(cell_range, grid_shape)
    fg = np.zeros(n_tokens, dtype=bool)
    fg[list(fg_token_indices)] = True
    return in_box[:, None].astype(np.int8) + fg[None, :].astype(np.int8)


def gaussian_weight_map(cell_range: tuple[int, int, int, int]) -> np.ndarray:
    """Separable Gaussian over the cells of a box, peak 1 at the box centre.

    Each axis uses sigma = span / 4 where span is the distance between the
    first and last cell centres, so edge cells on the centre line weigh
    exp(-2). A one-cell-wide axis is flat.
    """
    r0, c0, r1, c1 = cell_range
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"empty cell range {cell_range}")
    return np.outer(_gauss_axis(r1 - r0), _gauss_axis(c1 - c0))


def _gauss_axis(n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    span = n - 1
    sigma = span / 4.0
    offsets = np.arange(n) - span / 2.0
    return np.exp(-(offsets**2) / (2.0 * sigma**2))


def gaussian_mask(cell_range: tuple[int, int, int, int], grid_shape: tuple[int, int]) -> np.ndarray:
    """Gaussian box weights on the full flattened grid, zero outside the box."""
    h, w = grid_shape
    r0, c0, r1, c1 = cell_range
    full = np.zeros((h, w))
    full[r0:r1, c0:c1] = gaussian_weight_map(cell_range)
    return full.reshape(-1)


# ------------------------------------------------------- spatial cross-attn


def cross_attention_weights(
    q: np.ndarray,
    k: np.ndarray,
    phi_one: np.ndarray | None = None,
) -> np.ndarray:
    """Softmax of scaled logits with ``phi_one`` cells forced to zero.

    ``q`` is ``[..., n_pixels, d]``, ``k`` is ``[n_tokens, d]`` and
    ``phi_one`` broadcasts against ``[..., n_pixels, n_tokens]``.
    """
    if k.shape[0] == 0:
        raise ValueError("cross-attention needs at least one token")
    logits = q @ k.T / math.sqrt(q.shape[-1])
    if phi_one is not None:
        logits = np.where(phi_one, NEG_INF, logits)
        if np.any(np.all(phi_one, axis=-1)):
            raise ValueError("a pixel row has every token masked")
    return softmax(logits)


def guided_weights(
    q: np.ndarray,
    k: np.ndarray,
    in_box: np.ndarray,
    fg_tokens: np.ndarray,
    gauss: np.ndarray,
    lam: float,
    gamma: np.ndarray | float,
) -> np.ndarray:
    """Guided cross-attention weight matrix ``softmax(A) + lam * M``.

    ``in_box`` and ``gauss`` are ``[..., n_pixels]``; ``gamma`` is a scalar
    or one value per leading batch entry (frame). Rows are not renormalized
    after the boost.
    """
    phi_one = in_box[..., :, None] != fg_tokens[None, :]
    probs = cross_attention_weights(q, k, phi_one)
    gamma = np.asarray(gamma, dtype=float)
    boost = (gauss * gamma[..., None])[..., :, None] * (in_box[..., :, None] & fg_tokens[None, :])
    return probs + lam * boost


def guided_cross_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    cell_range: tuple[int, int, int, int],
    grid_shape: tuple[int, int],
    fg_token_indices: Iterable[int],
    lam: float,
    gamma_frame: float = 1.0,
    return_weights: bool = False,
):
    """Single-frame guided cross-attention over a ``grid_shape`` latent.

    Returns ``weights @ v`` (and the weights when ``return_weights``).
    """
    if k.shape[0] == 0:
        raise ValueError("cross-attention needs at least one token")
    if q.shape[0] != grid_shape[0] * grid_shape[1]:
        raise ValueError("query rows must match the number of latent pixels")
    fg = np.zeros(k.shape[0], dtype=bool)
    fg[list(fg_token_indices)] = True
    in_box = box_pixel_mask(cell_range, grid_shape)
    gauss = gaussian_mask(cell_range, grid_shape)
    weights = guided_weights(q, k, in_box, fg, gauss, lam, gamma_frame)
    out = weights @ v
    return (out, weights) if return_weights else out


# --------------------------------------------------- FG/BG attention sharing


def sharing_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Two-token softmax maps ``[..., 2, 2]`` from ``q, k`` of shape ``[..., 2, d]``."""
    logits = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    return softmax(logits)


def orientation_matrix(in_box: np.ndarray, mu1: float, mu2: float) -> np.ndarray:
    """Per-location 2x2 weights: [[mu1, mu2], [mu2, mu1]] inside the box, ones outside."""
    inside = np.array([[mu1, mu2], [mu2, mu1]], dtype=float)
    return np.where(in_box[..., None, None], inside, 1.0)


def apply_two_token(weights: np.ndarray, v: np.ndarray) -> np.ndarray:
    # explicit two-term sum keeps every output element on the same arithmetic path
    return weights[..., :, 0:1] * v[..., None, 0, :] + weights[..., :, 1:2] * v[..., None, 1, :]


def attention_sharing_kernel(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    in_box: np.ndarray | None = None,
    mu1: float = 1.0,
    mu2: float = 1.0,
) -> np.ndarray:
    """``(softmax(q k^T / sqrt d) * W) v`` over a two-token FG/BG sequence.

    Token 0 is the foreground plane, token 1 the background plane. Without
    ``in_box`` the map is left unweighted.
    """
    weights = sharing_weights(q, k)
    if in_box is not None:
        weights = weights * orientation_matrix(in_box, mu1, mu2)
    return apply_two_token(weights, v)


def oriented_attention_sharing(
    fg: np.ndarray,
    bg: np.ndarray,
    in_box: np.ndarray | None,
    mu1: float,
    mu2: float,
    proj: Projections,
) -> tuple[np.ndarray, np.ndarray]:
    """Frame-pixel-wise FG/BG attention-sharing on ``[f, h, w, ch]`` planes.

    ``in_box`` is a boolean ``[f, h, w]`` mask; ``None`` means no
    orientation (plain sharing). Returns the projected outputs for the FG
    and BG planes.
    """
    if fg.shape != bg.shape:
        raise ValueError(f"plane shapes differ: {fg.shape} vs {bg.shape}")
    x = np.stack([fg, bg], axis=-2)  # [f, h, w, 2, ch]
    out = attention_sharing_kernel(x @ proj.wq, x @ proj.wk, x @ proj.wv, in_box, mu1, mu2) @ proj.wo
    return out[..., 0, :], out[..., 1, :]


# ------------------------------------------------------- temporal isolation


def temporal_attention_kernel(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Self-attention over the frame axis; inputs are ``[..., f, d]``."""
    logits = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    return softmax(logits) @ v


def temporal_self_attention(plane: np.ndarray, proj: Projections) -> np.ndarray:
    """Cross-frame attention at every latent pixel of one ``[f, h, w, ch]`` plane."""
    f, h, w, ch = plane.shape
    seq = plane.reshape(f, h * w, ch).transpose(1, 0, 2)  # [hw, f, ch]
    out = temporal_attention_kernel(seq @ proj.wq, seq @ proj.wk, seq @ proj.wv) @ proj.wo
    return out.transpose(1, 0, 2).reshape(f, h, w, -1)


def isolated_temporal_attention(
    fg: np.ndarray, bg: np.ndarray | None, proj: Projections
) -> tuple[np.ndarray, np.ndarray | None]:
    """Run cross-frame attention on each plane separately.

    The FG output depends on the FG plane only and likewise for BG.
    """
    fg_out = temporal_self_attention(fg, proj)
    bg_out = None if bg is None else temporal_self_attention(bg, proj)
    return fg_out, bg_out


# ------------------------------------------------------------------- debug


class AttentionDump:
    """Collects attention maps by name for offline inspection."""

    def __init__(self):
        self.maps: dict[str, np.ndarray] = {}

    def __call__(self, name: str, weights: np.ndarray) -> None:
        self.maps[name] = np.array(weights, copy=True)

    def save(self, path: str | Path) -> None:
        np.savez_compressed(path, **self.maps)
