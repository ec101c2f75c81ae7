"""Transparent latent offset, RGB/RGBA decoders and alpha cleanup.

The learned pieces (latent offset, base VAE decoder, transparent decoder)
are replaced by seeded per-pixel affine maps with the same factorization:
``x_a = x + offset(x)``, ``rgb = D*(x_a)``, ``(rgb, alpha) = D(rgb, x_a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_LOW_THRESH = 16 / 255
DEFAULT_MASK_THRESH = 0.5


@dataclass(frozen=True)
class TransparencyCodec:
    offset_w: np.ndarray  # [ch, ch]
    offset_b: np.ndarray  # [ch]
    base_w: np.ndarray  # [ch, 3]
    base_b: np.ndarray  # [3]
    rgba_w: np.ndarray  # [3 + ch, 4]
    rgba_b: np.ndarray  # [4]
    scale_factor: int = 8

    @property
    def channels(self) -> int:
        return self.base_w.shape[0]

    def offset(self, x: np.ndarray) -> np.ndarray:
        return x @ self.offset_w + self.offset_b

    def without_offset(self) -> "TransparencyCodec":
        return TransparencyCodec(
            np.zeros_like(self.offset_w), np.zeros_like(self.offset_b),
            self.base_w, self.base_b, self.rgba_w, self.rgba_b, self.scale_factor,
        )


def build_toy_codec(seed: int, channels: int = 4, scale_factor: int = 8) -> TransparencyCodec:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A]))
    return TransparencyCodec(
        offset_w=0.1 * rng.standard_normal((channels, channels)) / math.sqrt(channels),
        offset_b=0.05 * rng.standard_normal(channels),
        base_w=0.25 * rng.standard_normal((channels, 3)) / math.sqrt(channels),
        base_b=np.full(3, 0.5),
        rgba_w=0.5 * rng.standard_normal((3 + channels, 4)) / math.sqrt(3 + channels),
        rgba_b=np.array([0.0, 0.0, 0.0, 0.5]),
        scale_factor=scale_factor,
    )


def adjust_latent(x: np.ndarray, codec: TransparencyCodec) -> np.ndarray:
    """Shift a foreground latent into the transparent-decodable distribution."""
    return x + codec.offset(x)


def upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour upsampling of ``[f, h, w, c]`` by an integer factor."""
    if factor == 1:
        return x
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)


def decode_rgb(x: np.ndarray, codec: TransparencyCodec) -> np.ndarray:
    """Base decoder: ``[f, h, w, ch]`` latent to ``[f, H, W, 3]`` video in [0, 1]."""
    _check_latent(x, codec)
    rgb = np.clip(x @ codec.base_w + codec.base_b, 0.0, 1.0)
    return upsample(rgb, codec.scale_factor)


def decode_rgba(x_a: np.ndarray, codec: TransparencyCodec) -> np.ndarray:
    """Transparent decoder: adjusted latent to ``[f, H, W, 4]`` straight-alpha video."""
    rgb = decode_rgb(x_a, codec)
    joint = np.concatenate([rgb, upsample(x_a, codec.scale_factor)], axis=-1)
    return np.clip(joint @ codec.rgba_w + codec.rgba_b, 0.0, 1.0)


def _check_latent(x: np.ndarray, codec: TransparencyCodec) -> None:
    if x.ndim != 4 or x.shape[-1] != codec.channels:
        raise ValueError(f"latent must be [f, h, w, {codec.channels}], got {x.shape}")


def extract_foreground_mask(
    video: np.ndarray,
    low_thresh: float = DEFAULT_LOW_THRESH,
    mask_thresh: float = DEFAULT_MASK_THRESH,
) -> tuple[np.ndarray, np.ndarray]:
    """Zero residual low alphas and threshold the rest into binary masks.

    Returns ``(masks, cleaned)``: boolean ``[f, H, W]`` masks where alpha is
    at least ``mask_thresh``, and a copy of ``video`` whose alpha below
    ``low_thresh`` is exactly 0.
    """
    if not 0.0 <= low_thresh <= mask_thresh <= 1.0:
        raise ValueError("need 0 <= low_thresh <= mask_thresh <= 1")
    cleaned = np.array(video, dtype=float, copy=True)
    alpha = cleaned[..., 3]
    alpha[alpha < low_thresh] = 0.0
    return alpha >= mask_thresh, cleaned
