"""Deterministic toy denoiser wired as ST -> TT_AS -> TT_AI.

The real backbone is a pretrained video UNet with transparency adapters;
this module keeps its call contract (latents, prompt, condition video,
box track, timestep, guidance) and replaces the learned weights with
seeded random projections, so every guidance path runs on non-trivial
transforms.

Latent volumes are ``[f, planes, h, w, ch]`` float64 arrays. Plane 0 is the
foreground, plane 1 the background; background-only runs use one plane.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from layervid.attention import (
    GuidanceConfig,
    Projections,
    PromptEmbedding,
    cross_attention_weights,
    gaussian_mask,
    guided_weights,
    isolated_temporal_attention,
    oriented_attention_sharing,
    sharing_weights,
)
from layervid.scene import BBoxTrack, scale_to_latent_grid

FG, BG = 0, 1
BLOCK_ORDER = ("condition_bg", "ST", "TT_AS", "TT_AI", "sampler_update")

BOS, EOS = "<bos>", "<eos>"


class StepRangeError(ValueError):
    pass


# ------------------------------------------------------------------ prompts


def _token_vector(token: str, d_text: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(d_text) / math.sqrt(d_text)


def encode_prompt(prompt: str, d_text: int, foreground: bool = True) -> PromptEmbedding:
    """Hash-seeded stand-in for a text encoder.

    The sequence is ``<bos> word ... <eos>``. For a foreground prompt the
    word positions form the foreground token set; the delimiters never do,
    so out-of-box pixels always keep something to attend to.
    """
    words = prompt.lower().split()
    tokens = [BOS, *words, EOS]
    mat = np.stack([_token_vector(tok, d_text) for tok in tokens])
    fg = frozenset(range(1, len(words) + 1)) if foreground else frozenset()
    return PromptEmbedding(tokens=mat, fg_token_indices=fg)


# ----------------------------------------------------------- control convs


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """``[n, H, W, c_in]`` x ``[k, k, c_in, c_out]`` convolution, zero padding."""
    k = kernel.shape[0]
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]  # [n, Ho, Wo, c, k, k]
    return np.einsum("nhwcij,ijco->nhwo", win, kernel, optimize=True) + bias


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class ControlEncoder:
    """Two strided convolutions taking ``[f, H, W, 3]`` video to ``[f, h, w, ch]``."""

    k1: np.ndarray
    b1: np.ndarray
    stride1: int
    k2: np.ndarray
    b2: np.ndarray
    stride2: int

    @property
    def scale_factor(self) -> int:
        return self.stride1 * self.stride2

    def __call__(self, video: np.ndarray) -> np.ndarray:
        video = np.asarray(video, dtype=float)
        if video.ndim != 4 or video.shape[-1] != 3:
            raise ValueError(f"condition video must be [f, H, W, 3], got {video.shape}")
        s = self.scale_factor
        if video.shape[1] % s or video.shape[2] % s:
            raise ValueError(f"video size {video.shape[1:3]} not divisible by {s}")
        hidden = silu(conv2d(video, self.k1, self.b1, self.stride1, pad=1))
        return conv2d(hidden, self.k2, self.b2, self.stride2, pad=0)

    def zeroed(self) -> "ControlEncoder":
        return ControlEncoder(
            np.zeros_like(self.k1), np.zeros_like(self.b1), self.stride1,
            np.zeros_like(self.k2), np.zeros_like(self.b2), self.stride2,
        )


def _split_factor(factor: int) -> tuple[int, int]:
    s1 = 2 if factor % 2 == 0 else 1
    return s1, factor // s1


@dataclass(frozen=True)
class EncodedCondition:
    """A condition video already passed through the control encoder."""

    features: np.ndarray  # [f, h, w, ch]
    source: str  # "background", "blend", ...


def condition_background(x_bg: np.ndarray, condition, encoder: ControlEncoder | None = None) -> np.ndarray:
    """Add the encoded condition video to the background plane.

    ``condition`` is either an RGB video (then ``encoder`` is required) or
    an :class:`EncodedCondition`.
    """
    if isinstance(condition, EncodedCondition):
        feats = condition.features
    else:
        if encoder is None:
            raise ValueError("raw condition video needs an encoder")
        feats = encoder(condition)
    if feats.shape != x_bg.shape:
        raise ValueError(
            f"condition resolution mismatch: encoded {feats.shape} vs background plane {x_bg.shape}"
        )
    return x_bg + feats


# ----------------------------------------------------------------- schedule


@dataclass(frozen=True)
class SamplerSchedule:
    """Step scales for ``t = T .. 1``; scale(t) = 2t / (T (T + 1)), summing to 1."""

    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")

    def scale(self, t: int) -> float:
        return 2.0 * t / (self.T * (self.T + 1))

    def timesteps(self) -> range:
        return range(self.T, 0, -1)

    def scales(self) -> list[float]:
        return [self.scale(t) for t in self.timesteps()]


def window_steps(fraction: float, T: int) -> int:
    """Number of leading inference steps covered by a guidance window."""
    return int(math.floor(fraction * T + 0.5))


def in_window(t: int, T: int, fraction: float) -> bool:
    # steps are counted from the start of sampling, t = T first
    return (T - t) < window_steps(fraction, T)


# ----------------------------------------------------------------- geometry


@dataclass(frozen=True)
class TrackGeometry:
    """Per-frame latent-grid view of a bbox track."""

    cell_ranges: tuple[tuple[int, int, int, int], ...]
    in_box: np.ndarray  # [f, h, w] bool
    gauss: np.ndarray  # [f, h * w]
    key: np.ndarray  # [f] bool

    @classmethod
    def from_track(cls, track: BBoxTrack, h: int, w: int) -> "TrackGeometry":
        ranges = tuple(scale_to_latent_grid(b, h, w) for b in track.boxes)
        in_box = np.zeros((len(ranges), h, w), dtype=bool)
        for i, (r0, c0, r1, c1) in enumerate(ranges):
            in_box[i, r0:r1, c0:c1] = True
        gauss = np.stack([gaussian_mask(r, (h, w)) for r in ranges])
        key = np.array([track.is_key(i + 1) for i in range(len(ranges))])
        return cls(ranges, in_box, gauss, key)

    def gamma(self, gamma_key: float) -> np.ndarray:
        return np.where(self.key, gamma_key, 1.0)


# ------------------------------------------------------------------- trace


@dataclass(frozen=True)
class StepTrace:
    step: int
    blocks: tuple[tuple[str, bool], ...]
    condition: str

    def records(self, **extra) -> list[dict]:
        return [
            {**extra, "step": self.step, "sub_block": name, "guidance_active": active, "condition": self.condition}
            for name, active in self.blocks
        ]

    def active(self, block: str) -> bool:
        return dict(self.blocks)[block]


# ----------------------------------------------------------------- denoiser


@dataclass(frozen=True)
class DenoiserDims:
    channels: int = 4
    d_attn: int = 16
    d_text: int = 16
    control_channels: int = 8
    scale_factor: int = 8


@dataclass(frozen=True)
class ToyDenoiser:
    dims: DenoiserDims
    spatial: Projections
    sharing: Projections
    temporal: Projections
    time_proj: np.ndarray  # [8, ch]
    out_proj: np.ndarray  # [ch, ch]
    encoder: ControlEncoder
    residual_gain: float = 0.5
    seed: int = 0
    dump: Optional[Callable[[str, np.ndarray], None]] = field(default=None, compare=False)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for name in ("spatial", "sharing", "temporal"):
            p = getattr(self, name)
            for part in ("wq", "wk", "wv", "wo"):
                params[f"{name}.{part}"] = getattr(p, part)
        params["time_proj"] = self.time_proj
        params["out_proj"] = self.out_proj
        for part in ("k1", "b1", "k2", "b2"):
            params[f"encoder.{part}"] = getattr(self.encoder, part)
        return params

    def encode_condition(self, video: np.ndarray, source: str) -> EncodedCondition:
        return EncodedCondition(self.encoder(video), source)

    def time_embedding(self, t: int) -> np.ndarray:
        freqs = np.exp(-np.arange(4) * math.log(100.0) / 4)
        phase = t * freqs
        return np.concatenate([np.sin(phase), np.cos(phase)]) @ self.time_proj

    def step(
        self,
        x: np.ndarray,
        prompt: PromptEmbedding,
        condition,
        geometry: TrackGeometry | None,
        t: int,
        schedule: SamplerSchedule,
        cfg: GuidanceConfig,
        unguided: bool = False,
    ) -> tuple[np.ndarray, StepTrace]:
        """One denoising step ``x(t) -> x(t-1)``.

        ``condition`` may be ``None`` (no background conditioning), an RGB
        video or an :class:`EncodedCondition`. ``geometry`` enables the box
        guidance on the FG plane. With ``unguided`` the additive boost and
        the orientation weights are skipped entirely, while the box/token
        restriction still follows the cross-attention window.
        """
        T = schedule.T
        if not 1 <= t <= T:
            raise StepRangeError(f"timestep {t} outside [1, {T}]")
        if x.ndim != 5:
            raise ValueError(f"latent must be [f, planes, h, w, ch], got {x.shape}")
        f, planes, h, w, ch = x.shape
        gain = self.residual_gain

        hid = x + self.time_embedding(t)

        # background conditioning, every step, on the network input only
        if condition is not None and planes == 2:
            hid[:, BG] = condition_background(hid[:, BG], condition, self.encoder)
            cond_label = condition.source if isinstance(condition, EncodedCondition) else "video"
        else:
            cond_label = "none"

        # spatial transformer: cross-attention to the prompt
        ca_active = geometry is not None and in_window(t, T, cfg.cross_attn_window)
        sp = self.spatial
        k = prompt.tokens @ sp.wk
        v = prompt.tokens @ sp.wv
        fg_tokens = prompt.fg_mask()
        for p in range(planes):
            q = hid[:, p].reshape(f, h * w, ch) @ sp.wq
            if p == FG and ca_active and planes == 2:
                in_box = geometry.in_box.reshape(f, h * w)
                if unguided:
                    weights = cross_attention_weights(q, k, in_box[..., :, None] != fg_tokens[None, :])
                else:
                    weights = guided_weights(q, k, in_box, fg_tokens, geometry.gauss, cfg.lam, geometry.gamma(cfg.gamma_key))
                if self.dump is not None:
                    self.dump(f"t{t:03d}.ST.fg", weights)
            else:
                weights = cross_attention_weights(q, k)
            hid[:, p] = hid[:, p] + gain * ((weights @ v) @ sp.wo).reshape(f, h, w, ch)

        # temporal transformer, attention-sharing between planes
        oas_active = geometry is not None and in_window(t, T, cfg.oas_window)
        sh = self.sharing
        if planes == 2:
            in_box = geometry.in_box if (oas_active and not unguided) else None
            fo, bo = oriented_attention_sharing(hid[:, FG], hid[:, BG], in_box, cfg.mu1, cfg.mu2, sh)
            if self.dump is not None:
                pair = np.stack([hid[:, FG], hid[:, BG]], axis=-2)
                self.dump(f"t{t:03d}.TT_AS", sharing_weights(pair @ sh.wq, pair @ sh.wk))
            hid[:, FG] = hid[:, FG] + gain * fo
            hid[:, BG] = hid[:, BG] + gain * bo
        else:
            # a one-token softmax is exactly 1, so sharing reduces to the value path
            hid[:, 0] = hid[:, 0] + gain * ((hid[:, 0] @ sh.wv) @ sh.wo)

        # temporal transformer, isolated cross-frame attention
        fg_out, bg_out = isolated_temporal_attention(hid[:, 0], hid[:, 1] if planes == 2 else None, self.temporal)
        hid[:, 0] = hid[:, 0] + gain * fg_out
        if bg_out is not None:
            hid[:, 1] = hid[:, 1] + gain * bg_out

        eps = np.tanh(hid @ self.out_proj)
        x_next = x - schedule.scale(t) * eps

        trace = StepTrace(
            step=t,
            blocks=(
                ("condition_bg", cond_label != "none"),
                ("ST", ca_active),
                ("TT_AS", oas_active),
                ("TT_AI", False),
                ("sampler_update", False),
            ),
            condition=cond_label,
        )
        return x_next, trace


def build_toy_denoiser(seed: int, dims: DenoiserDims = DenoiserDims()) -> ToyDenoiser:
    """Seeded stand-in for the pretrained backbone."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ch, d, dt, cm = dims.channels, dims.d_attn, dims.d_text, dims.control_channels

    def mat(rows: int, cols: int) -> np.ndarray:
        return rng.standard_normal((rows, cols)) / math.sqrt(rows)

    def proj(d_in_q: int, d_in_kv: int, d_v: int) -> Projections:
        return Projections(wq=mat(d_in_q, d), wk=mat(d_in_kv, d), wv=mat(d_in_kv, d_v), wo=mat(d_v, ch))

    spatial = proj(ch, dt, d)
    sharing = proj(ch, ch, ch)
    temporal = proj(ch, ch, ch)
    time_proj = 0.1 * mat(8, ch)
    out_proj = mat(ch, ch)
    s1, s2 = _split_factor(dims.scale_factor)
    encoder = ControlEncoder(
        k1=rng.standard_normal((3, 3, 3, cm)) / math.sqrt(27),
        b1=0.1 * rng.standard_normal(cm),
        stride1=s1,
        k2=rng.standard_normal((s2, s2, cm, ch)) / math.sqrt(s2 * s2 * cm),
        b2=0.1 * rng.standard_normal(ch),
        stride2=s2,
    )
    return ToyDenoiser(dims, spatial, sharing, temporal, time_proj, out_proj, encoder, seed=seed)


def initial_noise(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.standard_normal(shape)
