"""Scene documents, bbox key-frame tracks and latent-grid mapping.

Boxes are ``[x0, y0, x1, y1]`` in normalized image coordinates with the
origin at the top-left corner. Frame indices are 1-based throughout, the
way a user writes them in a scene file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from layervid.attention import GuidanceConfig

DEFAULT_FRAMES = 16
DEFAULT_STEPS = 50
DEFAULT_RESOLUTION = (256, 256)
DEFAULT_LATENT_CHANNELS = 4
VAE_FACTOR = 8


class SceneError(ValueError):
    """Base class for invalid scene documents."""


class SceneParseError(SceneError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class KeyframeRangeError(SceneError):
    pass


class KeyframeOrderError(SceneError):
    pass


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise SceneError(f"box has non-finite coordinates: {coords}")
        if not (0.0 <= self.x0 <= self.x1 <= 1.0 and 0.0 <= self.y0 <= self.y1 <= 1.0):
            raise SceneError(f"box {list(coords)} violates 0 <= x0 <= x1 <= 1, 0 <= y0 <= y1 <= 1")

    @classmethod
    def from_seq(cls, values: Sequence[float]) -> "Box":
        if len(values) != 4:
            raise SceneError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class KeyframeBox:
    frame_index: int
    box: Box
    is_key: bool = True


@dataclass(frozen=True)
class BBoxTrack:
    """Per-frame boxes ``boxes[0] .. boxes[f-1]`` for frames ``1 .. f``."""

    boxes: tuple[Box, ...]
    key_frames: frozenset[int]

    def __post_init__(self):
        f = len(self.boxes)
        if f < 1:
            raise SceneError("track must contain at least one frame")
        if any(not 1 <= k <= f for k in self.key_frames):
            raise KeyframeRangeError(f"key frames {sorted(self.key_frames)} outside [1, {f}]")
        if 1 not in self.key_frames or f not in self.key_frames:
            raise KeyframeRangeError(f"key frames must include 1 and {f}")

    def __len__(self) -> int:
        return len(self.boxes)

    def box_at(self, frame: int) -> Box:
        """Box at 1-based ``frame``."""
        return self.boxes[frame - 1]

    def is_key(self, frame: int) -> bool:
        return frame in self.key_frames


@dataclass(frozen=True)
class LayerSpec:
    prompt: str
    track: tuple[KeyframeBox, ...]


@dataclass(frozen=True)
class SceneSpec:
    background_prompt: str
    layers: tuple[LayerSpec, ...] = ()
    frames: int = DEFAULT_FRAMES
    latent_h: int = DEFAULT_RESOLUTION[1] // VAE_FACTOR
    latent_w: int = DEFAULT_RESOLUTION[0] // VAE_FACTOR
    channels: int = DEFAULT_LATENT_CHANNELS
    resolution: tuple[int, int] = DEFAULT_RESOLUTION  # (width, height)
    steps: int = DEFAULT_STEPS
    seed: int = 0
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)

    def __post_init__(self):
        if self.frames < 1:
            raise SceneParseError("frames", "must be >= 1")
        if self.steps < 1:
            raise SceneParseError("steps", "must be >= 1")
        if self.seed < 0:
            raise SceneParseError("seed", "must be an unsigned integer")
        for name in ("latent_h", "latent_w", "channels"):
            if getattr(self, name) < 1:
                raise SceneParseError(name, "must be >= 1")
        width, height = self.resolution
        if width % self.latent_w or height % self.latent_h:
            raise SceneParseError(
                "resolution",
                f"{width}x{height} is not an integer multiple of the {self.latent_w}x{self.latent_h} latent",
            )
        if width // self.latent_w != height // self.latent_h:
            raise SceneParseError("resolution", "latent downsampling factor must match on both axes")

    @property
    def image_size(self) -> tuple[int, int]:
        """``(height, width)`` of decoded frames."""
        return (self.resolution[1], self.resolution[0])

    @property
    def scale_factor(self) -> int:
        return self.resolution[0] // self.latent_w

    def tracks(self) -> list[BBoxTrack]:
        return [interpolate_track(layer.track, self.frames) for layer in self.layers]

    def replace(self, **changes: Any) -> "SceneSpec":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return SceneSpec(**data)

    def to_document(self) -> dict:
        """Inverse of :func:`parse_scene`."""
        return {
            "background_prompt": self.background_prompt,
            "frames": self.frames,
            "steps": self.steps,
            "seed": self.seed,
            "resolution": {"width": self.resolution[0], "height": self.resolution[1]},
            "latent": {"h": self.latent_h, "w": self.latent_w, "ch": self.channels},
            "guidance": self.guidance.to_document(),
            "layers": [
                {
                    "prompt": layer.prompt,
                    "keyframes": [{"frame": k.frame_index, "box": k.box.as_list()} for k in layer.track],
                }
                for layer in self.layers
            ],
        }


def interpolate_track(keyframes: Sequence[KeyframeBox], f: int) -> BBoxTrack:
    """Expand key-frames into one box per frame by piecewise-linear interpolation.

    A single key-frame is treated as a static box held for all ``f`` frames.
    Key-frame boxes are copied verbatim so the track is exact there.
    """
    if not keyframes:
        raise SceneError("empty key-frame list")
    if f < 1:
        raise SceneError("frame count must be >= 1")
    _check_keyframes(keyframes, f)

    if len(keyframes) == 1:
        only = keyframes[0]
        return BBoxTrack(boxes=(only.box,) * f, key_frames=frozenset({1, f}))

    if keyframes[0].frame_index != 1 or keyframes[-1].frame_index != f:
        raise KeyframeRangeError(
            f"key frames must start at frame 1 and end at frame {f}, "
            f"got {keyframes[0].frame_index}..{keyframes[-1].frame_index}"
        )

    boxes: list[Box] = []
    for left, right in zip(keyframes[:-1], keyframes[1:]):
        n1, n2 = left.frame_index, right.frame_index
        a, b = left.box.as_list(), right.box.as_list()
        for n in range(n1, n2):
            if n == n1:
                boxes.append(left.box)
                continue
            s = (n - n1) / (n2 - n1)
            boxes.append(Box(*(_lerp(p, q, s) for p, q in zip(a, b))))
    boxes.append(keyframes[-1].box)
    return BBoxTrack(boxes=tuple(boxes), key_frames=frozenset(k.frame_index for k in keyframes))


def _lerp(p: float, q: float, s: float) -> float:
    # clamp against rounding drift so the convex combination stays a valid Box
    v = p + s * (q - p)
    return min(max(v, min(p, q)), max(p, q))


def _check_keyframes(keyframes: Sequence[KeyframeBox], f: int) -> None:
    prev = 0
    for k in keyframes:
        if not 1 <= k.frame_index <= f:
            raise KeyframeRangeError(f"key frame {k.frame_index} outside [1, {f}]")
        if k.frame_index <= prev:
            raise KeyframeOrderError(
                f"key frames must be strictly increasing, got {k.frame_index} after {prev}"
            )
        prev = k.frame_index


def scale_to_latent_grid(box: Box, h: int, w: int) -> tuple[int, int, int, int]:
    """Half-open latent cell range ``(row0, col0, row1, col1)`` covering ``box``.

    Starts are floored and ends ceiled, so the range always covers the
    continuous box; a degenerate box still yields one cell.
    """
    if h < 1 or w < 1:
        raise ValueError("latent grid must be at least 1x1")
    row0 = min(max(math.floor(box.y0 * h), 0), h - 1)
    col0 = min(max(math.floor(box.x0 * w), 0), w - 1)
    row1 = min(max(math.ceil(box.y1 * h), row0 + 1), h)
    col1 = min(max(math.ceil(box.x1 * w), col0 + 1), w)
    return (row0, col0, row1, col1)


# --------------------------------------------------------------------- parsing


def load_scene(path: str | Path) -> SceneSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SceneError(f"cannot read scene file {path}: {exc.strerror}") from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(str(path), f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_scene(document)


def parse_scene(document: Mapping[str, Any] | str) -> SceneSpec:
    """Validate a scene document and fill defaults.

    Accepts either the decoded mapping or its JSON text.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SceneParseError("<document>", f"invalid JSON: {exc.msg}") from exc
    if not isinstance(document, Mapping):
        raise SceneParseError("<document>", "scene must be an object")

    known = {"background_prompt", "frames", "steps", "seed", "resolution", "latent", "guidance", "layers"}
    unknown = sorted(set(document) - known)
    if unknown:
        raise SceneParseError(unknown[0], "unknown field")

    bg = document.get("background_prompt")
    if not isinstance(bg, str) or not bg.strip():
        raise SceneParseError("background_prompt", "must be a non-empty string")

    frames = _int_field(document, "frames", DEFAULT_FRAMES)
    steps = _int_field(document, "steps", DEFAULT_STEPS)
    seed = _int_field(document, "seed", 0)

    res = document.get("resolution", {"width": DEFAULT_RESOLUTION[0], "height": DEFAULT_RESOLUTION[1]})
    if not isinstance(res, Mapping):
        raise SceneParseError("resolution", "must be an object with width and height")
    width = _int_field(res, "width", DEFAULT_RESOLUTION[0], prefix="resolution.")
    height = _int_field(res, "height", DEFAULT_RESOLUTION[1], prefix="resolution.")
    if width < 1 or height < 1:
        raise SceneParseError("resolution", "width and height must be >= 1")

    lat = document.get("latent", {})
    if not isinstance(lat, Mapping):
        raise SceneParseError("latent", "must be an object with h, w, ch")
    latent_h = _int_field(lat, "h", max(height // VAE_FACTOR, 1), prefix="latent.")
    latent_w = _int_field(lat, "w", max(width // VAE_FACTOR, 1), prefix="latent.")
    channels = _int_field(lat, "ch", DEFAULT_LATENT_CHANNELS, prefix="latent.")

    guidance_doc = document.get("guidance", {})
    if not isinstance(guidance_doc, Mapping):
        raise SceneParseError("guidance", "must be an object")
    try:
        guidance = GuidanceConfig.from_document(guidance_doc)
    except (TypeError, ValueError) as exc:
        raise SceneParseError("guidance", str(exc)) from exc

    layers_doc = document.get("layers", [])
    if not isinstance(layers_doc, list):
        raise SceneParseError("layers", "must be a list")
    layers = tuple(_parse_layer(i, doc, frames) for i, doc in enumerate(layers_doc))

    return SceneSpec(
        background_prompt=bg,
        layers=layers,
        frames=frames,
        latent_h=latent_h,
        latent_w=latent_w,
        channels=channels,
        resolution=(width, height),
        steps=steps,
        seed=seed,
        guidance=guidance,
    )


def _int_field(doc: Mapping[str, Any], key: str, default: int, prefix: str = "") -> int:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise SceneParseError(prefix + key, f"must be an integer, got {value!r}")
    return int(value)


def _parse_layer(i: int, doc: Any, frames: int) -> LayerSpec:
    where = f"layers[{i}]"
    if not isinstance(doc, Mapping):
        raise SceneParseError(where, "must be an object")
    prompt = doc.get("prompt")
    if not isinstance(prompt, str) or not prompt.strip():
        raise SceneParseError(f"{where}.prompt", "must be a non-empty string")
    kfs = doc.get("keyframes")
    if not isinstance(kfs, list) or not kfs:
        raise SceneParseError(f"{where}.keyframes", "must be a non-empty list")
    track = []
    for j, kf in enumerate(kfs):
        kwhere = f"{where}.keyframes[{j}]"
        if not isinstance(kf, Mapping) or "frame" not in kf or "box" not in kf:
            raise SceneParseError(kwhere, "needs 'frame' and 'box'")
        frame = _int_field(kf, "frame", 0, prefix=kwhere + ".")
        box_values = kf["box"]
        if not isinstance(box_values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in box_values
        ):
            raise SceneParseError(kwhere + ".box", "must be a list of 4 numbers")
        try:
            box = Box.from_seq(box_values)
        except SceneError as exc:
            raise SceneParseError(kwhere + ".box", str(exc)) from exc
        track.append(KeyframeBox(frame, box))
    _check_keyframes(track, frames)
    if len(track) > 1 and (track[0].frame_index != 1 or track[-1].frame_index != frames):
        raise KeyframeRangeError(
            f"{where}.keyframes: track must start at frame 1 and end at frame {frames}"
        )
    return LayerSpec(prompt=prompt, track=tuple(track))
