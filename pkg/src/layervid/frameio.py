"""PNG frame sequences on disk.

Frames are stored 8-bit; files are named ``<prefix>_####.png`` with a
1-based frame number.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def frame_name(prefix: str, index: int) -> str:
    return f"{prefix}_{index:04d}.png"


def write_frames(directory: str | Path, video: np.ndarray, prefix: str = "frame") -> list[Path]:
    """Write ``[f, H, W, 3|4]`` floats in [0, 1] as RGB or RGBA PNGs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mode = {3: "RGB", 4: "RGBA"}[video.shape[-1]]
    paths = []
    for i, frame in enumerate(video, start=1):
        path = directory / frame_name(prefix, i)
        Image.fromarray(to_uint8(frame), mode=mode).save(path)
        paths.append(path)
    return paths


def write_masks(directory: str | Path, masks: np.ndarray, prefix: str = "mask") -> list[Path]:
    """Write boolean ``[f, H, W]`` masks as single-channel 0/255 PNGs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(masks, start=1):
        path = directory / frame_name(prefix, i)
        Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path)
        paths.append(path)
    return paths


def read_frames(directory: str | Path, prefix: str = "frame", expected: int | None = None) -> np.ndarray:
    """Read a PNG sequence back to floats in [0, 1] (masks come back boolean)."""
    directory = Path(directory)
    paths = sorted(directory.glob(f"{prefix}_*.png"))
    if not paths:
        raise ValueError(f"no {prefix}_####.png files in {directory}")
    if expected is not None and len(paths) != expected:
        raise ValueError(f"expected {expected} frames in {directory}, found {len(paths)}")
    arrays = [np.asarray(Image.open(p)) for p in paths]
    stacked = np.stack(arrays)
    if stacked.ndim == 3:
        return stacked >= 128
    return stacked.astype(float) / 255.0
