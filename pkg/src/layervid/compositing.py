"""Straight-alpha layer blending and the external harmonization hook."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from layervid import frameio

Hook = Union[None, str, Sequence[str], Callable[[np.ndarray, np.ndarray], np.ndarray]]


class HarmonizeError(RuntimeError):
    pass


def alpha_over_frame(bg: np.ndarray, fg: np.ndarray) -> np.ndarray:
    """``fg.rgb * a + bg * (1 - a)`` for one ``[H, W, 3]`` / ``[H, W, 4]`` pair.

    Works equally on whole ``[f, H, W, c]`` videos.
    """
    if fg.shape[-1] != 4 or bg.shape[-1] != 3 or fg.shape[:-1] != bg.shape[:-1]:
        raise ValueError(f"cannot composite {fg.shape} over {bg.shape}")
    alpha = fg[..., 3:4]
    return fg[..., :3] * alpha + bg * (1.0 - alpha)


def blend_layers(background: np.ndarray, foregrounds: Sequence[np.ndarray]) -> np.ndarray:
    """Composite foregrounds over the background in order; later layers end up on top."""
    out = np.asarray(background, dtype=float)
    for fg in foregrounds:
        if fg.shape[0] != out.shape[0]:
            raise ValueError(f"layer has {fg.shape[0]} frames, background has {out.shape[0]}")
        out = alpha_over_frame(out, fg)
    return out


def union_masks(masks: Sequence[np.ndarray], shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        out |= m
    return out


def harmonize(blend: np.ndarray, masks: np.ndarray, hook: Hook = None) -> np.ndarray:
    """Pass the blended video and its foreground masks through a harmonizer.

    ``hook`` is ``None`` (identity), a Python callable ``(frames, masks) ->
    frames``, or an external command. The command is run as
    ``CMD FRAMES_DIR MASKS_DIR OUT_DIR`` and must write
    ``OUT_DIR/frame_####.png`` for every input frame.
    """
    if masks.shape != blend.shape[:-1]:
        raise ValueError(f"masks {masks.shape} do not align with frames {blend.shape}")
    if hook is None:
        return blend
    if callable(hook):
        out = np.asarray(hook(blend, masks), dtype=float)
    else:
        out = _run_external(blend, masks, hook)
    if out.shape != blend.shape:
        raise HarmonizeError(f"harmonizer returned shape {out.shape}, expected {blend.shape}")
    return out


def _run_external(blend: np.ndarray, masks: np.ndarray, hook: str | Sequence[str]) -> np.ndarray:
    argv = shlex.split(hook) if isinstance(hook, str) else list(hook)
    with tempfile.TemporaryDirectory(prefix="harmonize-") as tmp:
        tmp = Path(tmp)
        frames_dir, masks_dir, out_dir = tmp / "frames", tmp / "masks", tmp / "out"
        frameio.write_frames(frames_dir, blend)
        frameio.write_masks(masks_dir, masks)
        out_dir.mkdir()
        try:
            proc = subprocess.run(
                [*argv, str(frames_dir), str(masks_dir), str(out_dir)],
                capture_output=True,
                text=True,
            )
        except OSError as exc:
            raise HarmonizeError(f"cannot run harmonizer {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-1:] or ["no stderr"]
            raise HarmonizeError(f"harmonizer exited with {proc.returncode}: {tail[0]}")
        try:
            return frameio.read_frames(out_dir, "frame", expected=blend.shape[0])
        except (OSError, ValueError) as exc:
            raise HarmonizeError(f"bad harmonizer output: {exc}") from exc
