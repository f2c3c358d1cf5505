"""Spatial preprocessing and clip augmentation.

Frame-level helpers work on arrays laid out ``(..., H, W, C)``; clips are
``(T, C, H, W)`` as fed to the network.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .clipper import Clip, sample_frame_indices

CROP_POSITIONS = ("tl", "tr", "bl", "br", "center")


@dataclass(frozen=True)
class AugmentConfig:
    resize_h: int = 128
    resize_w: int = 171
    crop_h: int = 112
    crop_w: int = 112
    flip_prob: float = 0.5
    shear_max_deg: float = 25.0
    enable_crop: bool = True
    enable_flip: bool = True
    enable_shear: bool = True
    shear_axis: str = "horizontal"
    seed: int = 0

    def __post_init__(self):
        if self.crop_h > self.resize_h or self.crop_w > self.resize_w:
            raise ValueError("crop_h/crop_w: crop must fit inside the resized frame")
        if min(self.crop_h, self.crop_w) < 1:
            raise ValueError("crop_h/crop_w: must be >= 1")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob: must be in [0, 1]")
        if not 0.0 <= self.shear_max_deg < 45.0:
            raise ValueError("shear_max_deg: must be in [0, 45)")
        if self.shear_axis not in ("horizontal", "vertical"):
            raise ValueError("shear_axis: must be 'horizontal' or 'vertical'")

    @classmethod
    def desk(cls, **overrides):
        cfg = dict(resize_h=36, resize_w=36, crop_h=32, crop_w=32)
        cfg.update(overrides)
        return cls(**cfg)

    def to_dict(self):
        return asdict(self)


def _lerp(a, b, f):
    # exact for a == b, so constant inputs are fixed points
    return a + f * (b - a)


def _source_coords(n_in, n_out):
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


def resize_bilinear(frame, out_h, out_w):
    """Bilinear resize of ``(..., H, W, C)`` with half-pixel centres."""
    frame = np.asarray(frame, dtype=np.float64)
    in_h, in_w = frame.shape[-3], frame.shape[-2]
    y0, y1, fy = _source_coords(in_h, out_h)
    x0, x1, fx = _source_coords(in_w, out_w)
    rows = _lerp(frame[..., y0, :, :], frame[..., y1, :, :], fy[:, None, None])
    return _lerp(rows[..., x0, :], rows[..., x1, :], fx[:, None])


def corner_crop(frame, crop_h, crop_w, position="center"):
    """Copy a ``crop_h x crop_w`` corner or centre block of ``(..., H, W, C)``."""
    frame = np.asarray(frame)
    h, w = frame.shape[-3], frame.shape[-2]
    if crop_h > h or crop_w > w:
        raise ValueError(f"crop {crop_h}x{crop_w} larger than frame {h}x{w}")
    position = position.lower()
    if position == "center":
        top, left = (h - crop_h) // 2, (w - crop_w) // 2
    elif position in CROP_POSITIONS:
        top = 0 if position[0] == "t" else h - crop_h
        left = 0 if position[1] == "l" else w - crop_w
    else:
        raise ValueError(f"unknown crop position {position!r}")
    return frame[..., top:top + crop_h, left:left + crop_w, :].copy()


def horizontal_flip(clip, axis=-1):
    """Reverse the width axis (last axis of a ``(T, C, H, W)`` clip)."""
    return np.flip(clip, axis=axis).copy()


def shear_frame(frame, theta, axis="horizontal"):
    """Shear ``(..., H, W, C)`` by ``theta`` degrees about the image centre.

    Output pixel ``(y, x)`` samples source ``(y, x + tan(theta) * (y - (H-1)/2))``
    with linear interpolation along x and border replication.
    """
    if abs(theta) >= 45:
        raise ValueError("shear angle must satisfy |theta| < 45")
    frame = np.asarray(frame, dtype=np.float64)
    if axis == "vertical":
        return np.swapaxes(shear_frame(np.swapaxes(frame, -3, -2), theta), -3, -2)
    h, w = frame.shape[-3], frame.shape[-2]
    shift = np.tan(np.deg2rad(theta)) * (np.arange(h) - (h - 1) / 2.0)
    xs = np.clip(np.arange(w)[None, :] + shift[:, None], 0, w - 1)
    i0 = np.floor(xs).astype(np.intp)
    i1 = np.minimum(i0 + 1, w - 1)
    f = (xs - i0)[..., None]
    lead = (1,) * (frame.ndim - 3)
    a = np.take_along_axis(frame, i0.reshape(lead + (h, w, 1)), axis=-2)
    b = np.take_along_axis(frame, i1.reshape(lead + (h, w, 1)), axis=-2)
    return _lerp(a, b, f)


def augment_clip(clip, cfg, rng):
    """Random crop, flip and shear of a resized ``(T, C, H, W)`` clip.

    One draw of each transform is shared by all frames. Returns
    ``(clip, draws)`` where ``draws`` records the choices made.
    """
    position = CROP_POSITIONS[int(rng.integers(len(CROP_POSITIONS)))]
    flip = bool(rng.random() < cfg.flip_prob)
    theta = float(rng.uniform(-cfg.shear_max_deg, cfg.shear_max_deg))
    if not cfg.enable_crop:
        position = "center"
    flip = flip and cfg.enable_flip
    if not cfg.enable_shear:
        theta = 0.0

    frames = np.asarray(clip, dtype=np.float64).transpose(0, 2, 3, 1)
    frames = corner_crop(frames, cfg.crop_h, cfg.crop_w, position)
    if flip:
        frames = horizontal_flip(frames, axis=-2)
    if theta != 0.0:
        frames = shear_frame(frames, theta, cfg.shear_axis)
    out = np.ascontiguousarray(frames.transpose(0, 3, 1, 2))
    return out, {"position": position, "flip": flip, "theta": theta}


def normalize_pixels(clip):
    """Map 8-bit intensities to roughly [-1, 1]."""
    return clip / 127.5 - 1.0


def make_clip(frames, window, cfg, rng=None):
    """Sample, resize and crop one clip from a ``(T, H, W, 3)`` video.

    With ``rng`` the training augmentation is applied; without it the clip
    gets the evaluation path (resize + centre crop).
    """
    indices = sample_frame_indices(window)
    raw = np.asarray(frames)[indices].astype(np.float64)
    if raw.shape[1:3] != (cfg.resize_h, cfg.resize_w):
        raw = resize_bilinear(raw, cfg.resize_h, cfg.resize_w)
    if rng is None:
        pixels = corner_crop(raw, cfg.crop_h, cfg.crop_w, "center").transpose(0, 3, 1, 2)
    else:
        pixels, _ = augment_clip(raw.transpose(0, 3, 1, 2), cfg, rng)
    return Clip(window, indices, normalize_pixels(np.ascontiguousarray(pixels)))
