"""Attention-guided crop/drop augmentation and random baselines.

Maps are ``(H, W)`` tensors and images ``(C, H, W)`` tensors. Random
choices go through an explicit :class:`numpy.random.Generator`.
"""
import numpy as np
import torch
import torch.nn.functional as F

from ._validation import ContractError, check_grid, check_threshold
from .boxes import BoundingBox

__all__ = [
    "normalize_attention_map",
    "upsample_map",
    "select_augmentation_map",
    "crop_mask",
    "drop_mask",
    "bounding_box_of_mask",
    "crop_and_resize",
    "attention_crop",
    "attention_drop",
    "random_crop_baseline",
    "random_drop_baseline",
]


def normalize_attention_map(raw_map):
    """Min-max normalize a map to [0, 1]; constant maps become all zeros."""
    m = check_grid(raw_map, 2, "raw_map")
    lo, hi = m.min(), m.max()
    if hi == lo:
        return torch.zeros_like(m)
    return (m - lo) / (hi - lo)


def upsample_map(map_, height, width):
    """Bilinearly resize a 2-D map (half-pixel centers, no overshoot)."""
    m = check_grid(map_, 2, "map")
    if height <= 0 or width <= 0:
        raise ContractError(f"target size must be positive, got {(height, width)}")
    if height < m.shape[0] or width < m.shape[1]:
        raise ContractError(
            f"target size {(height, width)} is smaller than source {tuple(m.shape)}"
        )
    if (height, width) == tuple(m.shape):
        return m.clone()
    return F.interpolate(m[None, None], size=(height, width), mode="bilinear",
                         align_corners=False)[0, 0]


def select_augmentation_map(attention, rng, size=None, mode="uniform"):
    """Pick one attention channel and return ``(k, augmentation_map)``.

    ``k`` is a zero-based channel index drawn uniformly (``mode="uniform"``)
    or proportionally to the channel's total activation
    (``mode="weighted"``). The chosen channel is normalized and, when
    ``size`` is given, upsampled to ``size = (height, width)``.
    """
    a = check_grid(attention, 3, "attention")
    num_parts = a.shape[0]
    if mode == "uniform":
        k = int(rng.integers(num_parts))
    elif mode == "weighted":
        mass = a.detach().double().sum(dim=(1, 2)).numpy()
        total = mass.sum()
        k = int(rng.choice(num_parts, p=mass / total)) if total > 0 else int(rng.integers(num_parts))
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    aug = a[k].detach()
    if size is not None:
        aug = upsample_map(aug, *size)
    # normalizing last keeps min 0 / max 1 at image resolution
    return k, normalize_attention_map(aug)


def crop_mask(aug, theta_c):
    """1 where the augmentation map exceeds ``theta_c``, else 0."""
    theta_c = check_threshold(theta_c, "theta_c")
    return (check_grid(aug, 2, "aug") > theta_c).to(torch.uint8)


def drop_mask(aug, theta_d):
    """0 where the augmentation map exceeds ``theta_d``, else 1."""
    theta_d = check_threshold(theta_d, "theta_d")
    return (check_grid(aug, 2, "aug") <= theta_d).to(torch.uint8)


def bounding_box_of_mask(mask):
    """Tightest box around the nonzero cells; the full grid if there are none."""
    m = check_grid(mask, 2, "mask")
    h, w = m.shape
    rows = torch.nonzero(m.any(dim=1)).flatten()
    if rows.numel() == 0:
        return BoundingBox.full(h, w)
    cols = torch.nonzero(m.any(dim=0)).flatten()
    return BoundingBox(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


def crop_and_resize(image, box, out_h, out_w):
    patch = image[:, box.top:box.bottom, box.left:box.right]
    if patch.shape[1:] == (out_h, out_w):
        return patch.clone()
    return F.interpolate(patch[None], size=(out_h, out_w), mode="bilinear",
                         align_corners=False)[0]


def _check_pair(image, aug):
    image = check_grid(image, 3, "image")
    aug = check_grid(aug, 2, "aug")
    if image.shape[1:] != aug.shape:
        raise ContractError(
            f"image {tuple(image.shape)} and augmentation map {tuple(aug.shape)} differ in size"
        )
    return image, aug


def attention_crop(image, aug, theta_c, out_h, out_w):
    """Crop the region where ``aug > theta_c`` and resize it to ``(out_h, out_w)``."""
    image, aug = _check_pair(image, aug)
    box = bounding_box_of_mask(crop_mask(aug, theta_c))
    return crop_and_resize(image, box, out_h, out_w)


def attention_drop(image, aug, theta_d):
    """Zero every pixel where ``aug > theta_d``."""
    image, aug = _check_pair(image, aug)
    return image * drop_mask(aug, theta_d).to(image.dtype)


def random_crop_box(height, width, rng, scale=(0.5, 1.0)):
    """Uniformly placed box whose sides are a uniform fraction in ``scale`` of the image sides."""
    bh = max(1, int(round(rng.uniform(*scale) * height)))
    bw = max(1, int(round(rng.uniform(*scale) * width)))
    top = int(rng.integers(height - bh + 1))
    left = int(rng.integers(width - bw + 1))
    return BoundingBox(top, left, top + bh, left + bw)


def random_crop_baseline(image, rng, out_h, out_w, scale=(0.5, 1.0)):
    image = check_grid(image, 3, "image")
    box = random_crop_box(image.shape[1], image.shape[2], rng, scale)
    return crop_and_resize(image, box, out_h, out_w)


def random_drop_baseline(image, rng, patch_fraction=0.5):
    """Cutout-style erase of one uniformly placed square fully inside the image."""
    image = check_grid(image, 3, "image")
    h, w = image.shape[1:]
    side = int(round(patch_fraction * min(h, w)))
    if side <= 0:
        return image.clone()
    top = int(rng.integers(h - side + 1))
    left = int(rng.integers(w - side + 1))
    out = image.clone()
    out[:, top:top + side, left:left + side] = 0
    return out
