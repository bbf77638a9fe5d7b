"""Static PNG overlays of attention maps, crop/drop regions and the object box."""
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from . import augment
from .inference import coarse_predict, object_bbox, object_map


def _heat(image, heat, alpha=0.5):
    base = np.asarray(image, dtype=np.float32)
    color = np.zeros_like(base)
    color[..., 0] = 255 * heat
    color[..., 2] = 255 * (1 - heat)
    return Image.fromarray(((1 - alpha) * base + alpha * color).astype(np.uint8))


def _boxed(image, box, color=(255, 255, 0)):
    out = image.copy()
    ImageDraw.Draw(out).rectangle([box.left, box.top, box.right - 1, box.bottom - 1],
                                  outline=color, width=2)
    return out


def write_visualizations(model, cfg, image_path, out_dir, seed=0):
    """Write per-channel heatmaps, crop box, dropped image and object box."""
    from .data import preprocess

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with Image.open(image_path) as img:
        original = img.convert("RGB")
    h, w = original.height, original.width
    x = torch.from_numpy(preprocess(image_path, cfg.input_size)).permute(2, 0, 1)
    _, attention = coarse_predict(model, x[None])
    attention = attention[0]
    written = []
    for k, channel in enumerate(attention):
        heat = augment.normalize_attention_map(augment.upsample_map(channel, h, w)).numpy()
        path = out / f"attention_{k:02d}.png"
        _heat(original, heat).save(path)
        written.append(path)

    rng = np.random.default_rng(seed)
    k, aug = augment.select_augmentation_map(attention, rng, size=(h, w), mode=cfg.select_mode)
    crop_box = augment.bounding_box_of_mask(augment.crop_mask(aug, cfg.theta_c))
    path = out / f"crop_box_part{k:02d}.png"
    _boxed(_heat(original, aug.numpy(), 0.35), crop_box).save(path)
    written.append(path)

    pixels = torch.from_numpy(np.asarray(original, dtype=np.float32)).permute(2, 0, 1)
    dropped = augment.attention_drop(pixels, aug, cfg.theta_d)
    path = out / f"dropped_part{k:02d}.png"
    Image.fromarray(dropped.permute(1, 2, 0).numpy().astype(np.uint8)).save(path)
    written.append(path)

    box = object_bbox(object_map(attention), cfg.theta_loc, h, w)
    path = out / "object_box.png"
    _boxed(original, box, (0, 255, 0)).save(path)
    written.append(path)
    return written
