"""Manifests, image preprocessing and the synthetic fine-grained dataset."""
import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .boxes import BoundingBox

__all__ = [
    "SampleRecord",
    "ManifestError",
    "load_manifest",
    "write_manifest",
    "preprocess",
    "load_images",
    "SynthConfig",
    "generate_synthetic_dataset",
]

OBJ_COLUMNS = ["obj_top", "obj_left", "obj_bottom", "obj_right"]
MEAN = 0.5
STD = 0.5


class ManifestError(ValueError):
    pass


@dataclass
class SampleRecord:
    image_path: str
    label: int
    object_box: BoundingBox | None = None
    part_boxes: list = field(default_factory=list)


def _part_columns(i):
    return [f"part{i}_{side}" for side in ("top", "left", "bottom", "right")]


def _parse_box(values, lineno):
    if all(v.strip() == "" for v in values):
        return None
    try:
        return BoundingBox(*(int(v) for v in values))
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: invalid box {values}: {exc}") from None


def load_manifest(path, num_classes=None):
    """Read a manifest CSV into :class:`SampleRecord` objects in file order."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: missing header") from None
        if header[:2] != ["path", "label"] or header[2:6] != OBJ_COLUMNS:
            raise ManifestError(f"{path}: unexpected header {header}")
        n_parts, extra = divmod(len(header) - 6, 4)
        if extra or header[6:] != sum((_part_columns(i + 1) for i in range(n_parts)), []):
            raise ManifestError(f"{path}: unexpected part columns {header[6:]}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(
                    f"line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                label = int(row[1])
            except ValueError:
                raise ManifestError(f"line {lineno}: label {row[1]!r} is not an integer") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise ManifestError(
                    f"line {lineno}: label {label} of {row[0]!r} outside [0, {num_classes})"
                )
            obj = _parse_box(row[2:6], lineno)
            parts = [_parse_box(row[6 + 4 * i:10 + 4 * i], lineno) for i in range(n_parts)]
            records.append(SampleRecord(row[0], label, obj, [p for p in parts if p is not None]))
    return records


def write_manifest(path, records):
    n_parts = max((len(r.part_boxes) for r in records), default=0)
    header = ["path", "label", *OBJ_COLUMNS]
    for i in range(n_parts):
        header += _part_columns(i + 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            row = [r.image_path, str(r.label)]
            boxes = [r.object_box] + list(r.part_boxes) + [None] * (n_parts - len(r.part_boxes))
            for box in boxes:
                row += [""] * 4 if box is None else [str(v) for v in box.as_tuple()]
            writer.writerow(row)


def resolve(manifest_path, record):
    return Path(manifest_path).parent / record.image_path


def preprocess(image_file, input_size):
    """Decode, resize to ``input_size`` square and standardize to [-1, 1].

    Returns a float32 ``(input_size, input_size, 3)`` array.
    """
    try:
        with Image.open(image_file) as img:
            img = img.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot decode image {image_file}: {exc}") from None
    x = np.asarray(img, dtype=np.float32) / 255.0
    return (x - MEAN) / STD


def image_size(image_file):
    with Image.open(image_file) as img:
        return img.height, img.width


def load_images(manifest_path, records, input_size):
    """Preprocess every record into a ``(n, 3, s, s)`` tensor plus labels."""
    if not records:
        return torch.zeros(0, 3, input_size, input_size), torch.zeros(0, dtype=torch.long)
    arrays = [preprocess(resolve(manifest_path, r), input_size) for r in records]
    images = torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).contiguous()
    labels = torch.tensor([r.label for r in records], dtype=torch.long)
    return images, labels


# --- synthetic data -------------------------------------------------------

SHAPES = ("square", "disc", "triangle", "cross", "ring")
COLORS = (
    (230, 40, 40), (40, 90, 230), (240, 220, 30),
    (30, 200, 200), (200, 40, 220), (250, 140, 20),
)
BODY_COLORS = ((120, 100, 80), (90, 110, 90), (140, 130, 120), (100, 90, 120))


@dataclass
class SynthConfig:
    num_classes: int = 4
    per_class: int = 50
    image_size: int = 96
    area_range: tuple = (0.2, 0.5)
    glyph_range: tuple = (6, 10)


def class_glyphs(num_classes):
    """Two (shape, color) glyphs per class.

    Every glyph is unique to its class, while shapes and colors on their own
    are shared between classes, so neither alone identifies a class.
    """
    combos = []
    n_shapes, n_colors = len(SHAPES), len(COLORS)
    for c in range(num_classes):
        combos.append([(c % n_shapes, c % n_colors),
                       ((c + 1) % n_shapes, (c + 2) % n_colors)])
    flat = [g for pair in combos for g in pair]
    if len(set(flat)) != len(flat):
        raise ValueError(f"cannot build unique glyphs for {num_classes} classes")
    return combos


def _glyph_mask(shape, size):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c = size / 2
    if shape == "square":
        return np.ones((size, size), bool)
    if shape == "disc":
        return (yy - c) ** 2 + (xx - c) ** 2 <= c * c
    if shape == "ring":
        r2 = (yy - c) ** 2 + (xx - c) ** 2
        return (r2 <= c * c) & (r2 >= (0.45 * c) ** 2)
    if shape == "triangle":
        return np.abs(xx - c) <= yy / 2
    if shape == "cross":
        t = max(1, size // 3)
        lo = (size - t) // 2
        m = np.zeros((size, size), bool)
        m[lo:lo + t, :] = True
        m[:, lo:lo + t] = True
        return m
    raise ValueError(shape)


def _background(rng, size):
    """Mostly achromatic blocky texture with a faint color jitter."""
    cells = -(-size // 8)
    coarse = np.kron(rng.normal(0.0, 1.0, (cells, cells, 1)), np.ones((8, 8, 1)))[:size, :size]
    tint = np.kron(rng.normal(0.0, 1.0, (cells, cells, 3)), np.ones((8, 8, 1)))[:size, :size]
    fine = rng.normal(0.0, 1.0, (size, size, 3))
    return np.clip(128 + 30 * coarse + 6 * tint + 10 * fine, 0, 255)


def render_sample(rng, label, cfg, glyphs, return_body=False):
    """Draw one image; returns ``(uint8 image, object box, part boxes)``.

    With ``return_body`` the boolean body mask is appended.
    """
    s = cfg.image_size
    img = _background(rng, s)
    area = rng.uniform(*cfg.area_range) * s * s
    aspect = rng.uniform(0.75, 1.33)
    ry = np.sqrt(area / np.pi * aspect)
    rx = area / (np.pi * ry)
    cy = rng.uniform(ry, s - ry)
    cx = rng.uniform(rx, s - rx)
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    body = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    body_color = np.array(BODY_COLORS[rng.integers(len(BODY_COLORS))], float)
    img[body] = body_color + rng.normal(0.0, 6.0, (body.sum(), 3))
    rows = np.nonzero(body.any(axis=1))[0]
    cols = np.nonzero(body.any(axis=0))[0]
    obj = BoundingBox(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)

    parts = []
    occupied = np.zeros((s, s), bool)
    for shape_i, color_i in glyphs[label]:
        size = int(rng.integers(cfg.glyph_range[0], cfg.glyph_range[1] + 1))
        for _ in range(1000):
            top = int(rng.integers(obj.top, obj.bottom - size + 1))
            left = int(rng.integers(obj.left, obj.right - size + 1))
            window = (slice(top, top + size), slice(left, left + size))
            if body[window].all() and not occupied[window].any():
                break
        else:
            raise RuntimeError("could not place glyph on body")
        occupied[window] = True
        m = _glyph_mask(SHAPES[shape_i], size)
        patch = img[window]
        patch[m] = COLORS[color_i]
        parts.append(BoundingBox(top, left, top + size, left + size))
    img = np.clip(img, 0, 255).round().astype(np.uint8)
    return (img, obj, parts, body) if return_body else (img, obj, parts)


def generate_synthetic_dataset(out_dir, cfg=None, seed=0):
    """Write PNG images and ``manifest.csv`` to ``out_dir``; returns the manifest path.

    Each image shows a textured background and one ellipse "body" whose
    tight box is the ground-truth object box. Two small class-specific
    glyphs are drawn fully on the body; their boxes are the part boxes.
    Labels cycle through the classes, so the dataset is balanced.
    """
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"{out} is not writable")
    except OSError as exc:
        raise OSError(f"cannot write synthetic dataset to {out}: {exc}") from exc
    rng = np.random.default_rng(seed)
    glyphs = class_glyphs(cfg.num_classes)
    records = []
    for i in range(cfg.num_classes * cfg.per_class):
        label = i % cfg.num_classes
        img, obj, parts = render_sample(rng, label, cfg, glyphs)
        rel = f"images/{i:05d}.png"
        Image.fromarray(img).save(out / rel, format="PNG", optimize=False)
        records.append(SampleRecord(rel, label, obj, parts))
    manifest = out / "manifest.csv"
    write_manifest(manifest, records)
    return manifest
