"""Object localization from attention maps and coarse-to-fine prediction."""
from dataclasses import dataclass

import numpy as np
import torch

from ._validation import check_grid, check_threshold
from .augment import bounding_box_of_mask, crop_and_resize, normalize_attention_map, upsample_map
from .boxes import BoundingBox

__all__ = ["Prediction", "object_map", "object_bbox", "coarse_to_fine_predict",
           "combine_probabilities"]


@dataclass
class Prediction:
    probabilities: np.ndarray
    object_box: BoundingBox
    coarse: np.ndarray
    fine: np.ndarray


def object_map(attention):
    """Channel mean of ``(M, H, W)`` (or batched ``(B, M, H, W)``) attention."""
    return attention.mean(dim=-3)


def object_bbox(obj_map, theta_loc, height, width):
    """Box around the part of the normalized object map above ``theta_loc``.

    The map is resized to ``(height, width)`` and min-max normalized before
    thresholding, so positive rescaling of ``obj_map`` never changes the box.
    Falls back to the whole image when nothing exceeds the threshold.
    """
    theta_loc = check_threshold(theta_loc, "theta_loc")
    m = check_grid(obj_map, 2, "obj_map").detach()
    m = normalize_attention_map(upsample_map(m, height, width))
    return bounding_box_of_mask(m > theta_loc)


@torch.no_grad()
def combine_probabilities(p1, p2):
    """Equal-weight average of the coarse and fine probability vectors."""
    return (p1 + p2) / 2


@torch.no_grad()
def coarse_to_fine_predict(model, images, theta_loc=0.1):
    """Predict on the raw images, crop the localized object, predict again
    and average the two probability vectors.

    ``images`` is a ``(B, 3, h, w)`` batch (or one ``(3, h, w)`` image);
    returns a list of :class:`Prediction` with boxes in input coordinates.
    """
    if images.ndim == 3:
        images = images.unsqueeze(0)
    was_training = model.training
    model.eval()
    try:
        h, w = images.shape[2:]
        raw = model(images)
        p1 = torch.softmax(raw.logits, dim=1)
        boxes = [object_bbox(object_map(a), theta_loc, h, w) for a in raw.attention]
        zoomed = torch.stack([crop_and_resize(img, b, h, w) for img, b in zip(images, boxes)])
        p2 = torch.softmax(model(zoomed).logits, dim=1)
    finally:
        model.train(was_training)
    p1 = p1.double().numpy()
    p2 = p2.double().numpy()
    p = combine_probabilities(p1, p2)
    return [Prediction(p[i], boxes[i], p1[i], p2[i]) for i in range(len(boxes))]


@torch.no_grad()
def coarse_predict(model, images):
    """Softmax probabilities and attention of the raw forward pass only."""
    was_training = model.training
    model.eval()
    try:
        out = model(images)
    finally:
        model.train(was_training)
    return torch.softmax(out.logits, dim=1).double().numpy(), out.attention
