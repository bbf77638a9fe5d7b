"""Classification/localization metrics and the ablation harness."""
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .inference import coarse_predict, coarse_to_fine_predict, object_bbox, object_map
from .trainer import TrainState, fit

__all__ = [
    "top1_accuracy",
    "iou",
    "mean_iou",
    "localization_error",
    "EvalSet",
    "evaluate",
    "AblationCell",
    "default_grid",
    "run_ablation",
    "format_report",
    "REPORT_HEADER",
]

log = logging.getLogger(__name__)

REPORT_HEADER = "config\taccuracy\tmiou\tloc_error"


def top1_accuracy(predictions, labels):
    """Fraction of rows whose argmax equals the label (ties go to the lowest index)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("top1_accuracy of an empty set is undefined")
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    return float(np.mean(predictions.argmax(axis=1) == labels))


def iou(a, b):
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    iw = min(a.right, b.right) - max(a.left, b.left)
    inter = max(ih, 0) * max(iw, 0)
    return inter / (a.area + b.area - inter)


def _ious(pred_boxes, gt_boxes):
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(f"{len(pred_boxes)} predicted boxes for {len(gt_boxes)} ground-truth boxes")
    if not pred_boxes:
        raise ValueError("no boxes given")
    return [iou(p, g) for p, g in zip(pred_boxes, gt_boxes)]


def mean_iou(pred_boxes, gt_boxes):
    return float(np.mean(_ious(pred_boxes, gt_boxes)))


def localization_error(pred_boxes, gt_boxes):
    """Fraction of images whose box has IoU strictly below 0.5."""
    ious = _ious(pred_boxes, gt_boxes)
    return sum(v < 0.5 for v in ious) / len(ious)


@dataclass
class EvalSet:
    """Preprocessed images with labels and optional ground-truth object boxes.

    ``sizes`` holds the original ``(height, width)`` of each image; boxes are
    in that coordinate frame.
    """

    images: torch.Tensor
    labels: torch.Tensor
    boxes: list = None
    sizes: list = None

    @property
    def has_boxes(self):
        return self.boxes is not None and all(b is not None for b in self.boxes)


def evaluate(model, data, refine=True, theta_loc=0.1, batch_size=64):
    """Return ``{"accuracy", "miou", "loc_error"}``; box metrics are ``None``
    when ``data`` has no boxes."""
    probs, pred_boxes = [], []
    for i in range(0, len(data.labels), batch_size):
        chunk = data.images[i:i + batch_size]
        if refine:
            probs.extend(p.probabilities for p in coarse_to_fine_predict(model, chunk, theta_loc))
        else:
            probs.extend(coarse_predict(model, chunk)[0])
        if data.has_boxes:
            _, attention = coarse_predict(model, chunk)
            for j, a in enumerate(attention):
                h, w = data.sizes[i + j]
                pred_boxes.append(object_bbox(object_map(a), theta_loc, h, w))
    result = {"accuracy": top1_accuracy(np.stack(probs), data.labels.numpy()),
              "miou": None, "loc_error": None}
    if data.has_boxes:
        result["miou"] = mean_iou(pred_boxes, data.boxes)
        result["loc_error"] = localization_error(pred_boxes, data.boxes)
    return result


@dataclass
class AblationCell:
    name: str
    overrides: dict = field(default_factory=dict)
    refine: bool = False


def default_grid(parts_sweep=(1, 8)):
    """Component ablation, attention-vs-random augmentation and a part-count sweep."""
    cells = [
        AblationCell("baseline", {"crop": False, "drop": False}),
        AblationCell("+crop", {"drop": False}),
        AblationCell("+drop", {"crop": False}),
        AblationCell("+crop+drop", {}),
        AblationCell("+crop+drop+refine", {}, refine=True),
        AblationCell("random+crop", {"augment": "random", "drop": False}),
        AblationCell("random+drop", {"augment": "random", "crop": False}),
        AblationCell("random+crop+drop", {"augment": "random"}),
    ]
    cells += [AblationCell(f"M={m}", {"num_parts": m}) for m in parts_sweep]
    return cells


def _train_cell(base_cfg, overrides, seed, train_data):
    cfg = base_cfg.replace(**overrides, seed=seed)
    state = TrainState(cfg)
    fit(state, *train_data)
    return state.model


def run_ablation(base_cfg, train_data, test_data, cells=None, seeds=None):
    """Train and score every cell; metrics are averaged over ``seeds``.

    ``train_data`` is ``(images, labels, val_images, val_labels)`` and
    ``test_data`` an :class:`EvalSet`. Every cell uses the same seeds, so
    cells differ only in their overrides. Cells that share overrides (for
    example with and without refinement) share one trained model. A cell
    whose training raises is reported with ``status="FAILED"``.
    """
    cells = default_grid() if cells is None else cells
    seeds = [base_cfg.seed] if seeds is None else list(seeds)
    models = {}
    rows = []
    for cell in cells:
        scores = []
        try:
            for seed in seeds:
                key = (tuple(sorted(cell.overrides.items())), seed)
                if key not in models:
                    log.info("training cell %s seed %d", cell.name, seed)
                    models[key] = _train_cell(base_cfg, cell.overrides, seed, train_data)
                scores.append(evaluate(models[key], test_data, refine=cell.refine,
                                       theta_loc=base_cfg.theta_loc))
        except Exception:
            log.exception("ablation cell %s failed", cell.name)
            rows.append({"config": cell.name, "status": "FAILED",
                         "accuracy": None, "miou": None, "loc_error": None})
            continue
        row = {"config": cell.name, "status": "ok"}
        for metric in ("accuracy", "miou", "loc_error"):
            values = [s[metric] for s in scores]
            row[metric] = None if any(v is None for v in values) else float(np.mean(values))
        rows.append(row)
    return rows


def format_report(rows):
    lines = [REPORT_HEADER]
    for row in rows:
        if row["status"] == "FAILED":
            lines.append(f"{row['config']}\tFAILED\tFAILED\tFAILED")
            continue
        cols = ["n/a" if row[m] is None else f"{row[m]:.6f}" for m in ("accuracy", "miou", "loc_error")]
        lines.append("\t".join([row["config"], *cols]))
    return "\n".join(lines) + "\n"
