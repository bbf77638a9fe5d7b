"""Attention regularization loss and moving-average part-feature centers."""
import torch

from ._validation import ConfigError, ContractError

__all__ = ["FeatureCenters", "attention_regularization_loss", "update_centers"]


class FeatureCenters:
    """Per-class (or global) centers of the part features.

    ``data`` has shape ``(num_classes, M, N)``; with ``per_class=False`` it
    has a single slot shared by every label.
    """

    def __init__(self, num_classes, num_parts, num_features, beta=0.05,
                 per_class=True, dtype=torch.float32):
        if not 0.0 <= beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {beta!r}")
        self.num_classes = num_classes
        self.beta = float(beta)
        self.per_class = per_class
        slots = num_classes if per_class else 1
        self.data = torch.zeros(slots, num_parts, num_features, dtype=dtype)

    def slot(self, labels):
        labels = torch.as_tensor(labels)
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(
                f"label out of range [0, {self.num_classes}): {labels.tolist()}"
            )
        return labels if self.per_class else torch.zeros_like(labels)

    def __getitem__(self, labels):
        return self.data[self.slot(labels)]

    def state_dict(self):
        return {"data": self.data.clone(), "beta": self.beta,
                "per_class": self.per_class, "num_classes": self.num_classes}

    def load_state_dict(self, state):
        self.data = state["data"].clone()
        self.beta = state["beta"]
        self.per_class = state["per_class"]
        self.num_classes = state["num_classes"]


def attention_regularization_loss(parts, centers, labels):
    """Squared distance of each part feature to its center.

    For a single ``(M, N)`` part matrix and an integer label this returns
    ``sum_k ||f_k - c_k||^2``. For a ``(B, M, N)`` batch it returns the mean
    of that quantity over the batch. Centers are treated as constants.
    """
    batched = parts.ndim == 3
    if not batched:
        parts = parts.unsqueeze(0)
        labels = torch.as_tensor([labels])
    target = centers[labels].to(parts.dtype).detach()
    if target.shape != parts.shape:
        raise ContractError(
            f"parts {tuple(parts.shape)} do not match centers {tuple(target.shape)}"
        )
    per_sample = (parts - target).pow(2).sum(dim=(1, 2))
    return per_sample.mean() if batched else per_sample[0]


@torch.no_grad()
def update_centers(centers, parts, labels):
    """Move centers toward ``parts`` by ``beta``, one sample at a time.

    Mutates and returns ``centers``. Batched updates are applied
    sequentially in batch order.
    """
    if parts.ndim == 2:
        parts = parts.unsqueeze(0)
        labels = [int(labels)]
    slots = centers.slot(labels).tolist()
    parts = parts.detach().to(centers.data.dtype)
    if parts.shape[1:] != centers.data.shape[1:]:
        raise ContractError(
            f"parts {tuple(parts.shape[1:])} do not match centers {tuple(centers.data.shape[1:])}"
        )
    for s, f in zip(slots, parts):
        # lerp is exact at both beta == 0 and beta == 1
        centers.data[s].lerp_(f, centers.beta)
    return centers
