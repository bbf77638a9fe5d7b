"""Backbone + attention + classifier forward pass and the training loss."""
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import ContractError
from .attention import AttentionGenerator, bilinear_attention_pooling
from .regularization import attention_regularization_loss

__all__ = ["ConvBackbone", "WSDAN", "ModelOutput", "training_loss"]


class ConvBackbone(nn.Module):
    """Four conv-BN-ReLU blocks: 3 -> 16 -> 32 -> 64 -> N channels.

    Every block has stride 2 except the last, whose stride is ``last_stride``
    (1 keeps an 8x8 grid at input 64 instead of 4x4). Any module mapping ``(B, 3, h, w)`` images to ``(B, N, H, W)`` feature
    maps and exposing ``out_channels`` can stand in for it.
    """

    def __init__(self, out_channels=64, widths=(16, 32, 64), last_stride=2):
        super().__init__()
        chans = (3, *widths, out_channels)
        strides = (2,) * len(widths) + (last_stride,)
        self.layers = nn.Sequential(*(
            nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            )
            for cin, cout, stride in zip(chans[:-1], chans[1:], strides)
        ))
        self.out_channels = out_channels

    def forward(self, images):
        return self.layers(images)


@dataclass
class ModelOutput:
    logits: torch.Tensor     # (B, num_classes)
    attention: torch.Tensor  # (B, M, H, W)
    parts: torch.Tensor      # (B, M, N)


class WSDAN(nn.Module):
    def __init__(self, num_classes, num_parts=4, num_features=64, backbone=None, pool="avg",
                 last_stride=2):
        super().__init__()
        if backbone is None:
            backbone = ConvBackbone(num_features, last_stride=last_stride)
        self.backbone = backbone
        if self.backbone.out_channels != num_features:
            raise ContractError(
                f"backbone emits {self.backbone.out_channels} channels, expected {num_features}"
            )
        self.attention = AttentionGenerator(num_features, num_parts)
        self.head = nn.Linear(num_parts * num_features, num_classes)
        self.num_classes = num_classes
        self.num_parts = num_parts
        self.num_features = num_features
        self.pool = pool

    def forward(self, images):
        if images.ndim != 4 or images.shape[1] != 3:
            raise ContractError(f"expected images of shape (B, 3, h, w), got {tuple(images.shape)}")
        features = self.backbone(images)
        attention = self.attention(features)
        parts = bilinear_attention_pooling(features, attention, self.pool)
        logits = self.head(parts.flatten(1))
        return ModelOutput(logits, attention, parts)

    def parameter_groups(self):
        return {
            "backbone": list(self.backbone.parameters()),
            "attention": list(self.attention.parameters()),
            "head": list(self.head.parameters()),
        }


def training_loss(raw_out, crop_out, drop_out, labels, centers, lam=1.0):
    """Cross-entropy averaged over the available streams plus ``lam`` times
    the attention regularization of the raw stream.

    ``crop_out`` or ``drop_out`` may be ``None`` when that augmentation is
    disabled. Returns ``(loss, components)`` where ``components`` holds the
    detached per-term values.
    """
    streams = {"raw": raw_out, "crop": crop_out, "drop": drop_out}
    streams = {k: v for k, v in streams.items() if v is not None}
    for name, out in streams.items():
        if out.logits.shape[0] != labels.shape[0]:
            raise ContractError(
                f"{name} stream has batch size {out.logits.shape[0]}, labels have {labels.shape[0]}"
            )
    ce = {k: F.cross_entropy(v.logits, labels) for k, v in streams.items()}
    reg = attention_regularization_loss(raw_out.parts, centers, labels)
    loss = sum(ce.values()) / len(ce) + lam * reg
    components = {f"ce_{k}": v.detach() for k, v in ce.items()}
    components["reg"] = reg.detach()
    return loss, components
