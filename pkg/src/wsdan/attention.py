"""Attention generation and bilinear attention pooling.

Tensors follow the PyTorch layout: feature maps are ``(B, N, H, W)`` and
attention maps ``(B, M, H, W)``. Unbatched ``(N, H, W)`` inputs are accepted
by the functional API and produce unbatched outputs.
"""
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import ContractError

__all__ = [
    "generate_attention_maps",
    "bilinear_attention_pooling",
    "AttentionGenerator",
]


def _batched(x, name):
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim == 4:
        return x, False
    raise ContractError(f"{name} must be 3-D or 4-D, got shape {tuple(x.shape)}")


def generate_attention_maps(features, weight, bias=None):
    """Rectified 1x1 convolution of ``features``.

    ``weight`` has shape ``(N, M)`` (input channels by parts) and ``bias``
    shape ``(M,)``. Returns attention maps with ``M`` channels and the same
    spatial size as ``features``.
    """
    x, squeeze = _batched(features, "features")
    if weight.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise ContractError(
            f"features with shape {tuple(features.shape)} have {x.shape[1]} channels "
            f"but the attention kernel has shape {tuple(weight.shape)}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ContractError(
            f"bias shape {tuple(bias.shape)} does not match kernel shape {tuple(weight.shape)}"
        )
    out = torch.einsum("bnhw,nm->bmhw", x, weight)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    out = F.relu(out)
    return out[0] if squeeze else out


def bilinear_attention_pooling(features, attention, pool="avg"):
    """Pool one feature vector per attention channel.

    Row ``k`` of the result is ``g(A_k * F)`` where ``g`` is global average
    pooling (``pool="avg"``) or global max pooling (``pool="max"``).
    Output shape is ``(B, M, N)``, or ``(M, N)`` for unbatched input.
    """
    f, squeeze_f = _batched(features, "features")
    a, squeeze_a = _batched(attention, "attention")
    if f.shape[0] != a.shape[0] or f.shape[2:] != a.shape[2:]:
        raise ContractError(
            f"features {tuple(features.shape)} and attention {tuple(attention.shape)} "
            "must share batch and spatial dimensions"
        )
    if pool == "avg":
        h, w = f.shape[2:]
        parts = torch.einsum("bmhw,bnhw->bmn", a, f) / (h * w)
    elif pool == "max":
        parts = (a.unsqueeze(2) * f.unsqueeze(1)).amax(dim=(3, 4))
    else:
        raise ValueError(f"unknown pooling {pool!r}")
    return parts[0] if (squeeze_f and squeeze_a) else parts


class AttentionGenerator(nn.Module):
    """Trainable 1x1 convolution producing nonnegative attention maps."""

    def __init__(self, num_features, num_parts):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(num_features, num_parts))
        self.bias = nn.Parameter(torch.zeros(num_parts))
        nn.init.kaiming_uniform_(self.weight.T, a=5 ** 0.5)

    def forward(self, features):
        return generate_attention_maps(features, self.weight, self.bias)
