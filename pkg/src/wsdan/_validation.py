"""Input checks shared by the library entry points."""
import numpy as np
import torch


class ContractError(ValueError):
    """Raised when an input violates a shape or range precondition."""


class ConfigError(ValueError):
    """Raised for invalid hyperparameters or configuration values."""


def check_threshold(value, name):
    if not 0.0 <= float(value) <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_grid(x, ndim, name):
    """Return ``x`` as a tensor, requiring ``ndim`` dimensions."""
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x))
    if x.ndim != ndim:
        raise ContractError(f"{name} must be {ndim}-D, got shape {tuple(x.shape)}")
    return x


def check_images(X):
    """Validate an image batch for the estimator API.

    Accepts channels-last ``(n, h, w, 3)`` arrays (already standardized, see
    :func:`wsdan.data.preprocess`) and returns a float32 ``(n, 3, h, w)``
    tensor.
    """
    X = np.asarray(X)
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ContractError(f"expected images of shape (n, h, w, 3), got {X.shape}")
    if not np.issubdtype(X.dtype, np.floating):
        raise ContractError(f"expected floating point images, got dtype {X.dtype}")
    if not np.all(np.isfinite(X)):
        raise ContractError("images contain non-finite values")
    return torch.from_numpy(np.ascontiguousarray(X, dtype=np.float32)).permute(0, 3, 1, 2).contiguous()
