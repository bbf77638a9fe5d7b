import numpy as np
import pytest
import torch

from wsdan.data import SynthConfig, generate_synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 classes x 4 images; enough for plumbing tests, not for accuracy."""
    root = tmp_path_factory.mktemp("tiny")
    manifest = generate_synthetic_dataset(root, SynthConfig(num_classes=4, per_class=4), seed=3)
    return manifest


def central_difference(fn, tensor, eps=1e-6, indices=None):
    """Numerical gradient of scalar ``fn()`` w.r.t. entries of ``tensor`` (in place perturbation)."""
    flat = tensor.data.view(-1)
    indices = range(flat.numel()) if indices is None else indices
    grads = {}
    for i in indices:
        orig = flat[i].item()
        flat[i] = orig + eps
        plus = fn().item()
        flat[i] = orig - eps
        minus = fn().item()
        flat[i] = orig
        grads[i] = (plus - minus) / (2 * eps)
    return grads


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


# Filled by the acceptance suite: criterion number -> (verdict, title, detail).
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        verdict, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2} {verdict}: {title} [{detail}]")
