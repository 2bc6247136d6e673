import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from monops import conv2d_circular, normalize_kernel  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_textured_image(rng, size):
    """Smooth random field plus soft edges, clipped inside (0, 1)."""
    g = rng.normal(0.0, 1.0, (size, size))
    k = normalize_kernel(np.ones((5, 5)))
    for _ in range(2):
        g = conv2d_circular(g, k)
    g = (g - g.min()) / (g.max() - g.min() + 1e-12)
    step = np.zeros((size, size))
    step[:, size // 3:] += 0.3
    step[size // 2:, :] -= 0.2
    return np.clip(0.15 + 0.7 * g + 0.5 * step, 0.02, 0.98)


@pytest.fixture
def textured():
    return make_textured_image
