import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from manifold_embed.dataset import HyperCube

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def make_cube():
    """Build a validated in-memory cube from plain nested lists/arrays."""

    def build(values, labels, num_classes=None, class_names=None) -> HyperCube:
        values = np.asarray(values, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.uint16)
        if num_classes is None:
            num_classes = max(1, int(labels.max(initial=0)))
        cube = HyperCube(
            values=values,
            labels=labels,
            num_classes=num_classes,
            class_names=class_names,
        )
        cube.validate()
        return cube

    return build


@pytest.fixture
def checkerboard_cube(make_cube):
    """2x2 cube, classes 1/2 in a checker pattern, 3 bands."""
    values = np.arange(2 * 2 * 3, dtype=np.float32).reshape(2, 2, 3)
    labels = [[1, 2], [2, 1]]
    return make_cube(values, labels)
