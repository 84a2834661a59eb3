import numpy as np
import pytest

from canopy_metrics.geometry import TreeRecord


@pytest.fixture
def tree():
    def make(x, y, ca, patch="p", score=None, polygon=None):
        return TreeRecord(
            patch_id=patch,
            center=(float(x), float(y)),
            crown_area=float(ca),
            score=score,
            polygon=polygon,
        )

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
