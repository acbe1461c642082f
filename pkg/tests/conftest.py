import numpy as np
import pytest

from ancova_cp import (
    AncovaLayout,
    ContrastSpec,
    build_geometry,
    critical_values,
    reference_design,
)


@pytest.fixture(scope="session")
def ref():
    """Bundled reference design with the default levels; shared by most tests."""
    layout, contrast = reference_design()
    geom = build_geometry(layout, contrast)
    cfg = critical_values(layout, alpha=0.05, sig_tau=0.10, sig_xi=0.10)
    return layout, contrast, geom, cfg


@pytest.fixture(scope="session")
def small():
    """Cheap two-group design for structural tests."""
    layout = AncovaLayout(k=2, n=(4, 4), x=((1.0, 2.0, 3.0, 4.0), (2.0, 4.0, 6.0, 8.0)))
    contrast = ContrastSpec.treatment_difference(layout, 1, 2)
    geom = build_geometry(layout, contrast)
    cfg = critical_values(layout, alpha=0.05, sig_tau=0.10, sig_xi=0.10)
    return layout, contrast, geom, cfg


class ZeroRng:
    """Zero-noise stand-in for a numpy Generator (test hook)."""

    def standard_normal(self, size=None):
        return np.zeros(size) if size is not None else 0.0

    def standard_gamma(self, shape, size=None):
        return np.zeros(size) if size is not None else 0.0


@pytest.fixture
def zero_rng():
    return ZeroRng()
