import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from conceptmine.dataset import SyntheticSpec, generate_synthetic


@pytest.fixture
def planted():
    """Factory for planted synthetic datasets with sane defaults."""

    def make(n_classes=3, n_parts=2, feat_dim=16, samples_per_class=30,
             concepts_per_cell=2, noise_sigma=0.02, min_separation=1.0, seed=0):
        spec = SyntheticSpec(
            n_classes=n_classes, n_parts=n_parts, feat_dim=feat_dim,
            samples_per_class=samples_per_class,
            concepts_per_cell=concepts_per_cell, noise_sigma=noise_sigma,
            min_separation=min_separation, seed=seed,
        )
        return generate_synthetic(spec)

    return make
