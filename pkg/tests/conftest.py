"""Shared fixtures for the occrec test suite."""

import numpy as np
import pytest

from src.core.types import Dataset, PartFeatureSet
from src.synth.generator import SynthSpec, generate


def make_item(image_id, features, visibility=None, person_id=None, camera_id=None):
    features = np.asarray(features, dtype=np.float64)
    if visibility is None:
        visibility = np.ones(features.shape[0])
    return PartFeatureSet(image_id=image_id, features=features, visibility_scores=np.asarray(visibility, dtype=float),
                          person_id=person_id, camera_id=camera_id)


def random_items(rng, count, parts=3, dim=6, visible_rate=0.7, prefix="g", num_ids=None):
    items = []
    for i in range(count):
        mask = rng.random(parts) < visible_rate
        if not mask.any():
            mask[rng.integers(parts)] = True
        items.append(make_item(f"{prefix}{i:03d}", rng.normal(size=(parts, dim)), np.where(mask, 0.9, 0.1),
                               person_id=None if num_ids is None else int(rng.integers(num_ids))))
    return items


@pytest.fixture
def small_synth():
    """A small benchmark: 6 train identities, 6 test identities"""
    spec = SynthSpec(num_identities=12, images_per_identity=8, D=8, D_raw=10, M=3, queries_per_identity=2, seed=1)
    return generate(spec)


@pytest.fixture
def tiny_dataset():
    items = [
        make_item("a", [[1.0, 0.0], [0.0, 1.0]], person_id=1, camera_id=0),
        make_item("b", [[0.0, 2.0], [3.0, 0.0]], [1.0, 0.2], person_id=2, camera_id=1),
    ]
    return Dataset.from_items(items, split="gallery")
