import shutil
from pathlib import Path

import numpy as np
import pytest

from garmentspace.datagen import generate, load_dataset
from garmentspace.mannequin import BodyShape, build_mannequin
from garmentspace.patterns import GarmentParams, GarmentType, build_pattern_mesh, instantiate_pattern

CACHE = Path(__file__).parent / "_cache"


def cached_dataset(name: str, gtype: GarmentType, n: int, seed: int, **kw):
    """Generate-once dataset shared across test sessions (delete tests/_cache
    to force regeneration)."""
    path = CACHE / name
    if (path / "manifest.json").exists():
        try:
            ds = load_dataset(path)
            if ds.n == n:
                return ds
        except Exception:
            pass
        shutil.rmtree(path)
    return generate(gtype, n, seed, path, **kw)


@pytest.fixture(scope="session")
def default_body():
    return BodyShape.default()


@pytest.fixture(scope="session")
def default_mannequin(default_body):
    return build_mannequin(default_body)


@pytest.fixture(scope="session")
def canonical_skirt_mesh(default_body):
    g = GarmentParams(np.full(11, 0.5), np.full(3, 0.5))
    panels = instantiate_pattern(GarmentType.SKIRT, g, default_body)
    return build_pattern_mesh(panels, target_edge=0.035, seed=0)


@pytest.fixture(scope="session")
def canonical_skirt_params():
    return GarmentParams(np.full(11, 0.5), np.full(3, 0.5))


@pytest.fixture(scope="session")
def skirt_ds48():
    """48-sample skirt corpus for module-level measured examples."""
    return cached_dataset("skirt48", GarmentType.SKIRT, 48, seed=11, pca_k=32)
