import shutil

import pytest

from fluxguide.data import ToyDataset, build_toy_dataset


def skyflux_available() -> bool:
    return shutil.which("skyflux") is not None


requires_skyflux = pytest.mark.skipif(
    not skyflux_available(), reason="skyflux CLI not installed")


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory) -> ToyDataset:
    """One shared toy dataset built through the skyflux CLI."""
    root = tmp_path_factory.mktemp("toyds")
    s_dir = build_toy_dataset(root, n_tiles=2, tile_size=256, patch=64,
                              scale=2, seed=5)
    ds = ToyDataset(s_dir, scale=2)
    assert len(ds) >= 24
    return ds
