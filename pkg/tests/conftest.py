import numpy as np
import pytest

import needlesim as ns


@pytest.fixture(scope="session")
def data_root(tmp_path_factory):
    """Small on-disk data root: head volume, landmarks, layered model."""
    root = tmp_path_factory.mktemp("data")
    ns.write_data_root(root, n=48)
    return root


@pytest.fixture(scope="session")
def head48(data_root):
    return ns.load_nrrd(data_root / "volumes" / "head.nrrd")


@pytest.fixture(scope="session")
def warmed():
    """Compile the ray-casting kernels once per test session."""
    ns.warm_kernels()
    return True
