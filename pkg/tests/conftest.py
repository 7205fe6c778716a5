import pytest

from propfuse.manifest import load_manifest
from propfuse.synth import write_bundle

import _bundles


@pytest.fixture(scope="session")
def clean_dir(tmp_path_factory):
    """Manifest path of the zero-noise bundle, written once per session."""
    return write_bundle(_bundles.clean_bundle(), tmp_path_factory.mktemp("clean"))


@pytest.fixture(scope="session")
def occlusion_dir(tmp_path_factory):
    return write_bundle(_bundles.occlusion_bundle(), tmp_path_factory.mktemp("occ"))


@pytest.fixture(scope="session")
def type_b_dir(tmp_path_factory):
    return write_bundle(_bundles.type_b_bundle(), tmp_path_factory.mktemp("typeb"))


@pytest.fixture(scope="session")
def noisy_dir(tmp_path_factory):
    return write_bundle(_bundles.noisy_bundle(), tmp_path_factory.mktemp("noisy"))


@pytest.fixture()
def clean_manifest(clean_dir):
    return load_manifest(clean_dir)


@pytest.fixture()
def occlusion_manifest(occlusion_dir):
    return load_manifest(occlusion_dir)


@pytest.fixture()
def type_b_manifest(type_b_dir):
    return load_manifest(type_b_dir)


@pytest.fixture()
def noisy_manifest(noisy_dir):
    return load_manifest(noisy_dir)
