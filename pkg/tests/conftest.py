import os
import tempfile

os.environ.setdefault("KEYFORGE_LOG_DIR", tempfile.mkdtemp(prefix="keyforge-logs-"))

import pytest

from keyforge.entity.config_entity import ForgeConfig, ScanConfig
from keyforge.component.artefact_scan import load_extract, scan_extract
from keyforge.component.fixture_forge import FixtureForge, load_manifest, manifest_plaintexts
from keyforge.component.stream_ingest import StreamIngest


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    """Run history and default fixture directories land in the test's tmp dir."""
    monkeypatch.chdir(tmp_path)
    for name in list(os.environ):
        if name.startswith("KEYFORGE_") and name not in ("KEYFORGE_LOG_DIR",):
            monkeypatch.delenv(name, raising=False)
    return tmp_path


def forge(tmp_path_factory, name: str, **fields):
    output_dir = str(tmp_path_factory.mktemp(name))
    return FixtureForge(ForgeConfig(output_dir=output_dir, **fields)).initiate_fixture_forge()


class Fixture:
    """A forged fixture with its scanned candidates and framed sessions."""

    def __init__(self, artifact):
        self.artifact = artifact
        self.manifest = load_manifest(artifact.manifest_path)
        self.plaintexts = manifest_plaintexts(self.manifest)
        self.candidates = scan_extract(load_extract(artifact.image_path), ScanConfig())
        self._framed = None

    @property
    def framed(self):
        if self._framed is None:
            self._framed, _ = StreamIngest().initiate_stream_ingest(self.artifact.capture_path)
        return self._framed


@pytest.fixture(scope="session")
def ssh_fixture(tmp_path_factory):
    return Fixture(forge(tmp_path_factory, "ssh", protocol="ssh", image_size=1 << 20, noise="mixed",
                         file_size=150, seed=7))


@pytest.fixture(scope="session")
def ssh_raw_fixture(tmp_path_factory):
    return Fixture(forge(tmp_path_factory, "ssh_raw", protocol="ssh", image_size=1 << 20, noise="mixed",
                         file_size=150, seed=7, capture_format="raw"))


@pytest.fixture(scope="session")
def tls_fixture(tmp_path_factory):
    return Fixture(forge(tmp_path_factory, "tls", protocol="tls", image_size=1 << 20, noise="text", seed=11))


@pytest.fixture(scope="session")
def forge_fixture(tmp_path_factory):
    def make(name: str, **fields):
        return Fixture(forge(tmp_path_factory, name, **fields))
    return make
