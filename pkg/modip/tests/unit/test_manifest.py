import json

from modip.models.configs import ReconConfig
from modip.models.volume import GridSpec
from modip.services.manifest import (
    CONVENTIONS,
    Environment,
    Manifest,
    get_version,
    manifest_path_for,
    run_manifest,
)


class TestManifest:
    def test_records_environment(self):
        manifest = run_manifest("kernel")
        env = manifest.environment
        assert env.precision == "f64"
        assert env.threads == 1
        assert env.prng.startswith("PCG64")
        assert manifest.version == get_version()

    def test_read_back(self, tmp_path):
        manifest = run_manifest(
            "recon",
            ReconConfig(mode="dfo", max_iters=3),
            grid=GridSpec(matrix=(8, 8, 8), b0_dir=(0.5, 0.5, 0.71)),
            b0_raw=(0.5, 0.5, 0.71),
            inputs={"field": "phi.qvol"},
            results={"iterations": 3, "stop_reason": "max_iters"},
        )
        path = manifest.write(tmp_path / "out" / "manifest.json")
        assert Manifest.read(path) == manifest

    def test_json_layout(self, tmp_path):
        path = run_manifest("kernel", environment=Environment(threads=4)).write(
            tmp_path / "m.json"
        )
        data = json.loads(path.read_text())
        assert data["software"] == "modip"
        assert data["environment"]["threads"] == 4
        assert data["conventions"] == CONVENTIONS
        assert "laplacian" in data["conventions"]

    def test_version_comes_from_pyproject(self):
        assert get_version() == "1.0.0"


class TestManifestPath:
    def test_next_to_a_file(self, tmp_path):
        assert manifest_path_for(tmp_path / "kern.qvol") == tmp_path / "kern.manifest.json"

    def test_inside_a_directory(self, tmp_path):
        assert manifest_path_for(tmp_path / "run") == tmp_path / "run" / "manifest.json"
