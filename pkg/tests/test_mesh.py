"""
Tests for OFF parsing, surface sampling, directory ingestion and the
mesh-sample cache.
"""

import sqlite3
from pathlib import Path

import numpy as np
import pytest

from t3dnet.core.errors import ConfigError, GeometryError, ParseError
from t3dnet.models.internal import TriMesh
from t3dnet.services.mesh_cache import MeshSampleCache, content_hash, get_mesh_cache
from t3dnet.services.mesh_service import (
    discover_off_tree,
    ingest_off_tree,
    load_cloud,
    parse_off,
    sample_mesh,
    sample_seed,
)

CUBE_OFF = """OFF
8 6 0
-1 -1 -1
1 -1 -1
1 1 -1
-1 1 -1
-1 -1 1
1 -1 1
1 1 1
-1 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 4 7 3
"""

TETRA_OFF = """OFF
# regular tetrahedron
4 4 6
1 1 1
1 -1 -1
-1 1 -1
-1 -1 1
3 0 1 2
3 0 1 3
3 0 2 3
3 1 2 3 255 0 0
"""


def write_tree(root: Path) -> Path:
    for cls, text in (("cube", CUBE_OFF), ("tetra", TETRA_OFF)):
        for split, count in (("train", 2), ("test", 1)):
            folder = root / cls / split
            folder.mkdir(parents=True)
            for i in range(count):
                (folder / f"{cls}_{i:03d}.off").write_text(text, encoding="utf-8")
    return root


# ============================================================================
# Parsing
# ============================================================================

class TestParseOff:

    def test_cube_quads_are_fan_triangulated(self):
        mesh = parse_off(CUBE_OFF)
        assert mesh.vertices.shape == (8, 3)
        assert mesh.faces.shape == (12, 3)
        assert mesh.areas().sum() == pytest.approx(24.0)

    def test_comments_and_extra_face_tokens(self):
        mesh = parse_off(TETRA_OFF.encode("utf-8"))
        assert mesh.faces.shape == (4, 3)

    def test_header_glued_to_counts(self):
        text = CUBE_OFF.replace("OFF\n8 6 0", "OFF8 6 0")
        assert parse_off(text).faces.shape == (12, 3)

    def test_header_optional(self):
        assert parse_off(CUBE_OFF.replace("OFF\n", "", 1)).vertices.shape == (8, 3)

    def test_index_out_of_range_reports_line(self):
        bad = CUBE_OFF.replace("4 0 4 7 3", "4 0 4 7 9")
        with pytest.raises(ParseError) as info:
            parse_off(bad, source="bad.off")
        assert info.value.line == 16
        assert "bad.off" in str(info.value)

    def test_non_numeric_vertex(self):
        bad = CUBE_OFF.replace("1 1 -1\n", "1 x -1\n", 1)
        with pytest.raises(ParseError) as info:
            parse_off(bad)
        assert info.value.line == 5

    def test_truncated_file(self):
        truncated = "\n".join(CUBE_OFF.splitlines()[:12])
        with pytest.raises(ParseError):
            parse_off(truncated)

    def test_degenerate_polygon(self):
        bad = CUBE_OFF.replace("4 0 4 7 3", "2 0 4")
        with pytest.raises(ParseError):
            parse_off(bad)

    def test_empty(self):
        with pytest.raises(ParseError):
            parse_off("")


# ============================================================================
# Sampling
# ============================================================================

class TestSampleMesh:

    def test_cube_samples_lie_on_surface(self):
        pts = sample_mesh(parse_off(CUBE_OFF), 500, seed=0)
        assert pts.shape == (500, 3)
        np.testing.assert_allclose(np.abs(pts).max(axis=1), 1.0, atol=1e-9)
        assert np.all(np.abs(pts) <= 1.0 + 1e-9)

    def test_area_weighted(self):
        """Triangle of area 3 receives about three times the samples of one of area 1."""
        vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [10, 0, 0], [13, 0, 0], [10, 2, 0]], dtype=float)
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        pts = sample_mesh(TriMesh(vertices=vertices, faces=faces), 8000, seed=1)
        share = float(np.mean(pts[:, 0] >= 10.0))
        assert share == pytest.approx(0.75, abs=0.03)

    def test_deterministic_in_seed(self):
        mesh = parse_off(TETRA_OFF)
        np.testing.assert_array_equal(sample_mesh(mesh, 64, 5), sample_mesh(mesh, 64, 5))

    def test_zero_area_mesh(self):
        mesh = TriMesh(vertices=np.zeros((3, 3)), faces=np.array([[0, 1, 2]]))
        with pytest.raises(GeometryError):
            sample_mesh(mesh, 10, 0)

    def test_sample_seed_is_stable(self):
        assert sample_seed(0, "train", 1, 2) == sample_seed(0, "train", 1, 2)
        assert sample_seed(0, "train", 1, 2) != sample_seed(0, "test", 1, 2)


# ============================================================================
# Directory ingestion
# ============================================================================

class TestIngestOffTree:

    def test_discover(self, tmp_path):
        root = write_tree(tmp_path / "meshes")
        classes, files = discover_off_tree(root)
        assert classes == ["cube", "tetra"]
        assert [c for c, _ in files["train"]] == [0, 0, 1, 1]
        assert [c for c, _ in files["test"]] == [0, 1]

    def test_ingest(self, tmp_path):
        root = write_tree(tmp_path / "meshes")
        ds = ingest_off_tree(root, points_per_cloud=32, seed=0, use_cache=False)
        assert ds.name == "meshes"
        assert ds.train.points.shape == (4, 32, 3)
        assert ds.test.points.shape == (2, 32, 3)
        np.testing.assert_array_equal(ds.train.labels, [0, 0, 1, 1])
        radii = np.linalg.norm(ds.train.points, axis=-1).max(axis=1)
        np.testing.assert_allclose(radii, 1.0, atol=1e-5)

    def test_identical_files_get_distinct_samples(self, tmp_path):
        root = write_tree(tmp_path / "meshes")
        ds = ingest_off_tree(root, points_per_cloud=32, seed=0, use_cache=False)
        assert not np.array_equal(ds.train.points[0], ds.train.points[1])

    def test_cache_does_not_change_content(self, tmp_path):
        root = write_tree(tmp_path / "meshes")
        plain = ingest_off_tree(root, points_per_cloud=32, seed=0, use_cache=False)
        first = ingest_off_tree(root, points_per_cloud=32, seed=0)
        second = ingest_off_tree(root, points_per_cloud=32, seed=0)
        np.testing.assert_array_equal(plain.train.points, first.train.points)
        np.testing.assert_array_equal(first.train.points, second.train.points)
        assert get_mesh_cache().stats()["entries"] == 6

    def test_parse_error_names_file(self, tmp_path):
        root = write_tree(tmp_path / "meshes")
        broken = root / "cube" / "train" / "cube_000.off"
        broken.write_text(CUBE_OFF.replace("4 0 4 7 3", "4 0 4 7 9"), encoding="utf-8")
        with pytest.raises(ParseError) as info:
            ingest_off_tree(root, points_per_cloud=32, seed=0, use_cache=False)
        assert "cube_000.off" in str(info.value)

    def test_needs_two_classes(self, tmp_path):
        root = tmp_path / "one"
        (root / "cube" / "train").mkdir(parents=True)
        (root / "cube" / "train" / "a.off").write_text(CUBE_OFF, encoding="utf-8")
        with pytest.raises(ConfigError):
            ingest_off_tree(root, points_per_cloud=32, seed=0, use_cache=False)

    def test_missing_root(self, tmp_path):
        with pytest.raises(ConfigError):
            discover_off_tree(tmp_path / "nowhere")


# ============================================================================
# Mesh-sample cache
# ============================================================================

class TestMeshSampleCache:

    @pytest.fixture
    def cache(self, tmp_path):
        MeshSampleCache.reset()
        yield MeshSampleCache(cache_dir=tmp_path / "cache", max_size_mb=1, enabled=True)
        MeshSampleCache.reset()

    def test_singleton(self, cache):
        assert MeshSampleCache() is cache

    def test_put_get(self, cache):
        cloud = np.random.default_rng(0).standard_normal((16, 3)).astype(np.float32)
        assert cache.put("abc", 16, 1, cloud)
        np.testing.assert_array_equal(cache.get("abc", 16, 1), cloud)
        assert cache.get("abc", 16, 2) is None
        assert cache.get("abc", 32, 1) is None

    def test_lru_eviction(self, cache):
        cloud = np.zeros((16, 3), dtype=np.float32)
        cache.put("a", 16, 0, cloud)
        entry = cache.stats()["bytes"]
        cache.max_nbytes = int(entry * 2.5)
        cache.put("b", 16, 0, cloud)
        assert cache.get("a", 16, 0) is not None  # a is now the most recent
        cache.put("c", 16, 0, cloud)
        assert cache.get("b", 16, 0) is None
        assert cache.get("a", 16, 0) is not None
        assert cache.get("c", 16, 0) is not None

    def test_connections_are_closed(self, cache, monkeypatch):
        opened = []
        connect = sqlite3.connect

        def tracking_connect(*args, **kwargs):
            conn = connect(*args, **kwargs)
            opened.append(conn)
            return conn

        monkeypatch.setattr(sqlite3, "connect", tracking_connect)
        cloud = np.zeros((16, 3), dtype=np.float32)
        cache.put("a", 16, 0, cloud)
        cache.get("a", 16, 0)
        cache.get("missing", 16, 0)
        cache.stats()
        cache.clear()
        assert opened
        for conn in opened:
            with pytest.raises(sqlite3.ProgrammingError):
                conn.execute("SELECT 1")

    def test_clear(self, cache):
        cache.put("a", 16, 0, np.zeros((16, 3), dtype=np.float32))
        assert cache.clear() == 1
        assert cache.stats()["entries"] == 0

    def test_disabled(self, tmp_path):
        MeshSampleCache.reset()
        disabled = MeshSampleCache(cache_dir=tmp_path / "off", enabled=False)
        assert not disabled.put("a", 16, 0, np.zeros((16, 3), dtype=np.float32))
        assert disabled.get("a", 16, 0) is None
        assert not (tmp_path / "off").exists()
        MeshSampleCache.reset()

    def test_load_cloud_uses_content_hash(self, cache, tmp_path):
        a = tmp_path / "a.off"
        b = tmp_path / "renamed.off"
        a.write_text(TETRA_OFF, encoding="utf-8")
        b.write_text(TETRA_OFF, encoding="utf-8")
        first = load_cloud(a, 32, 9, cache)
        second = load_cloud(b, 32, 9, cache)
        np.testing.assert_array_equal(first, second)
        assert cache.stats()["entries"] == 1
        assert content_hash(a.read_bytes()) == content_hash(b.read_bytes())
