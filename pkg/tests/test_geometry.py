"""
Tests for farthest point sampling and ball query.
"""

import numpy as np
import pytest

from t3dnet.core.errors import ContractError, DimensionError
from t3dnet.nn.geometry import ball_query, batched_ball_query, batched_fps, farthest_point_sampling


def on_x_axis(*xs):
    return np.array([[x, 0.0, 0.0] for x in xs])


class TestFarthestPointSampling:

    def test_line_with_tie_to_lowest_index(self):
        pts = on_x_axis(*range(10))
        np.testing.assert_array_equal(farthest_point_sampling(pts, 3), [0, 9, 4])

    def test_start_index(self):
        pts = on_x_axis(*range(10))
        assert farthest_point_sampling(pts, 2, start_index=3)[1] == 9

    def test_picks_are_distinct(self):
        pts = np.random.default_rng(0).standard_normal((64, 3))
        picks = farthest_point_sampling(pts, 32)
        assert len(set(picks.tolist())) == 32

    def test_maximin_property(self):
        """Each pick is at least as far from earlier picks as any unpicked point."""
        pts = np.random.default_rng(1).standard_normal((40, 3))
        picks = farthest_point_sampling(pts, 6)
        for i in range(1, 6):
            chosen = pts[picks[:i]]
            d = np.min(np.linalg.norm(pts[:, None] - chosen[None], axis=-1), axis=1)
            assert d[picks[i]] == pytest.approx(d.max())

    def test_bounds(self):
        pts = on_x_axis(0, 1, 2)
        with pytest.raises(ContractError):
            farthest_point_sampling(pts, 4)
        with pytest.raises(ContractError):
            farthest_point_sampling(pts, 0)
        with pytest.raises(DimensionError):
            farthest_point_sampling(np.zeros((3, 2)), 1)

    def test_batched(self):
        xyz = np.stack([on_x_axis(*range(10)), on_x_axis(*range(9, -1, -1))])
        np.testing.assert_array_equal(batched_fps(xyz, 2), [[0, 9], [0, 9]])


class TestBallQuery:

    @pytest.fixture
    def points(self):
        return on_x_axis(0, 1, 2, 3, 10)

    def test_pads_with_first_neighbour(self, points):
        idx = ball_query(points, on_x_axis(0), radius=1.5, k=4)
        np.testing.assert_array_equal(idx, [[0, 1, 0, 0]])

    def test_ascending_and_truncated(self, points):
        idx = ball_query(points, on_x_axis(1.5), radius=2.0, k=3)
        np.testing.assert_array_equal(idx, [[0, 1, 2]])

    def test_empty_ball_uses_nearest(self, points):
        idx = ball_query(points, on_x_axis(6.0), radius=1.0, k=3)
        np.testing.assert_array_equal(idx, [[3, 3, 3]])

    def test_k_larger_than_cloud(self, points):
        idx = ball_query(points, on_x_axis(0), radius=100.0, k=8)
        np.testing.assert_array_equal(idx, [[0, 1, 2, 3, 4, 0, 0, 0]])

    def test_radius_is_inclusive(self, points):
        idx = ball_query(points, on_x_axis(0), radius=1.0, k=2)
        np.testing.assert_array_equal(idx, [[0, 1]])

    def test_invalid_arguments(self, points):
        with pytest.raises(ContractError):
            ball_query(points, on_x_axis(0), radius=0.0, k=2)
        with pytest.raises(ContractError):
            ball_query(points, on_x_axis(0), radius=1.0, k=0)

    def test_batched_shape(self):
        rng = np.random.default_rng(0)
        xyz = rng.standard_normal((2, 16, 3))
        centroids = xyz[:, :4]
        idx = batched_ball_query(xyz, centroids, 0.5, 5)
        assert idx.shape == (2, 4, 5)
        # every centroid is a member of its own ball
        assert np.all((idx == np.arange(4)[None, :, None]).any(axis=-1))
