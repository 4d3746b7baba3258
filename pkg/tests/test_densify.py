import math

import numpy as np
import pytest

from conftest import make_tree, spinning_blob_scene
from himor.densify import (coverage_distances, curve_distance, default_threshold, densify_by_curve_distance,
                           refine_by_gradient)
from himor.errors import ShapeMismatch


class TestCurveDistance:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=(4, 3))
        assert curve_distance(a, a) == 0.0

    def test_offset(self):
        a = np.random.default_rng(0).normal(size=(4, 3))
        assert curve_distance(a, a + [1, 0, 0]) == pytest.approx(1.0, abs=1e-15)

    def test_max_over_time(self):
        assert curve_distance([[0, 0, 0], [1, 0, 0], [2, 0, 0]], np.zeros((3, 3))) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            curve_distance(np.zeros((3, 3)), np.zeros((2, 3)))


class TestCurveDensify:
    def test_rigid_scene_distance_is_separation(self):
        tree, pts = spinning_blob_scene()
        np.testing.assert_allclose(coverage_distances(tree, pts), np.linalg.norm(pts, axis=1), atol=1e-12)

    def test_blob_gets_node(self):
        tree, pts = spinning_blob_scene()
        out = densify_by_curve_distance(tree, pts, seed=0)
        blob = pts[70:]
        lo, hi = blob.min(0), blob.max(0)
        new = [out.nodes[i].position for i in out.leaves() if i not in tree.nodes]
        assert len(new) == math.ceil(30 / 20)
        assert all(np.all((p >= lo) & (p <= hi)) for p in new)
        for i in out.leaves():
            if i not in tree.nodes:
                assert out.nodes[i].parent_id == 0
                np.testing.assert_array_equal(out.nodes[i].coefficients, [1.0])

    def test_candidates_strictly_fewer(self):
        tree, pts = spinning_blob_scene(seed=3)
        thr = default_threshold(pts)
        before = int((coverage_distances(tree, pts) > thr).sum())
        after = int((coverage_distances(densify_by_curve_distance(tree, pts, threshold=thr), pts) > thr).sum())
        assert before == 30 and after < before

    def test_covered_scene_unchanged(self):
        tree, pts = spinning_blob_scene(blob=0)
        out = densify_by_curve_distance(tree, pts, threshold=0.1)
        assert sorted(out.nodes) == sorted(tree.nodes)

    def test_infinite_threshold(self):
        tree, pts = spinning_blob_scene()
        assert sorted(densify_by_curve_distance(tree, pts, threshold=math.inf).nodes) == sorted(tree.nodes)

    def test_bad_threshold(self):
        tree, pts = spinning_blob_scene()
        with pytest.raises(ValueError):
            densify_by_curve_distance(tree, pts, threshold=0.0)

    def test_deterministic(self):
        tree, pts = spinning_blob_scene(seed=1, blob=60)
        a = densify_by_curve_distance(tree, pts, seed=4)
        b = densify_by_curve_distance(tree, pts, seed=4)
        assert [a.nodes[i].position.tolist() for i in sorted(a.nodes)] == \
               [b.nodes[i].position.tolist() for i in sorted(b.nodes)]


class TestRefine:
    def stats(self, tree, value):
        return {leaf: value for leaf in tree.leaves()}

    def test_between_thresholds(self, two_level_tree):
        out = refine_by_gradient(two_level_tree, self.stats(two_level_tree, 0.5), 1.0, 0.1)
        assert sorted(out.nodes) == sorted(two_level_tree.nodes)

    def test_split_one_leaf(self, two_level_tree):
        tree = two_level_tree
        leaf = tree.leaves()[0]
        stats = self.stats(tree, 0.5)
        stats[leaf] = 2.0
        pts = np.stack([tree.nodes[leaf].position + d for d in ([0.001, 0, 0], [-0.001, 0.002, 0])])
        out = refine_by_gradient(tree, stats, 1.0, 0.1, pts)
        new = [i for i in out.nodes if i not in tree.nodes]
        assert len(new) == 1
        assert out.nodes[new[0]].parent_id == tree.nodes[leaf].parent_id
        np.testing.assert_allclose(out.nodes[new[0]].position, pts.mean(0))

    def test_prune_keeps_last_child(self, two_level_tree):
        out = refine_by_gradient(two_level_tree, self.stats(two_level_tree, 0.0), 1.0, 0.1)
        for p in out.nodes_at_level(1):
            assert len(out.children(p)) >= 1
        assert len(out.nodes) < len(two_level_tree.nodes)

    def test_missing_stats(self, two_level_tree):
        with pytest.raises(ValueError):
            refine_by_gradient(two_level_tree, {}, 1.0, 0.1)


def test_refine_never_breaks_tree():
    rng = np.random.default_rng(0)
    for seed in range(10):
        tree = make_tree(seed)
        stats = {leaf: float(rng.choice([0.0, 0.5, 2.0])) for leaf in tree.leaves()}
        refine_by_gradient(tree, stats, 1.0, 0.1, rng.normal(size=(20, 3))).validate()
