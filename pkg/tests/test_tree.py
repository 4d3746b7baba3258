import math

import numpy as np
import pytest

from conftest import make_tree
from himor.engine import predict_trajectories
from himor.errors import TreeError
from himor.se3 import SE3, se3_apply, se3_compose
from himor.tree import (BasisSet, MotionBasis, MotionTree, OrientedPoint, deform_point, freeze_levels,
                        knn_leaves, node_global_motion, node_local_motion, point_trajectory,
                        skinning_weights)


def constant_basis(T, transform):
    return MotionBasis([transform] * T)


def one_level(T, transforms, positions, radii=None, coefficients=None):
    tree = MotionTree.with_root(T)
    tree.basis_sets[0] = BasisSet(0, [constant_basis(T, tr) for tr in transforms])
    M = len(transforms)
    for k, p in enumerate(positions):
        c = np.eye(M)[k % M] if coefficients is None else coefficients[k]
        tree.add_node(0, p, 0.5 if radii is None else radii[k], c)
    return tree


class TestNodeMotion:
    def test_one_hot_picks_basis(self):
        tr = [SE3.from_translation(1, 2, 3), SE3.from_axis_angle([0, 0, 1], 0.4)]
        tree = one_level(2, tr, [[0, 0, 0], [1, 0, 0]])
        assert node_local_motion(tree, 1, 0).allclose(tr[0])
        assert node_local_motion(tree, 2, 1).allclose(tr[1])

    def test_identity_bases(self):
        tree = one_level(3, [SE3.identity()] * 2, [[0, 0, 0]], coefficients=[[0.3, -0.1]])
        assert node_local_motion(tree, 1, 2).allclose(SE3.identity())

    def test_translation_blend(self):
        tr = [SE3.from_translation(1, 0, 0), SE3.from_translation(0, 1, 0)]
        tree = one_level(1, tr, [[0, 0, 0]], coefficients=[[0.5, 0.5]])
        np.testing.assert_allclose(node_local_motion(tree, 1, 0).translation, [0.5, 0.5, 0])

    def test_root_and_first_level(self, two_level_tree):
        tree = two_level_tree
        assert node_global_motion(tree, 0, 3).allclose(SE3.identity())
        first = tree.nodes_at_level(1)[0]
        assert node_global_motion(tree, first, 3).allclose(node_local_motion(tree, first, 3))

    def test_chain_composition(self):
        tree = one_level(1, [SE3.from_axis_angle([0, 0, 1], math.pi / 2)], [[0, 0, 0]])
        tree.basis_sets[1] = BasisSet(1, [constant_basis(1, SE3.from_translation(1, 0, 0))])
        child = tree.add_node(1, [0, 0, 0], 0.5, [1.0])
        np.testing.assert_allclose(se3_apply(node_global_motion(tree, child, 0), [0, 0, 0]), [0, 1, 0],
                                   atol=1e-12)

    def test_global_matches_iterative_chain(self):
        for seed in range(20):
            tree = make_tree(seed, T=4)
            for nid in tree.leaves():
                for t in range(4):
                    acc = SE3.identity()
                    for a in tree.ancestors(nid):
                        acc = se3_compose(acc, node_local_motion(tree, a, t))
                    assert node_global_motion(tree, nid, t).allclose(acc)

    def test_coefficient_scaling(self, two_level_tree):
        tree = two_level_tree
        nid = tree.leaves()[0]
        before = node_local_motion(tree, nid, 2)
        tree.nodes[nid].coefficients = tree.nodes[nid].coefficients * 7.5
        assert node_local_motion(tree, nid, 2).allclose(before)


class TestSkinning:
    def test_point_on_leaf(self):
        tree = one_level(1, [SE3.identity()], [[0, 0, 0], [3, 0, 0]])
        assert skinning_weights([3, 0, 0], tree, 1) == [(2, 1.0)]

    def test_equidistant(self):
        tree = one_level(1, [SE3.identity()], [[-1, 0, 0], [1, 0, 0]])
        w = dict(skinning_weights([0, 0, 0], tree, 2))
        assert w[1] == pytest.approx(0.5, abs=1e-15)
        assert w[2] == pytest.approx(0.5, abs=1e-15)

    def test_gaussian_kernel_values(self):
        tree = one_level(1, [SE3.identity()], [[1, 0, 0], [-2, 0, 0]], radii=[0.5, 0.5])
        w = dict(skinning_weights([0, 0, 0], tree, 2))
        e1, e4 = math.exp(-1), math.exp(-4)
        assert w[1] == pytest.approx(e1 / (e1 + e4), abs=1e-12)
        assert w[2] == pytest.approx(e4 / (e1 + e4), abs=1e-12)
        assert w[1] == pytest.approx(0.9526, abs=1e-4)

    def test_underflow_gives_nearest(self):
        tree = one_level(1, [SE3.identity()], [[100, 0, 0], [200, 0, 0]], radii=[1e-3, 1e-3])
        assert skinning_weights([0, 0, 0], tree, 2) == [(1, 1.0), (2, 0.0)]

    def test_ties_break_by_id(self):
        tree = one_level(1, [SE3.identity()], [[1, 0, 0], [-1, 0, 0], [0, 1, 0]])
        assert knn_leaves(tree, [0, 0, 0], 2) == [1, 2]

    def test_k_clamped(self):
        tree = one_level(1, [SE3.identity()], [[1, 0, 0]])
        assert len(skinning_weights([0, 0, 0], tree, 4)) == 1

    def test_weights_form_partition_of_unity(self):
        rng = np.random.default_rng(0)
        tree = make_tree(3)
        for _ in range(50):
            w = np.array([x for _, x in skinning_weights(rng.normal(size=3), tree, 4)])
            assert abs(w.sum() - 1) < 1e-12
            assert np.all((w >= 0) & (w <= 1))


class TestDeform:
    def test_identity_leaf(self):
        tree = one_level(2, [SE3.identity()], [[0, 0, 0]])
        p = OrientedPoint([0.3, 0.2, 0.1])
        out = deform_point(tree, p, 1, 4)
        np.testing.assert_allclose(out.position, p.position)

    def test_translation_leaf(self):
        tree = one_level(2, [SE3.from_translation(1, 0, 0)], [[0, 0, 0]])
        q = np.array([0.9, 0.1, 0.3, -0.2])
        p = OrientedPoint([0.3, 0.2, 0.1], q)
        out = deform_point(tree, p, 0, 4)
        np.testing.assert_allclose(out.position, [1.3, 0.2, 0.1])
        np.testing.assert_allclose(out.orientation.as_array(), q / np.linalg.norm(q))

    def test_two_equidistant_translations(self):
        tr = [SE3.from_translation(1, 0, 0), SE3.from_translation(0, 1, 0)]
        tree = one_level(1, tr, [[-1, 0, 0], [1, 0, 0]])
        out = deform_point(tree, OrientedPoint([0, 0, 0]), 0, 2)
        np.testing.assert_allclose(out.position, [0.5, 0.5, 0], atol=1e-15)

    def test_canonical_frame_is_identity(self):
        tree = make_tree(4, T=5, canonical=2)
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = OrientedPoint(rng.normal(size=3))
            np.testing.assert_allclose(deform_point(tree, p, 2, 4).position, p.position, atol=1e-12)

    def test_engine_agrees_with_reference_evaluation(self):
        for seed in range(10):
            tree = make_tree(seed, T=5, canonical=seed % 5, identity_at_canonical=False)
            pts = np.random.default_rng(seed).normal(size=(6, 3))
            fast = predict_trajectories(tree, pts, K=3)
            slow = np.stack([point_trajectory(tree, OrientedPoint(p), 3) for p in pts])
            np.testing.assert_allclose(fast, slow, atol=1e-10)


class TestFreeze:
    def test_all_levels_active(self, two_level_tree):
        tree = two_level_tree
        pts = np.random.default_rng(0).normal(size=(10, 3))
        full = predict_trajectories(tree, pts)
        view = predict_trajectories(freeze_levels(tree, tree.levels()), pts)
        assert np.array_equal(full, view)

    def test_no_levels_active(self):
        tree = make_tree(5, T=6, canonical=3)
        pts = np.random.default_rng(1).normal(size=(10, 3))
        traj = predict_trajectories(freeze_levels(tree, []), pts)
        np.testing.assert_allclose(traj, np.repeat(pts[:, None], 6, axis=1), atol=1e-12)
        ref = point_trajectory(freeze_levels(tree, []), OrientedPoint(pts[0]), 4)
        np.testing.assert_allclose(ref, np.repeat(pts[:1], 6, axis=0), atol=1e-12)

    def test_view_shares_nodes(self, two_level_tree):
        view = freeze_levels(two_level_tree, [1])
        assert view.nodes is two_level_tree.nodes
        assert two_level_tree.active_levels is None


class TestValidate:
    def test_missing_basis_set(self, two_level_tree):
        parent = two_level_tree.nodes_at_level(1)[0]
        del two_level_tree.basis_sets[parent]
        with pytest.raises(TreeError):
            two_level_tree.validate()

    def test_coefficient_count(self, two_level_tree):
        leaf = two_level_tree.leaves()[0]
        two_level_tree.nodes[leaf].coefficients = np.ones(5)
        with pytest.raises(TreeError):
            two_level_tree.validate()

    def test_nonpositive_radius(self, two_level_tree):
        two_level_tree.nodes[two_level_tree.leaves()[0]].radius = 0.0
        with pytest.raises(TreeError):
            two_level_tree.validate()

    def test_basis_length(self, two_level_tree):
        two_level_tree.basis_sets[0].bases[0].transforms.pop()
        with pytest.raises(TreeError):
            two_level_tree.validate()

    def test_remove_parent_rejected(self, two_level_tree):
        with pytest.raises(TreeError):
            two_level_tree.remove_node(two_level_tree.nodes_at_level(1)[0])
