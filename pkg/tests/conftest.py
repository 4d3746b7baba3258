import numpy as np
import pytest

from himor.cluster import farthest_point_sampling, knn_median_radius
from himor.config import FitConfig
from himor.initialize import bases_from_clusters
from himor.se3 import SE3
from himor.synthetic import gen_synthetic, pendulum_cart_scene
from himor.tree import BasisSet, MotionBasis, MotionTree


def random_basis(rng, T, canonical=None, rot_scale=0.6, trans_scale=0.5):
    frames = []
    for t in range(T):
        if t == canonical:
            frames.append(SE3.identity())
            continue
        axis = rng.normal(size=3)
        frames.append(SE3.from_axis_angle(axis / np.linalg.norm(axis), rng.normal(scale=rot_scale),
                                          rng.normal(scale=trans_scale, size=3)))
    return MotionBasis(frames)


def make_tree(seed=0, T=6, canonical=0, n1=4, per_parent=3, M=2, identity_at_canonical=True):
    """Two-level random tree; every level-1 node owns a basis set with ``per_parent`` children."""
    rng = np.random.default_rng(seed)
    can = canonical if identity_at_canonical else None
    tree = MotionTree.with_root(T, canonical)
    tree.basis_sets[0] = BasisSet(0, [random_basis(rng, T, can) for _ in range(M)])
    first = [tree.add_node(0, rng.uniform(-1, 1, 3), rng.uniform(0.3, 1.0), rng.uniform(0.2, 1.0, M))
             for _ in range(n1)]
    if per_parent:
        for p in first:
            tree.basis_sets[p] = BasisSet(p, [random_basis(rng, T, can, 0.3, 0.2) for _ in range(M)])
            for _ in range(per_parent):
                tree.add_node(p, tree.nodes[p].position + rng.normal(scale=0.3, size=3),
                              rng.uniform(0.3, 1.0), rng.uniform(0.2, 1.0, M))
    tree.validate()
    return tree


@pytest.fixture
def two_level_tree():
    return make_tree()


def spinning_blob_scene(seed=0, T=5, core=70, blob=30):
    """
    One first-level node at the origin spinning about z (up to 2 rad), a tight
    core of points around it and a small blob three units away. Every node
    shares one rigid motion, so the curve distance between a point and a node
    is simply their canonical separation.
    """
    rng = np.random.default_rng(seed)
    tree = MotionTree.with_root(T, 0)
    tree.basis_sets[0] = BasisSet(0, [MotionBasis([SE3.from_axis_angle([0, 0, 1], 0.5 * t) for t in range(T)])])
    tree.add_node(0, [0, 0, 0], 0.5, [1.0])

    def ball(n, r, centre):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return centre + d * r * rng.uniform(0, 1, (n, 1)) ** (1 / 3)

    points = np.concatenate([ball(core, 0.05, [0, 0, 0]), ball(blob, 0.04, [3, 0, 0])])
    return tree, points


# -- the fits used by the acceptance scenes ------------------------------------

def rigid_body_config():
    """One level, one basis, 50 nodes, every other setting at its default."""
    return FitConfig(num_bases=1, num_nodes=50, max_levels=1)


def hierarchy_arms(seed, steps=(250, 250)):
    """Two-level and flat configurations with the same node and basis budget."""
    n1, m1, per_node, child_m = 4, 2, 5, 2
    common = dict(densify_every=10 ** 9, seed=seed)
    two = FitConfig(num_nodes=n1, num_bases=m1, children_per_node=per_node, child_bases=child_m,
                    stage1_steps=steps[0], stage2_steps=steps[1], **common)
    flat = FitConfig(num_nodes=n1 + n1 * per_node, num_bases=m1 + n1 * child_m, max_levels=1,
                     stage1_steps=sum(steps), stage2_steps=0, **common)
    return two, flat


def pendulum_setup(steps=300):
    """
    Pendulum-on-cart tracks plus a first level carrying the cart's rigid motion
    (solved from the cart tracks) and a config that trains only the second
    level on top of it.
    """
    tracks, truth = gen_synthetic(pendulum_cart_scene(), 0)
    c = 0
    cart = np.nonzero(truth.labels == truth.link_names.index("cart"))[0]
    tree = MotionTree.with_root(tracks.frame_count, c)
    tree.basis_sets[0] = BasisSet(0, bases_from_clusters(tracks.subset(cart), np.zeros(len(cart), int), c).bases)
    pts = tracks.positions[:, c]
    chosen = pts[farthest_point_sampling(pts, 20, 0)]
    for p, r in zip(chosen, knn_median_radius(chosen, 3)):
        tree.add_node(0, p, r, [1.0])
    cfg = FitConfig(children_per_node=5, child_bases=3, stage1_steps=0, stage2_steps=steps, stage2_levels=[2])
    return tracks, truth, tree, cfg


_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Print and remember one pass/fail line for an acceptance criterion."""
    def _record(number, title, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        print(line)
        _ACCEPTANCE_LINES.append((number, line))
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
