import numpy as np
import pytest

from sdcomp import diffgraph as dg
from sdcomp import geometry as geo
from sdcomp.losses import (
    EmptyMask,
    FrameTriplet,
    LossWeights,
    PoseNodes,
    PosePair,
    photometric_loss,
    pose_consistency_loss,
    reconstruct,
    smoothness_loss,
    sparse_depth_loss,
    total_loss,
)
from sdcomp.scaffold import SparseDepthMap
from gradsuite import LOSS_CASES, _smooth_image, _test_triplet, run_loss_case

RNG = np.random.default_rng(41)

K8 = geo.CameraIntrinsics(fx=8.0, fy=8.0, cx=3.5, cy=3.5, width=8, height=8)


def identity_pose_nodes():
    return PoseNodes.from_pose(geo.Pose.identity())


def bilinear_zero_fill(img, u, v):
    """Reference sampler: channel-last gather with zero outside."""
    c, h, w = img.shape
    out = np.zeros(c)
    if u < 0 or u > w - 1 or v < 0 or v > h - 1:
        return out
    x0, y0 = min(int(np.floor(u)), w - 2), min(int(np.floor(v)), h - 2)
    fu, fv = u - x0, v - y0
    return (
        (1 - fv) * ((1 - fu) * img[:, y0, x0] + fu * img[:, y0, x0 + 1])
        + fv * ((1 - fu) * img[:, y0 + 1, x0] + fu * img[:, y0 + 1, x0 + 1])
    )


class TestReconstruct:
    def test_identity_pose_reproduces_image(self):
        img = _smooth_image(RNG)
        depth = dg.constant(RNG.uniform(1.0, 5.0, (1, 1, 8, 8)))
        warped, mask = reconstruct(dg.constant(img[None]), depth, identity_pose_nodes(), K8)
        assert np.all(mask.value == 1.0)
        assert np.max(np.abs(warped.value[0] - img)) < 1e-9

    def test_fronto_parallel_translation_is_uniform_shift(self):
        # Plane at depth d with camera translation t along x shifts every
        # reprojection by exactly fx * t / d pixels.
        img = _smooth_image(RNG)
        d, tx = 2.0, 0.45
        shift = K8.fx * tx / d
        pose = PoseNodes.from_pose(geo.Pose(geo.Rotation.identity(), np.array([tx, 0, 0])))
        depth = dg.constant(np.full((1, 1, 8, 8), d))
        warped, mask = reconstruct(dg.constant(img[None]), depth, pose, K8)
        for v in range(8):
            for u in range(8):
                expected = bilinear_zero_fill(img, u + shift, v)
                in_bounds = u + shift <= 7 + 1e-9
                assert mask.value[0, 0, v, u] == (1.0 if in_bounds else 0.0)
                if in_bounds:
                    assert np.allclose(warped.value[0, :, v, u], expected, atol=1e-9)

    def test_camera_behind_scene_masks_everything(self):
        img = _smooth_image(RNG)
        pose = PoseNodes.from_pose(
            geo.Pose(geo.Rotation.identity(), np.array([0.0, 0.0, -10.0]))
        )
        depth = dg.constant(np.full((1, 1, 8, 8), 2.0))
        _, mask = reconstruct(dg.constant(img[None]), depth, pose, K8)
        assert np.all(mask.value == 0.0)


class TestPhotometricLoss:
    def test_identity_poses_give_zero(self):
        # Static camera: all frames identical, so the identity warp is a
        # self-reconstruction and both residual terms vanish.
        img = _smooth_image(RNG)
        base = _test_triplet(RNG)
        triplet = FrameTriplet(img, img, img, base.sparse, base.intrinsics)
        depth = dg.constant(RNG.uniform(0.5, 8.0, (1, 1, 8, 8)))
        poses = {"prev": identity_pose_nodes(), "next": identity_pose_nodes()}
        loss = photometric_loss(triplet, depth, poses, LossWeights())
        assert float(loss.value) == pytest.approx(0.0, abs=1e-9)

    def test_empty_mask_raises(self):
        triplet = _test_triplet(RNG)
        depth = dg.constant(np.full((1, 1, 8, 8), 2.0))
        behind = PoseNodes.from_pose(
            geo.Pose(geo.Rotation.identity(), np.array([0.0, 0.0, -10.0]))
        )
        with pytest.raises(EmptyMask):
            photometric_loss(triplet, depth, {"prev": behind}, LossWeights())

    def test_neighbor_order_symmetry(self):
        triplet = _test_triplet(RNG)
        depth = dg.constant(RNG.uniform(1.5, 2.5, (1, 1, 8, 8)))
        shift = PoseNodes.from_pose(
            geo.Pose(geo.Rotation.identity(), np.array([0.05, 0.0, 0.0]))
        )
        a = photometric_loss(
            triplet, depth, {"prev": shift, "next": identity_pose_nodes()}, LossWeights()
        )
        b = photometric_loss(
            triplet, depth, {"next": identity_pose_nodes(), "prev": shift}, LossWeights()
        )
        assert float(a.value) == float(b.value)

    def test_non_negative(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            triplet = _test_triplet(rng)
            depth = dg.constant(rng.uniform(1.0, 4.0, (1, 1, 8, 8)))
            pose = PoseNodes(
                dg.exp_map_layer(dg.constant(rng.uniform(-0.05, 0.05, 3))),
                dg.constant(rng.uniform(-0.05, 0.05, 3)),
            )
            loss = photometric_loss(triplet, depth, {"prev": pose}, LossWeights())
            assert float(loss.value) >= 0.0


class TestSparseDepthLoss:
    def test_exact_match_is_zero(self):
        zs = SparseDepthMap(8, 8, [(1, 2, 2.0), (5, 5, 3.0)])
        depth = np.full((1, 1, 8, 8), 9.9)
        depth[0, 0, 2, 1] = 2.0
        depth[0, 0, 5, 5] = 3.0
        loss = sparse_depth_loss(dg.constant(depth), zs)
        assert float(loss.value) == 0.0

    def test_constant_offset(self):
        zs = SparseDepthMap(8, 8, [(1, 2, 2.0), (5, 5, 3.0), (7, 0, 1.0)])
        depth = np.zeros((1, 1, 8, 8))
        for u, v, z in zs.points:
            depth[0, 0, int(v), int(u)] = z + 0.5
        loss = sparse_depth_loss(dg.constant(np.maximum(depth, 0.1)), zs)
        assert float(loss.value) == pytest.approx(0.5)

    def test_matches_loop_oracle(self):
        zs_points = [(int(u), int(v), float(z)) for u, v, z in
                     zip(RNG.integers(0, 8, 10), RNG.integers(0, 8, 10), RNG.uniform(1, 5, 10))]
        zs = SparseDepthMap(8, 8, zs_points)
        depth = RNG.uniform(0.5, 6.0, (1, 1, 8, 8))
        loss = sparse_depth_loss(dg.constant(depth), zs)
        expected = np.mean(
            [abs(depth[0, 0, int(v), int(u)] - z) for u, v, z in zs.points]
        )
        assert float(loss.value) == pytest.approx(expected, rel=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            sparse_depth_loss(
                dg.constant(np.ones((1, 1, 8, 8))), SparseDepthMap(8, 8, np.empty((0, 3)))
            )


class TestPoseConsistencyLoss:
    def test_exact_inverse_is_zero(self):
        g = geo.exp_se3(geo.Twist(np.array([0.3, -0.2, 0.4]), np.array([1.0, 0.5, -0.2])))
        loss = pose_consistency_loss(
            PoseNodes.from_pose(g), PoseNodes.from_pose(geo.inverse(g))
        )
        assert float(loss.value) < 1e-28

    def test_identities_give_zero(self):
        loss = pose_consistency_loss(identity_pose_nodes(), identity_pose_nodes())
        assert float(loss.value) == 0.0

    def test_pure_translation_composition(self):
        # Composed pose = translation by 0.1 => squared twist norm 0.01.
        fwd = PoseNodes.from_pose(
            geo.Pose(geo.Rotation.identity(), np.array([0.0, 0.0, 0.1]))
        )
        loss = pose_consistency_loss(fwd, identity_pose_nodes())
        assert float(loss.value) == pytest.approx(0.01, rel=1e-12)

    def test_rotation_only_toggle(self):
        fwd = PoseNodes.from_pose(
            geo.Pose(geo.Rotation.identity(), np.array([0.0, 0.0, 0.1]))
        )
        loss = pose_consistency_loss(fwd, identity_pose_nodes(), rotation_only=True)
        assert float(loss.value) == pytest.approx(0.0, abs=1e-20)


class TestSmoothnessLoss:
    def test_constant_depth_is_zero(self):
        image = _smooth_image(RNG)
        loss = smoothness_loss(dg.constant(np.full((1, 1, 8, 8), 2.0)), image)
        assert float(loss.value) == 0.0

    def test_unit_ramp_on_flat_image(self):
        # d z / d x = 1 with lambda = 1 everywhere: H*(W-1) unit terms
        # normalized by H*W, the fraction of pixels with a forward diff.
        depth = np.tile(np.arange(8.0) + 1.0, (8, 1))[None, None]
        image = np.full((3, 8, 8), 0.5)
        loss = smoothness_loss(dg.constant(depth), image)
        assert float(loss.value) == pytest.approx(7.0 / 8.0, rel=1e-12)

    def test_image_edge_discounts_depth_step(self):
        depth = np.ones((1, 1, 8, 8))
        depth[:, :, :, 4:] = 2.0
        flat = np.full((3, 8, 8), 0.5)
        edged = flat.copy()
        edged[:, :, 4:] = 0.9  # intensity step co-located with the depth step
        loss_flat = float(smoothness_loss(dg.constant(depth), flat).value)
        loss_edge = float(smoothness_loss(dg.constant(depth), edged).value)
        assert loss_edge < loss_flat


class TestTotalLoss:
    def _poses(self, rng, with_backward=True):
        out = {}
        for tau in ("prev", "next"):
            fwd = PoseNodes(
                dg.exp_map_layer(dg.constant(rng.uniform(-0.02, 0.02, 3))),
                dg.constant(rng.uniform(-0.02, 0.02, 3)),
            )
            bwd = None
            if with_backward:
                bwd = PoseNodes(
                    dg.exp_map_layer(dg.constant(rng.uniform(-0.02, 0.02, 3))),
                    dg.constant(rng.uniform(-0.02, 0.02, 3)),
                )
            out[tau] = PosePair(fwd, bwd)
        return out

    def test_zero_weights_give_zero(self):
        triplet = _test_triplet(RNG)
        depth = dg.constant(np.full((1, 1, 8, 8), 2.0))
        weights = LossWeights(w_ph=0, w_co=0, w_st=0, w_sz=0, w_pc=0, w_sm=0)
        loss = total_loss(triplet, depth, self._poses(RNG), weights)
        assert float(loss.value) == 0.0

    def test_photometric_only(self):
        rng = np.random.default_rng(3)
        triplet = _test_triplet(rng)
        depth = dg.constant(rng.uniform(1.8, 2.2, (1, 1, 8, 8)))
        poses = self._poses(rng)
        weights = LossWeights(w_ph=1.0, w_co=0.2, w_st=0.4, w_sz=0, w_pc=0, w_sm=0)
        lhs = total_loss(triplet, depth, poses, weights)
        rhs = photometric_loss(
            triplet, depth, {t: p.tau_from_t for t, p in poses.items()}, weights
        )
        assert float(lhs.value) == pytest.approx(float(rhs.value), rel=1e-15)

    def test_kitti_preset_recomposition(self):
        rng = np.random.default_rng(17)
        triplet = _test_triplet(rng)
        depth = dg.constant(rng.uniform(1.8, 2.2, (1, 1, 8, 8)))
        poses = self._poses(rng)
        w = LossWeights.kitti()
        lhs = float(total_loss(triplet, depth, poses, w).value)
        l_ph = float(
            photometric_loss(triplet, depth, {t: p.tau_from_t for t, p in poses.items()}, w).value
        )
        l_sz = float(sparse_depth_loss(depth, triplet.sparse).value)
        l_pc = sum(
            float(pose_consistency_loss(p.tau_from_t, p.t_from_tau).value)
            for p in poses.values()
        )
        l_sm = float(smoothness_loss(depth, triplet.image_curr).value)
        expected = w.w_ph * l_ph + w.w_sz * l_sz + w.w_pc * l_pc + w.w_sm * l_sm
        assert lhs == pytest.approx(expected, rel=1e-12)

    def test_all_terms_non_negative(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            triplet = _test_triplet(rng)
            depth = dg.constant(rng.uniform(1.0, 4.0, (1, 1, 8, 8)))
            poses = self._poses(rng)
            w = LossWeights.void()
            l_ph = photometric_loss(
                triplet, depth, {t: p.tau_from_t for t, p in poses.items()}, w
            )
            l_sz = sparse_depth_loss(depth, triplet.sparse)
            l_pc = pose_consistency_loss(
                poses["prev"].tau_from_t, poses["prev"].t_from_tau
            )
            l_sm = smoothness_loss(depth, triplet.image_curr)
            for term in (l_ph, l_sz, l_pc, l_sm):
                assert float(term.value) >= 0.0

    def test_odometry_poses_skip_consistency(self):
        rng = np.random.default_rng(5)
        triplet = _test_triplet(rng)
        depth = dg.constant(rng.uniform(1.8, 2.2, (1, 1, 8, 8)))
        loss = total_loss(
            triplet, depth, self._poses(rng, with_backward=False), LossWeights.kitti()
        )
        assert np.isfinite(float(loss.value))


class TestLossWeights:
    def test_presets(self):
        k = LossWeights.kitti()
        assert (k.w_ph, k.w_co, k.w_st, k.w_sz, k.w_pc, k.w_sm) == (
            1.00, 0.20, 0.40, 0.20, 0.10, 0.01,
        )
        v = LossWeights.void()
        assert (v.w_sz, v.w_sm) == (1.00, 0.10)
        assert (v.w_ph, v.w_co, v.w_st, v.w_pc) == (1.00, 0.20, 0.40, 0.10)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LossWeights(w_ph=-0.1)

    def test_toml_round_trip(self, tmp_path):
        cfg = tmp_path / "weights.toml"
        cfg.write_text("[weights]\nw_ph = 0.5\nw_sz = 2.0\n")
        w = LossWeights.from_config(cfg)
        assert w.w_ph == 0.5 and w.w_sz == 2.0 and w.w_co == 0.20

    def test_ini_round_trip(self, tmp_path):
        cfg = tmp_path / "weights.ini"
        cfg.write_text("[weights]\nw_st = 0.7\nw_sm = 0.2\n")
        w = LossWeights.from_config(cfg)
        assert w.w_st == 0.7 and w.w_sm == 0.2


@pytest.mark.parametrize("name", sorted(LOSS_CASES))
def test_loss_gradients_match_finite_differences(name):
    for seed in range(2):
        run_loss_case(name, seed=seed * 13 + 3)
