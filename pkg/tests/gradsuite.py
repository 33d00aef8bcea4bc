"""Finite-difference gradient cases for every differentiable operation.

Each case builds a scalar loss from fresh parameter nodes so it can be
rebuilt point-by-point by the central-difference oracle. Inputs are drawn
away from kinks (abs at 0, clamp bounds, pixel-cell edges) where the
one-sided derivative would make the comparison meaningless.
"""

from __future__ import annotations

import numpy as np

from sdcomp import diffgraph as dg
from sdcomp import geometry

from oracles import finite_difference_gradient, relative_gradient_error


def _away_from_zero(rng, shape, margin=0.2, scale=1.0):
    signs = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return signs * rng.uniform(margin, scale, shape)


class _Projector:
    """Random linear read-out, frozen on first use so the finite-difference
    oracle sees the same scalar function on every rebuild."""

    def __init__(self, rng):
        self._rng = rng
        self._weights = None

    def __call__(self, out_node):
        if self._weights is None:
            self._weights = self._rng.standard_normal(out_node.value.shape)
        return dg.sum_(dg.mul(out_node, dg.constant(self._weights)))


def _case_add(rng):
    params = {"a": rng.standard_normal((2, 3, 8, 8)), "b": rng.standard_normal((1, 3, 1, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.add(n["a"], n["b"]))


def _case_sub(rng):
    params = {"a": rng.standard_normal((1, 2, 8, 8)), "b": rng.standard_normal((1, 2, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.sub(n["a"], n["b"]))


def _case_mul(rng):
    params = {"a": rng.standard_normal((2, 1, 8, 8)), "b": rng.standard_normal((2, 3, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.mul(n["a"], n["b"]))


def _case_div(rng):
    params = {
        "a": rng.standard_normal((1, 2, 8, 8)),
        "b": _away_from_zero(rng, (1, 2, 8, 8), margin=0.5, scale=2.0),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.div(n["a"], n["b"]))


def _case_neg(rng):
    params = {"x": rng.standard_normal((1, 1, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.neg(n["x"]))


def _case_abs(rng):
    params = {"x": _away_from_zero(rng, (1, 1, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.abs_(n["x"]))


def _case_exp(rng):
    params = {"x": rng.uniform(-1.5, 1.5, (1, 1, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.exp(n["x"]))


def _case_log(rng):
    params = {"x": rng.uniform(0.3, 3.0, (1, 1, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.log(n["x"]))


def _case_sqrt(rng):
    params = {"x": rng.uniform(0.3, 3.0, (1, 1, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.sqrt(n["x"]))


def _case_square(rng):
    params = {"x": rng.standard_normal((1, 1, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.square(n["x"]))


def _case_clamp(rng):
    x = rng.uniform(-2.0, 2.0, (1, 1, 8, 8))
    x[np.abs(x - 1.0) < 0.05] += 0.2
    x[np.abs(x + 1.0) < 0.05] -= 0.2
    params = {"x": x}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.clamp(n["x"], -1.0, 1.0))


def _case_leaky_relu(rng):
    params = {"x": _away_from_zero(rng, (1, 2, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.leaky_relu(n["x"], 0.1))


def _case_softplus(rng):
    params = {"x": rng.uniform(-4.0, 4.0, (1, 1, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.softplus(n["x"]))


def _case_sum_axis(rng):
    params = {"x": rng.standard_normal((2, 3, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.sum_(n["x"], axis=1))


def _case_mean_axis(rng):
    params = {"x": rng.standard_normal((2, 3, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.mean(n["x"], axis=2))


def _case_mean_full(rng):
    params = {"x": rng.standard_normal((1, 3, 8, 8))}
    return params, lambda n: dg.mean(n["x"])


def _case_spatial_mean(rng):
    params = {"x": rng.standard_normal((2, 4, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.spatial_mean(n["x"]))


def _case_reshape(rng):
    params = {"x": rng.standard_normal((1, 4, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.reshape(n["x"], (4, 64)))


def _case_getitem(rng):
    params = {"x": rng.standard_normal((2, 4, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.getitem(n["x"], (slice(None), slice(1, 3), slice(2, 7), slice(None))))


def _case_concat(rng):
    params = {
        "a": rng.standard_normal((1, 2, 8, 8)),
        "b": rng.standard_normal((1, 3, 8, 8)),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.concat([n["a"], n["b"]], axis=1))


def _case_matmul(rng):
    params = {"a": rng.standard_normal((5, 4)), "b": rng.standard_normal((4, 6))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.matmul(n["a"], n["b"]))


def _case_matvec(rng):
    params = {"a": rng.standard_normal((3, 3)), "b": rng.standard_normal(3)}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.matmul(n["a"], n["b"]))


def _case_conv2d_s1(rng):
    params = {
        "x": rng.standard_normal((1, 2, 8, 8)),
        "w": rng.standard_normal((3, 2, 3, 3)) * 0.5,
        "b": rng.standard_normal(3),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.conv2d(n["x"], n["w"], n["b"], stride=1))


def _case_conv2d_s2(rng):
    params = {
        "x": rng.standard_normal((1, 2, 8, 8)),
        "w": rng.standard_normal((2, 2, 5, 5)) * 0.5,
        "b": rng.standard_normal(2),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.conv2d(n["x"], n["w"], n["b"], stride=2))


def _case_conv2d_transpose(rng):
    params = {
        "x": rng.standard_normal((1, 3, 4, 4)),
        "w": rng.standard_normal((3, 2, 3, 3)) * 0.5,
        "b": rng.standard_normal(2),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.conv2d_transpose(n["x"], n["w"], n["b"], stride=2))


def _case_max_pool2(rng):
    # Separate window entries so the argmax is stable under FD steps.
    x = rng.standard_normal((1, 2, 8, 8))
    flat = x.reshape(1, 2, 4, 2, 4, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
    flat += np.arange(4) * 0.01  # tiny tie-breaking offsets per window slot
    x = flat.reshape(1, 2, 4, 4, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(1, 2, 8, 8)
    params = {"x": x}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.max_pool2(n["x"]))


def _case_upsample(rng):
    params = {"x": rng.standard_normal((1, 2, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.upsample_bilinear2(n["x"]))


def _case_box_filter(rng):
    params = {"x": rng.standard_normal((1, 2, 8, 8))}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.box_filter3(n["x"]))


def _grid_coords(rng, b, h, w):
    u = rng.uniform(0.6, w - 1.6, (b, 1, h, w))
    v = rng.uniform(0.6, h - 1.6, (b, 1, h, w))
    grid = np.concatenate([u, v], axis=1)
    # Keep sampling points away from pixel-cell edges so the FD window does
    # not straddle a bilinear kink.
    frac = grid - np.floor(grid)
    grid += np.where(frac < 0.05, 0.1, 0.0)
    grid -= np.where(frac > 0.95, 0.1, 0.0)
    return grid


def _case_grid_sample(rng):
    params = {
        "src": rng.standard_normal((1, 2, 8, 8)),
        "grid": _grid_coords(rng, 1, 8, 8),
    }

    proj = _Projector(rng)

    def build(n):
        out, _ = dg.grid_sample_bilinear(n["src"], n["grid"])
        return proj(out)

    return params, build


def _case_ssim3(rng):
    params = {
        "a": rng.uniform(0.1, 0.9, (1, 3, 8, 8)),
        "b": rng.uniform(0.1, 0.9, (1, 3, 8, 8)),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.ssim3(n["a"], n["b"]))


def _case_exp_map(rng):
    params = {"w": rng.uniform(-1.2, 1.2, 3)}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.exp_map_layer(n["w"]))


def _case_exp_map_tiny(rng):
    params = {"w": rng.uniform(-1e-8, 1e-8, 3)}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.exp_map_layer(n["w"]))


def _case_euler_map(rng):
    params = {"w": rng.uniform(-1.2, 1.2, 3)}
    proj = _Projector(rng)
    return params, lambda n: proj(dg.euler_map_layer(n["w"]))


def _case_se3_log(rng):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    w = rng.uniform(0.05, 2.5) * axis
    params = {
        "r": geometry._rodrigues(w),
        "t": rng.standard_normal(3),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.se3_log_layer(n["r"], n["t"]))


def _case_se3_log_small(rng):
    params = {
        "r": geometry._rodrigues(rng.uniform(-1e-5, 1e-5, 3)),
        "t": rng.standard_normal(3),
    }
    proj = _Projector(rng)
    return params, lambda n: proj(dg.se3_log_layer(n["r"], n["t"]))


OP_CASES = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "div": _case_div,
    "neg": _case_neg,
    "abs": _case_abs,
    "exp": _case_exp,
    "log": _case_log,
    "sqrt": _case_sqrt,
    "square": _case_square,
    "clamp": _case_clamp,
    "leaky_relu": _case_leaky_relu,
    "softplus": _case_softplus,
    "sum_axis": _case_sum_axis,
    "mean_axis": _case_mean_axis,
    "mean_full": _case_mean_full,
    "spatial_mean": _case_spatial_mean,
    "reshape": _case_reshape,
    "getitem": _case_getitem,
    "concat": _case_concat,
    "matmul": _case_matmul,
    "matvec": _case_matvec,
    "conv2d_s1": _case_conv2d_s1,
    "conv2d_s2": _case_conv2d_s2,
    "conv2d_transpose": _case_conv2d_transpose,
    "max_pool2": _case_max_pool2,
    "upsample_bilinear2": _case_upsample,
    "box_filter3": _case_box_filter,
    "grid_sample": _case_grid_sample,
    "ssim3": _case_ssim3,
    "exp_map_layer": _case_exp_map,
    "exp_map_layer_tiny": _case_exp_map_tiny,
    "euler_map_layer": _case_euler_map,
    "se3_log_layer": _case_se3_log,
    "se3_log_layer_small": _case_se3_log_small,
}


def check_case(params: dict, build, rel_tol: float = 1e-4, max_probes=None, rng=None) -> float:
    """Run one analytic-vs-FD comparison; returns the worst relative error.

    ``max_probes`` caps the number of coordinates differenced per input
    (chosen at random); with many seeds this still covers every coordinate
    while keeping large sweeps inside their runtime budget.

    Warped losses are piecewise smooth: a probe occasionally straddles a
    bilinear-cell edge, where central differences blend the two one-sided
    slopes no matter how correct the analytic gradient is. A failing probe
    is therefore retried at a 16x smaller step; kink-straddling probes
    converge to the analytic value, genuine gradient bugs do not.
    """
    nodes = {k: dg.parameter(v.copy()) for k, v in params.items()}
    loss = build(nodes)
    dg.backward(loss)
    worst = 0.0
    for name, base in params.items():
        indices = None
        if max_probes is not None and base.size > max_probes:
            picker = rng if rng is not None else np.random.default_rng(0)
            indices = picker.choice(base.size, size=max_probes, replace=False)

        def scalar_fn(x, _name=name):
            rebuilt = {
                k: dg.parameter(x.copy() if k == _name else v.copy())
                for k, v in params.items()
            }
            return float(build(rebuilt).value)

        analytic = nodes[name].grad

        def subset_error(step):
            numeric = finite_difference_gradient(
                scalar_fn, base.copy(), step=step, indices=indices
            )
            if indices is not None:
                probe = np.zeros(base.size, dtype=bool)
                probe[indices] = True
                return relative_gradient_error(
                    analytic.reshape(-1)[probe], numeric.reshape(-1)[probe]
                )
            return relative_gradient_error(analytic, numeric)

        err = subset_error(1e-5)
        if err >= rel_tol:
            err = min(err, subset_error(6.25e-7))
        worst = max(worst, err)
        assert err < rel_tol, f"gradient mismatch for {name}: rel err {err:.3e}"
    return worst


def run_op_case(op_name: str, seed: int, rel_tol: float = 1e-4, max_probes=None) -> float:
    rng = np.random.default_rng(seed)
    params, build = OP_CASES[op_name](rng)
    return check_case(params, build, rel_tol, max_probes=max_probes, rng=rng)


# ---------------------------------------------------------------------------
# Loss-term cases: the four objective terms plus their weighted total on a
# synthetic 8x8 triplet, differentiated w.r.t. depth, pose parameters and
# (for the total) the weights of a small conv network producing the depth.
# ---------------------------------------------------------------------------

from sdcomp.losses import (  # noqa: E402
    FrameTriplet,
    LossWeights,
    PoseNodes,
    PosePair,
    photometric_loss,
    pose_consistency_loss,
    smoothness_loss,
    sparse_depth_loss,
    total_loss,
)
from sdcomp.scaffold import SparseDepthMap  # noqa: E402


def _smooth_image(rng, h=8, w=8):
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    channels = []
    for _ in range(3):
        phase_u, phase_v = rng.uniform(0, 2 * np.pi, 2)
        freq_u, freq_v = rng.uniform(0.4, 1.0, 2)
        channels.append(
            0.5
            + 0.22 * np.sin(2 * np.pi * freq_u * uu / w + phase_u)
            + 0.18 * np.sin(2 * np.pi * freq_v * vv / h + phase_v)
        )
    return np.clip(np.stack(channels), 0.0, 1.0)


def _test_triplet(rng, sparse_depth=3.0):
    intrinsics = geometry.CameraIntrinsics(fx=8.0, fy=8.0, cx=3.5, cy=3.5, width=8, height=8)
    pts = [(2, 2, sparse_depth), (5, 3, sparse_depth + 0.2), (3, 6, sparse_depth - 0.2)]
    return FrameTriplet(
        image_prev=_smooth_image(rng),
        image_curr=_smooth_image(rng),
        image_next=_smooth_image(rng),
        sparse=SparseDepthMap(8, 8, pts),
        intrinsics=intrinsics,
    )


def _small_pose_params(rng, prefix):
    return {
        f"{prefix}_w": rng.uniform(-0.02, 0.02, 3),
        f"{prefix}_t": rng.uniform(-0.02, 0.02, 3),
    }


def _pose_nodes(nodes, prefix):
    return PoseNodes(dg.exp_map_layer(nodes[f"{prefix}_w"]), nodes[f"{prefix}_t"])


def _case_loss_photometric(rng):
    triplet = _test_triplet(rng)
    weights = LossWeights(w_co=0.2, w_st=0.4)
    params = {"depth": rng.uniform(1.8, 2.2, (1, 1, 8, 8))}
    params.update(_small_pose_params(rng, "prev"))
    params.update(_small_pose_params(rng, "next"))

    def build(n):
        poses = {"prev": _pose_nodes(n, "prev"), "next": _pose_nodes(n, "next")}
        return photometric_loss(triplet, n["depth"], poses, weights)

    return params, build


def _case_loss_sparse_depth(rng):
    triplet = _test_triplet(rng, sparse_depth=3.0)
    params = {"depth": rng.uniform(1.8, 2.4, (1, 1, 8, 8))}
    return params, lambda n: sparse_depth_loss(n["depth"], triplet.sparse)


def _case_loss_pose_consistency(rng):
    params = {}
    params.update({k: rng.uniform(-0.4, 0.4, 3) for k in ("f_w", "f_t", "b_w", "b_t")})

    def build(n):
        fwd = PoseNodes(dg.exp_map_layer(n["f_w"]), n["f_t"])
        bwd = PoseNodes(dg.exp_map_layer(n["b_w"]), n["b_t"])
        return pose_consistency_loss(fwd, bwd)

    return params, build


def _case_loss_smoothness(rng):
    image = _smooth_image(rng)
    params = {"depth": rng.uniform(1.0, 3.0, (1, 1, 8, 8))}
    return params, lambda n: smoothness_loss(n["depth"], image)


def _case_loss_total(rng):
    triplet = _test_triplet(rng, sparse_depth=3.0)
    weights = LossWeights(w_ph=1.0, w_co=0.2, w_st=0.4, w_sz=0.5, w_pc=0.1, w_sm=0.01)
    params = {
        "w1": rng.standard_normal((4, 3, 3, 3)) * 0.3,
        "b1": rng.standard_normal(4) * 0.1,
        "w2": rng.standard_normal((1, 4, 3, 3)) * 0.3,
        "b2": rng.standard_normal(1) * 0.1,
    }
    for prefix in ("prev_f", "prev_b", "next_f", "next_b"):
        params.update(_small_pose_params(rng, prefix))
    net_input = dg.constant(triplet.image_curr[None])

    def build(n):
        hidden = dg.leaky_relu(dg.conv2d(net_input, n["w1"], n["b1"]), 0.1)
        raw = dg.conv2d(hidden, n["w2"], n["b2"])
        depth = dg.clamp(dg.add(dg.softplus(raw), 1.0), 0.1, 100.0)
        poses = {
            "prev": PosePair(_pose_nodes(n, "prev_f"), _pose_nodes(n, "prev_b")),
            "next": PosePair(_pose_nodes(n, "next_f"), _pose_nodes(n, "next_b")),
        }
        return total_loss(triplet, depth, poses, weights)

    return params, build


LOSS_CASES = {
    "loss_photometric": _case_loss_photometric,
    "loss_sparse_depth": _case_loss_sparse_depth,
    "loss_pose_consistency": _case_loss_pose_consistency,
    "loss_smoothness": _case_loss_smoothness,
    "loss_total": _case_loss_total,
}


def run_loss_case(name: str, seed: int, rel_tol: float = 1e-4, max_probes=None) -> float:
    rng = np.random.default_rng(seed)
    params, build = LOSS_CASES[name](rng)
    return check_case(params, build, rel_tol, max_probes=max_probes, rng=rng)
