"""Depth-completion and pose networks assembled on the differentiation graph.

Every convolution and deconvolution is followed by leaky ReLU (slope 0.1)
except the two output heads: the decoder's final 1-channel convolution
(followed by x2 upsampling, softplus and a clamp to [0.1, 100] m) and the
pose network's output convolution (averaged over space into a 6-vector:
3 rotation coordinates and 3 translation components).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffgraph as dg
from ..diffgraph import ParameterStore
from ..losses import PoseNodes
from .specs import DECODER, POSE_NETWORK, SKIP_SOURCES, encoder_rows

LEAKY_SLOPE = 0.1
DEPTH_FLOOR = 0.1
DEPTH_CEILING = 100.0
ENCODER_VARIANTS = ("vgg11", "vgg8")
ROTATION_MODES = ("exponential", "euler")


class BadResolution(ValueError):
    """Input resolution is not divisible by the five stride-2 stages."""


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "vgg8"
    rotation: str = "exponential"
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.encoder not in ENCODER_VARIANTS:
            raise ValueError(f"encoder must be one of {ENCODER_VARIANTS}")
        if self.rotation not in ROTATION_MODES:
            raise ValueError(f"rotation must be one of {ROTATION_MODES}")
        if self.height % 32 or self.width % 32:
            raise BadResolution(
                f"resolution {self.width}x{self.height} must be divisible by 32"
            )

    def as_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "rotation": self.rotation,
            "height": self.height,
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(
            encoder=data["encoder"],
            rotation=data["rotation"],
            height=int(data["height"]),
            width=int(data["width"]),
        )


def _he_uniform(rng: np.random.Generator, spec, scale: float = 1.0) -> np.ndarray:
    fan_in = spec.kernel * spec.kernel * spec.in_channels
    bound = scale * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, spec.weight_shape())


def _init_parameters(rows, prefix: str, rng, store: ParameterStore, output_scale=None):
    for spec in rows:
        if spec.kind not in ("conv", "deconv"):
            continue
        scale = 1.0
        if output_scale is not None and spec.name == "output":
            scale = output_scale
        store[f"{prefix}.{spec.name}.weight"] = _he_uniform(rng, spec, scale)
        store[f"{prefix}.{spec.name}.bias"] = np.zeros(spec.out_channels)


def _check_spatial(value_shape, what: str) -> None:
    if value_shape[2] % 32 or value_shape[3] % 32:
        raise BadResolution(
            f"{what} spatial size {value_shape[3]}x{value_shape[2]} must be divisible by 32"
        )


class DepthCompletionNetwork:
    """Late-fusion refinement network: (image, scaffolded depth) -> depth.

    The depth input has two channels: scaffold depth in meters and its
    validity channel. Parameters live in a ParameterStore keyed
    ``depth_net.<layer>.{weight,bias}``.
    """

    PREFIX = "depth_net"

    def __init__(self, config: ModelConfig, params: ParameterStore | None = None, seed: int = 0):
        self.config = config
        self.encoder_rows = encoder_rows(config.encoder)
        if params is None:
            params = ParameterStore()
            rng = np.random.default_rng(seed)
            _init_parameters(self.encoder_rows + DECODER, self.PREFIX, rng, params)
        self.params = params

    def parameter_names(self) -> list:
        names = []
        for spec in self.encoder_rows + DECODER:
            if spec.kind in ("conv", "deconv"):
                names.append(f"{self.PREFIX}.{spec.name}.weight")
                names.append(f"{self.PREFIX}.{spec.name}.bias")
        return names

    def make_parameter_nodes(self) -> dict:
        return {name: dg.parameter(self.params[name]) for name in self.parameter_names()}

    def _conv(self, nodes, x, name, stride, activate=True):
        spec = self._spec(name)
        out = dg.conv2d(
            x,
            nodes[f"{self.PREFIX}.{name}.weight"],
            nodes[f"{self.PREFIX}.{name}.bias"],
            stride=stride,
        )
        return dg.leaky_relu(out, LEAKY_SLOPE) if activate else out

    def _deconv(self, nodes, x, name):
        out = dg.conv2d_transpose(
            x,
            nodes[f"{self.PREFIX}.{name}.weight"],
            nodes[f"{self.PREFIX}.{name}.bias"],
            stride=2,
        )
        return dg.leaky_relu(out, LEAKY_SLOPE)

    def _spec(self, name):
        for spec in self.encoder_rows + DECODER:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def _encode_branch(self, nodes, x, tag: str) -> dict:
        features = {}
        if self.config.encoder == "vgg11":
            c1 = self._conv(nodes, x, f"conv1_{tag}", 2)
            c2 = self._conv(nodes, c1, f"conv2_{tag}", 2)
            c3 = self._conv(nodes, c2, f"conv3_{tag}", 1)
            c3b = self._conv(nodes, c3, f"conv3b_{tag}", 1)
            p3 = dg.max_pool2(c3b)
            c4 = self._conv(nodes, p3, f"conv4_{tag}", 1)
            c4b = self._conv(nodes, c4, f"conv4b_{tag}", 1)
            p4 = dg.max_pool2(c4b)
            c5 = self._conv(nodes, p4, f"conv5_{tag}", 1)
            c5b = self._conv(nodes, c5, f"conv5b_{tag}", 2)
            features.update(
                {
                    f"conv1_{tag}": c1,
                    f"conv2_{tag}": c2,
                    f"pool3_{tag}": p3,
                    f"pool4_{tag}": p4,
                    f"conv5b_{tag}": c5b,
                }
            )
        else:
            c1 = self._conv(nodes, x, f"conv1_{tag}", 2)
            c2 = self._conv(nodes, c1, f"conv2_{tag}", 2)
            c3b = self._conv(nodes, c2, f"conv3b_{tag}", 2)
            c4b = self._conv(nodes, c3b, f"conv4b_{tag}", 2)
            c5b = self._conv(nodes, c4b, f"conv5b_{tag}", 2)
            features.update(
                {
                    f"conv1_{tag}": c1,
                    f"conv2_{tag}": c2,
                    f"conv3b_{tag}": c3b,
                    f"conv4b_{tag}": c4b,
                    f"conv5b_{tag}": c5b,
                }
            )
        return features

    def forward(self, image, depth2, nodes: dict | None = None) -> dg.Node:
        """Predicted depth (B, 1, H, W) in [0.1, 100] m.

        ``nodes`` are parameter nodes from :meth:`make_parameter_nodes`;
        when omitted the parameters enter the graph as constants (inference).
        """
        image = dg.as_node(image)
        depth2 = dg.as_node(depth2)
        if image.value.ndim != 4 or image.value.shape[1] != 3:
            raise dg.ShapeMismatch(f"image must be (B, 3, H, W), got {image.value.shape}")
        if depth2.value.ndim != 4 or depth2.value.shape[1] != 2:
            raise dg.ShapeMismatch(f"depth input must be (B, 2, H, W), got {depth2.value.shape}")
        if image.value.shape[2:] != depth2.value.shape[2:]:
            raise dg.ShapeMismatch("image and depth inputs must share spatial size")
        _check_spatial(image.value.shape, "input")
        if nodes is None:
            nodes = {name: dg.constant(self.params[name]) for name in self.parameter_names()}

        feats = self._encode_branch(nodes, image, "image")
        feats.update(self._encode_branch(nodes, depth2, "depth"))
        latent = dg.concat([feats["conv5b_image"], feats["conv5b_depth"]], axis=1)

        skips = SKIP_SOURCES[self.config.encoder]
        d5 = self._deconv(nodes, latent, "deconv5")
        x = dg.concat([d5, feats[skips["concat5"][0]], feats[skips["concat5"][1]]], axis=1)
        x = self._conv(nodes, x, "conv5", 1)
        d4 = self._deconv(nodes, x, "deconv4")
        x = dg.concat([d4, feats[skips["concat4"][0]], feats[skips["concat4"][1]]], axis=1)
        x = self._conv(nodes, x, "conv4", 1)
        d3 = self._deconv(nodes, x, "deconv3")
        x = dg.concat([d3, feats[skips["concat3"][0]], feats[skips["concat3"][1]]], axis=1)
        x = self._conv(nodes, x, "conv3", 1)
        d2 = self._deconv(nodes, x, "deconv2")
        x = dg.concat([d2, feats[skips["concat2"][0]], feats[skips["concat2"][1]]], axis=1)
        x = self._conv(nodes, x, "conv2", 1, activate=False)
        up = dg.upsample_bilinear2(x)
        return dg.clamp(dg.softplus(up), DEPTH_FLOOR, DEPTH_CEILING)


class PoseNetwork:
    """Relative pose regressor: an ordered 6-channel image pair -> pose.

    The spatial mean of the final 6-channel map gives 3 rotation
    coordinates and 3 translation components; rotation coordinates go
    through the exponential map (or the Euler composition for the
    ablation).
    """

    PREFIX = "pose_net"
    # The output head starts near zero so initial poses sit close to the
    # identity, keeping the early photometric loss sane.
    OUTPUT_INIT_SCALE = 0.01

    def __init__(self, config: ModelConfig, params: ParameterStore | None = None, seed: int = 0):
        self.config = config
        if params is None:
            params = ParameterStore()
            rng = np.random.default_rng(seed + 1)
            _init_parameters(
                POSE_NETWORK, self.PREFIX, rng, params, output_scale=self.OUTPUT_INIT_SCALE
            )
        self.params = params

    def parameter_names(self) -> list:
        names = []
        for spec in POSE_NETWORK:
            names.append(f"{self.PREFIX}.{spec.name}.weight")
            names.append(f"{self.PREFIX}.{spec.name}.bias")
        return names

    def make_parameter_nodes(self) -> dict:
        return {name: dg.parameter(self.params[name]) for name in self.parameter_names()}

    def forward(self, pair, nodes: dict | None = None) -> dg.Node:
        """Six-vector (B, 6) from a (B, 6, H, W) ordered image pair."""
        pair = dg.as_node(pair)
        if pair.value.ndim != 4 or pair.value.shape[1] != 6:
            raise dg.ShapeMismatch(f"pose input must be (B, 6, H, W), got {pair.value.shape}")
        if nodes is None:
            nodes = {name: dg.constant(self.params[name]) for name in self.parameter_names()}
        x = pair
        for spec in POSE_NETWORK:
            x = dg.conv2d(
                x,
                nodes[f"{self.PREFIX}.{spec.name}.weight"],
                nodes[f"{self.PREFIX}.{spec.name}.bias"],
                stride=spec.stride,
            )
            if spec.name != "output":
                x = dg.leaky_relu(x, LEAKY_SLOPE)
        return dg.spatial_mean(x)

    def pose_nodes(self, vector: dg.Node, batch_index: int = 0) -> PoseNodes:
        """Rotation/translation nodes from one row of the (B, 6) output."""
        row = dg.getitem(vector, (batch_index,))
        rot_coords = dg.getitem(row, slice(0, 3))
        translation = dg.getitem(row, slice(3, 6))
        if self.config.rotation == "exponential":
            rotation = dg.exp_map_layer(rot_coords)
        else:
            rotation = dg.euler_map_layer(rot_coords)
        return PoseNodes(rotation, translation)
