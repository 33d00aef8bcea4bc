"""Layer-by-layer architecture tables and the parameter-count audit.

The depth-completion networks follow the late-fusion layout: separate image
and depth encoder branches whose top features are concatenated into a
512-channel latent code, then one shared decoder with skip concatenations
from both branches. The VGG11 encoder downsamples twice by 2x2 max pooling
between its stride-1 blocks; the VGG8 encoder is all stride-2 convolutions.

``displayed_params`` carries the rounded count each table row advertises;
the audit recomputes k*k*cin*cout + cout per row and flags disagreements
instead of silently trusting either side. One decoder row advertises
"442M" where the formula gives ~442K; the computed value is used and the
row is reported as an anomaly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class LayerSpec:
    """One table row. ``kind`` is conv/deconv/pool/concat/upsample."""

    name: str
    kind: str
    kernel: int = 0
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    inputs: tuple = ()
    displayed_params: Optional[str] = None

    def parameter_count(self) -> int:
        if self.kind not in ("conv", "deconv"):
            return 0
        return self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels

    def weight_shape(self) -> tuple:
        if self.kind == "conv":
            return (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if self.kind == "deconv":
            return (self.in_channels, self.out_channels, self.kernel, self.kernel)
        raise ValueError(f"{self.name} has no weights")


def _conv(name, k, s, cin, cout, inputs, shown):
    return LayerSpec(name, "conv", k, s, cin, cout, inputs, shown)


def _deconv(name, k, s, cin, cout, inputs, shown):
    return LayerSpec(name, "deconv", k, s, cin, cout, inputs, shown)


def _vgg11_branch(tag: str, cin: int, widths: tuple, shown: tuple) -> tuple:
    w1, w2, w3, w4, w5 = widths
    n = lambda stem: f"{stem}_{tag}"  # noqa: E731
    return (
        _conv(n("conv1"), 5, 2, cin, w1, (tag,), shown[0]),
        _conv(n("conv2"), 3, 2, w1, w2, (n("conv1"),), shown[1]),
        _conv(n("conv3"), 3, 1, w2, w3, (n("conv2"),), shown[2]),
        _conv(n("conv3b"), 3, 1, w3, w3, (n("conv3"),), shown[3]),
        LayerSpec(n("pool3"), "pool", stride=2, in_channels=w3, out_channels=w3, inputs=(n("conv3b"),)),
        _conv(n("conv4"), 3, 1, w3, w4, (n("pool3"),), shown[4]),
        _conv(n("conv4b"), 3, 1, w4, w4, (n("conv4"),), shown[5]),
        LayerSpec(n("pool4"), "pool", stride=2, in_channels=w4, out_channels=w4, inputs=(n("conv4b"),)),
        _conv(n("conv5"), 3, 1, w4, w5, (n("pool4"),), shown[6]),
        _conv(n("conv5b"), 3, 2, w5, w5, (n("conv5"),), shown[7]),
    )


def _vgg8_branch(tag: str, cin: int, widths: tuple, shown: tuple) -> tuple:
    w1, w2, w3, w4, w5 = widths
    n = lambda stem: f"{stem}_{tag}"  # noqa: E731
    return (
        _conv(n("conv1"), 5, 2, cin, w1, (tag,), shown[0]),
        _conv(n("conv2"), 3, 2, w1, w2, (n("conv1"),), shown[1]),
        _conv(n("conv3b"), 3, 2, w2, w3, (n("conv2"),), shown[2]),
        _conv(n("conv4b"), 3, 2, w3, w4, (n("conv3b"),), shown[3]),
        _conv(n("conv5b"), 3, 2, w4, w5, (n("conv4b"),), shown[4]),
    )


VGG11_ENCODER = (
    _vgg11_branch(
        "image", 3, (48, 96, 192, 384, 384),
        ("3.6K", "41K", "166K", "331K", "663K", "1.3M", "1.3M", "1.3M"),
    )
    + _vgg11_branch(
        "depth", 2, (16, 32, 64, 128, 128),
        ("0.8K", "4.6K", "18K", "37K", "74K", "147K", "147K", "147K"),
    )
    + (
        LayerSpec(
            "latent", "concat", in_channels=384 + 128, out_channels=512,
            inputs=("conv5b_image", "conv5b_depth"),
        ),
    )
)

VGG8_ENCODER = (
    _vgg8_branch("image", 3, (48, 96, 192, 384, 384), ("3.6K", "41K", "166K", "663K", "1.3M"))
    + _vgg8_branch("depth", 2, (16, 32, 64, 128, 128), ("0.8K", "4.6K", "18K", "74K", "147K"))
    + (
        LayerSpec(
            "latent", "concat", in_channels=384 + 128, out_channels=512,
            inputs=("conv5b_image", "conv5b_depth"),
        ),
    )
)

# Skip tensors feeding each decoder concat, per encoder variant. The VGG11
# skips at 1/8 and 1/16 are the pooled block outputs (the inputs of the
# next encoder stage); VGG8 block outputs already live at those scales.
SKIP_SOURCES = {
    "vgg11": {
        "concat5": ("pool4_image", "pool4_depth"),
        "concat4": ("pool3_image", "pool3_depth"),
        "concat3": ("conv2_image", "conv2_depth"),
        "concat2": ("conv1_image", "conv1_depth"),
    },
    "vgg8": {
        "concat5": ("conv4b_image", "conv4b_depth"),
        "concat4": ("conv3b_image", "conv3b_depth"),
        "concat3": ("conv2_image", "conv2_depth"),
        "concat2": ("conv1_image", "conv1_depth"),
    },
}

DECODER = (
    _deconv("deconv5", 3, 2, 512, 256, ("latent",), "1.2M"),
    LayerSpec("concat5", "concat", in_channels=256 + 384 + 128, out_channels=768,
              inputs=("deconv5", "skip5_image", "skip5_depth")),
    _conv("conv5", 3, 1, 768, 256, ("concat5",), "1.8M"),
    _deconv("deconv4", 3, 2, 256, 128, ("conv5",), "295K"),
    LayerSpec("concat4", "concat", in_channels=128 + 192 + 64, out_channels=384,
              inputs=("deconv4", "skip4_image", "skip4_depth")),
    _conv("conv4", 3, 1, 384, 128, ("concat4",), "442M"),  # table anomaly; ~442K computed
    _deconv("deconv3", 3, 2, 128, 128, ("conv4",), "147K"),
    LayerSpec("concat3", "concat", in_channels=128 + 96 + 32, out_channels=256,
              inputs=("deconv3", "skip3_image", "skip3_depth")),
    _conv("conv3", 3, 1, 256, 64, ("concat3",), "147K"),
    _deconv("deconv2", 3, 2, 64, 64, ("conv3",), "37K"),
    LayerSpec("concat2", "concat", in_channels=64 + 48 + 16, out_channels=128,
              inputs=("deconv2", "skip2_image", "skip2_depth")),
    _conv("conv2", 3, 1, 128, 1, ("concat2",), "1.2K"),
    LayerSpec("output", "upsample", stride=2, in_channels=1, out_channels=1, inputs=("conv2",)),
)

# The printed channel widths for conv6/conv7 (256 -> 256) contradict both
# their own "~295K" row counts and the "~1M" network total; 256 -> 128 ->
# 256 reproduces every printed count, so that is what we build.
POSE_NETWORK = (
    _conv("conv1", 7, 2, 6, 16, ("image_pair",), "4.7K"),
    _conv("conv2", 5, 2, 16, 32, ("conv1",), "13K"),
    _conv("conv3", 3, 2, 32, 64, ("conv2",), "18K"),
    _conv("conv4", 3, 2, 64, 128, ("conv3",), "74K"),
    _conv("conv5", 3, 2, 128, 256, ("conv4",), "295K"),
    _conv("conv6", 3, 2, 256, 128, ("conv5",), "295K"),
    _conv("conv7", 3, 2, 128, 256, ("conv6",), "295K"),
    _conv("output", 3, 1, 256, 6, ("conv7",), "14K"),
)

DISPLAYED_TOTALS = {
    "vgg11_encoder": "5.7M",
    "vgg8_encoder": "2.4M",
    "decoder": "4M",
    "pose_network": "1M",
}

_UNIT_SCALE = {"K": 1_000.0, "M": 1_000_000.0}


def matches_displayed(count: int, displayed: str) -> bool:
    """Whether a computed count reads as the displayed rounded value.

    The tables are inconsistent about rounding versus truncating the last
    digit, so both readings are accepted.
    """
    unit = displayed[-1]
    if unit not in _UNIT_SCALE:
        return False
    number = displayed[:-1]
    decimals = len(number.split(".")[1]) if "." in number else 0
    scaled = count / _UNIT_SCALE[unit] * 10**decimals
    shown = round(float(number) * 10**decimals)
    return math.floor(scaled) == shown or math.floor(scaled + 0.5) == shown


@dataclass(frozen=True)
class RowAudit:
    name: str
    computed: int
    displayed: str
    matches: bool


def audit_rows(rows) -> list:
    """Per-row audit of every table row that advertises a count."""
    out = []
    for row in rows:
        if row.displayed_params is None:
            continue
        computed = row.parameter_count()
        out.append(
            RowAudit(
                name=row.name,
                computed=computed,
                displayed=row.displayed_params,
                matches=matches_displayed(computed, row.displayed_params),
            )
        )
    return out


def total_parameters(rows) -> int:
    return sum(row.parameter_count() for row in rows)


def encoder_rows(variant: str) -> tuple:
    try:
        return {"vgg11": VGG11_ENCODER, "vgg8": VGG8_ENCODER}[variant]
    except KeyError:
        raise ValueError(f"unknown encoder variant {variant!r}") from None


def audit_architecture() -> dict:
    """Full audit: per-row results, totals and the list of anomalous rows."""
    tables = {
        "vgg11_encoder": VGG11_ENCODER,
        "vgg8_encoder": VGG8_ENCODER,
        "decoder": DECODER,
        "pose_network": POSE_NETWORK,
    }
    report = {}
    for name, rows in tables.items():
        audits = audit_rows(rows)
        total = total_parameters(rows)
        report[name] = {
            "rows": audits,
            "total": total,
            "total_displayed": DISPLAYED_TOTALS[name],
            "total_matches": matches_displayed(total, DISPLAYED_TOTALS[name]),
            "anomalies": [a for a in audits if not a.matches],
        }
    return report
