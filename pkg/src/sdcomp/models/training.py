"""Training loop (Adam + stepwise learning-rate halving) and inference.

Benchmark presets follow the published recipe: Adam with beta1 0.9 and
beta2 0.999, base learning rate 1.2e-4 (outdoor) or 1e-4 (indoor), batch 8,
and halving of the learning rate at two epoch boundaries (18/24 of 30
outdoors, 6/8 of 10 indoors). The desk preset shrinks everything to what a
CPU can chew through: 64x64 synthetic triplets, batch 2, a higher base
rate, and a step cap.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .. import diffgraph as dg
from ..diffgraph import ParameterStore
from ..geometry import Pose
from ..losses import FrameTriplet, LossWeights, PoseNodes, PosePair, total_loss
from ..scaffold import DenseDepthMap, SparseDepthMap, scaffold
from .networks import DepthCompletionNetwork, ModelConfig, PoseNetwork


class DivergedLoss(RuntimeError):
    """Training loss became non-finite."""


class Adam:
    """Standard Adam with bias correction; updates arrays in place."""

    def __init__(self, params: ParameterStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self._v = {name: np.zeros_like(arr) for name, arr in params.items()}
        self._scratch = {name: np.empty_like(arr) for name, arr in params.items()}
        self._scratch2 = {name: np.empty_like(arr) for name, arr in params.items()}

    def step(self, grads: dict) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, grad in grads.items():
            m = self._m[name]
            v = self._v[name]
            num = self._scratch[name]
            den = self._scratch2[name]
            # m += (1-b1)(g - m); v += (1-b2)(g^2 - v), all without temporaries.
            np.subtract(grad, m, out=num)
            num *= 1.0 - self.beta1
            m += num
            np.multiply(grad, grad, out=den)
            den -= v
            den *= 1.0 - self.beta2
            v += den
            # update = (m / bc1) / (sqrt(v / bc2) + eps)
            np.divide(v, bc2, out=den)
            np.sqrt(den, out=den)
            den += self.epsilon
            np.divide(m, bc1, out=num)
            num /= den
            num *= self.lr
            self.params[name] -= num


@dataclass(frozen=True)
class TrainingSample:
    """One training triplet, optionally with odometry poses g_{tau t}."""

    triplet: FrameTriplet
    poses: Optional[dict] = None  # {"prev": Pose, "next": Pose}


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights.void)
    learning_rate: float = 1.2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    epochs: int = 30
    lr_halve_epochs: tuple = (18, 24)
    pose_source: str = "network"  # "network" | "dataset"
    seed: int = 0
    max_steps: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.pose_source not in ("network", "dataset"):
            raise ValueError("pose_source must be 'network' or 'dataset'")

    @classmethod
    def kitti(cls, **overrides) -> "TrainConfig":
        base = cls(weights=LossWeights.kitti(), learning_rate=1.2e-4,
                   epochs=30, lr_halve_epochs=(18, 24), batch_size=8)
        return replace(base, **overrides)

    @classmethod
    def void(cls, **overrides) -> "TrainConfig":
        base = cls(weights=LossWeights.void(), learning_rate=1e-4,
                   epochs=10, lr_halve_epochs=(6, 8), batch_size=8)
        return replace(base, **overrides)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = cls(
            model=ModelConfig(encoder="vgg8", height=64, width=64),
            weights=LossWeights.void(),
            learning_rate=3e-4,
            epochs=40,
            lr_halve_epochs=(24, 32),
            batch_size=2,
            pose_source="dataset",
        )
        return replace(base, **overrides)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """TOML training config.

        An optional top-level ``preset`` ("kitti" / "void" / "desk") seeds
        the defaults; [model], [optimizer], [training] and [weights] tables
        override individual fields.
        """
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        preset = data.get("preset")
        base = {"kitti": cls.kitti, "void": cls.void, "desk": cls.desk}[preset]() if preset else cls()

        model = base.model
        if "model" in data:
            merged = model.as_dict()
            merged.update(data["model"])
            model = ModelConfig.from_dict(merged)
        weights = base.weights
        if "weights" in data:
            merged_w = {k: getattr(weights, k) for k in
                        ("w_ph", "w_co", "w_st", "w_sz", "w_pc", "w_sm")}
            merged_w.update({k: float(v) for k, v in data["weights"].items()})
            weights = LossWeights(**merged_w)
        fields_update = {"model": model, "weights": weights}
        table = dict(data.get("optimizer", {}))
        table.update(data.get("training", {}))
        for key in ("learning_rate", "beta1", "beta2", "epsilon"):
            if key in table:
                fields_update[key] = float(table.pop(key))
        for key in ("batch_size", "epochs", "seed", "max_steps", "workers"):
            if key in table:
                fields_update[key] = int(table.pop(key))
        if "lr_halve_epochs" in table:
            fields_update["lr_halve_epochs"] = tuple(int(e) for e in table.pop("lr_halve_epochs"))
        if "pose_source" in table:
            fields_update["pose_source"] = str(table.pop("pose_source"))
        if table:
            raise ValueError(f"unknown training config keys: {sorted(table)}")
        return replace(base, **fields_update)


@dataclass
class TrainResult:
    params: ParameterStore
    loss_history: list
    learning_rates: list
    config: TrainConfig

    def save_checkpoint(self, path) -> None:
        save_checkpoint(path, self.params, self.config.model)


def scaffold_input(sparse: SparseDepthMap) -> np.ndarray:
    """Two-channel network input: scaffold depth and its validity."""
    scaffolded = scaffold(sparse)
    return np.stack([scaffolded.depth, scaffolded.validity.astype(float)])


def _precompute_scaffolds(samples, workers: int) -> list:
    if workers <= 1:
        return [scaffold_input(s.triplet.sparse) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: scaffold_input(s.triplet.sparse), samples))


def _dataset_pose_pairs(poses: dict) -> dict:
    return {
        tau: PosePair(PoseNodes.from_pose(poses[tau]), None) for tau in ("prev", "next")
    }


def _network_pose_pairs(pose_net: PoseNetwork, pose_nodes: dict, triplet: FrameTriplet) -> dict:
    curr = triplet.image_curr[None]
    pairs = {}
    for tau, neighbor in (("prev", triplet.image_prev), ("next", triplet.image_next)):
        stacked_fwd = dg.constant(np.concatenate([curr, neighbor[None]], axis=1))
        stacked_bwd = dg.constant(np.concatenate([neighbor[None], curr], axis=1))
        forward_vec = pose_net.forward(stacked_fwd, pose_nodes)
        backward_vec = pose_net.forward(stacked_bwd, pose_nodes)
        pairs[tau] = PosePair(
            pose_net.pose_nodes(forward_vec), pose_net.pose_nodes(backward_vec)
        )
    return pairs


def train(samples, config: TrainConfig, callback=None) -> TrainResult:
    """Optimize the refinement (and optionally pose) network on triplets.

    ``samples`` is a sequence of :class:`TrainingSample`; with
    ``pose_source="dataset"`` every sample must carry odometry poses.
    ``callback(step, loss, params)`` is invoked after every optimizer step
    with the live parameter store; returning truthy stops training early.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    if config.pose_source == "dataset":
        missing = [i for i, s in enumerate(samples) if s.poses is None]
        if missing:
            raise ValueError(f"samples {missing} lack odometry poses")

    depth_net = DepthCompletionNetwork(config.model, seed=config.seed)
    pose_net = PoseNetwork(config.model, seed=config.seed) if config.pose_source == "network" else None

    store = ParameterStore()
    for name, arr in depth_net.params.items():
        store[name] = arr
    if pose_net is not None:
        for name, arr in pose_net.params.items():
            store[name] = arr
    optimizer = Adam(store, config.learning_rate, config.beta1, config.beta2, config.epsilon)

    scaffolds = _precompute_scaffolds(samples, config.workers)
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = max(1, (len(samples) + config.batch_size - 1) // config.batch_size)

    loss_history = []
    lr_history = []
    step = 0
    for epoch in range(config.epochs):
        halvings = sum(1 for boundary in config.lr_halve_epochs if epoch >= boundary)
        optimizer.lr = config.learning_rate * (0.5**halvings)
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), config.batch_size):
            batch = order[start : start + config.batch_size]
            depth_nodes = depth_net.make_parameter_nodes()
            pose_nodes = pose_net.make_parameter_nodes() if pose_net is not None else None

            sample_losses = []
            for index in batch:
                sample = samples[index]
                triplet = sample.triplet
                image = dg.constant(triplet.image_curr[None])
                depth2 = dg.constant(scaffolds[index][None])
                predicted = depth_net.forward(image, depth2, depth_nodes)
                if pose_net is not None:
                    pairs = _network_pose_pairs(pose_net, pose_nodes, triplet)
                else:
                    pairs = _dataset_pose_pairs(sample.poses)
                sample_losses.append(total_loss(triplet, predicted, pairs, config.weights))

            batch_loss = sample_losses[0]
            for extra in sample_losses[1:]:
                batch_loss = dg.add(batch_loss, extra)
            batch_loss = dg.div(batch_loss, float(len(sample_losses)))

            loss_value = float(batch_loss.value)
            if not np.isfinite(loss_value):
                raise DivergedLoss(
                    f"loss became {loss_value} at step {step}; "
                    f"last finite losses: {loss_history[-5:]}"
                )
            dg.backward(batch_loss)

            grads = {name: node.grad for name, node in depth_nodes.items()}
            if pose_nodes is not None:
                grads.update({name: node.grad for name, node in pose_nodes.items()})
            grads = {name: g for name, g in grads.items() if g is not None}
            optimizer.step(grads)

            loss_history.append(loss_value)
            lr_history.append(optimizer.lr)
            step += 1
            if callback is not None and callback(step, loss_value, store):
                return TrainResult(store, loss_history, lr_history, config)
            if config.max_steps is not None and step >= config.max_steps:
                return TrainResult(store, loss_history, lr_history, config)
    return TrainResult(store, loss_history, lr_history, config)


def save_checkpoint(path, params: ParameterStore, model: ModelConfig) -> None:
    params.save(path, meta={"model": model.as_dict()})


def load_checkpoint(path):
    """Returns (ParameterStore, ModelConfig) after validating shapes."""
    store, meta = ParameterStore.load(path)
    if "model" not in meta:
        raise dg.CheckpointMismatch("checkpoint lacks model metadata")
    config = ModelConfig.from_dict(meta["model"])
    expected = DepthCompletionNetwork(config, seed=0).params
    for name, arr in expected.items():
        if name not in store:
            raise dg.CheckpointMismatch(f"checkpoint is missing {name}")
        if store[name].shape != arr.shape:
            raise dg.CheckpointMismatch(
                f"{name}: checkpoint shape {store[name].shape} != expected {arr.shape}"
            )
    return store, config


def infer(params: ParameterStore, config: ModelConfig, image: np.ndarray,
          sparse: SparseDepthMap) -> DenseDepthMap:
    """Scaffold the sparse points and refine with the network."""
    network = DepthCompletionNetwork(config, params=params)
    depth2 = scaffold_input(sparse)
    out = network.forward(dg.constant(image[None]), dg.constant(depth2[None]))
    depth = out.value[0, 0]
    return DenseDepthMap(depth, np.ones_like(depth, dtype=bool))
