"""Line-delimited JSON dataset manifests.

Each line describes one training triplet: image paths, the sparse depth
map, optional ground truth, camera intrinsics and optional odometry poses.
Paths are relative to the manifest's directory. Pose fields hold the
relative pose g_{tau t} mapping center-frame points into the neighbor
frame (prev or next), i.e. they are directly usable for view synthesis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..geometry import CameraIntrinsics, Pose, Rotation
from ..losses import FrameTriplet

from .depthpng import read_depth_png, read_image_png
from .sparsefile import depth_map_to_sparse


def save_intrinsics(path, intrinsics: CameraIntrinsics) -> None:
    payload = {
        "fx": intrinsics.fx,
        "fy": intrinsics.fy,
        "cx": intrinsics.cx,
        "cy": intrinsics.cy,
        "width": intrinsics.width,
        "height": intrinsics.height,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_intrinsics(path) -> CameraIntrinsics:
    data = json.loads(Path(path).read_text())
    return CameraIntrinsics(
        fx=float(data["fx"]),
        fy=float(data["fy"]),
        cx=float(data["cx"]),
        cy=float(data["cy"]),
        width=int(data["width"]),
        height=int(data["height"]),
    )


def _pose_to_json(pose: Optional[Pose]):
    if pose is None:
        return None
    return {
        "rotation": pose.rotation.matrix.tolist(),
        "translation": pose.translation.tolist(),
    }


def _pose_from_json(data) -> Optional[Pose]:
    if data is None:
        return None
    return Pose(
        Rotation(np.array(data["rotation"], dtype=float)),
        np.array(data["translation"], dtype=float),
    )


@dataclass(frozen=True)
class TripletRecord:
    image_prev: str
    image_curr: str
    image_next: str
    sparse_depth: str
    intrinsics: str
    ground_truth: Optional[str] = None
    pose_prev: Optional[Pose] = None
    pose_next: Optional[Pose] = None

    def to_json(self) -> dict:
        return {
            "image_prev": self.image_prev,
            "image_curr": self.image_curr,
            "image_next": self.image_next,
            "sparse_depth": self.sparse_depth,
            "intrinsics": self.intrinsics,
            "ground_truth": self.ground_truth,
            "pose_prev": _pose_to_json(self.pose_prev),
            "pose_next": _pose_to_json(self.pose_next),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TripletRecord":
        return cls(
            image_prev=data["image_prev"],
            image_curr=data["image_curr"],
            image_next=data["image_next"],
            sparse_depth=data["sparse_depth"],
            intrinsics=data["intrinsics"],
            ground_truth=data.get("ground_truth"),
            pose_prev=_pose_from_json(data.get("pose_prev")),
            pose_next=_pose_from_json(data.get("pose_next")),
        )


@dataclass
class DatasetManifest:
    """A list of triplet records rooted at a directory."""

    root: Path
    records: list

    def __len__(self) -> int:
        return len(self.records)

    def save(self, path=None) -> Path:
        path = Path(path) if path else self.root / "manifest.jsonl"
        with open(path, "w") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_json()) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        """Parse and validate a manifest; all referenced files must exist."""
        path = Path(path)
        root = path.parent
        records = []
        with open(path) as fh:
            for line_number, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = TripletRecord.from_json(json.loads(line))
                except (json.JSONDecodeError, KeyError) as err:
                    raise ValueError(f"{path}:{line_number}: bad record: {err}") from None
                for attr in ("image_prev", "image_curr", "image_next", "sparse_depth", "intrinsics"):
                    rel = getattr(record, attr)
                    if not (root / rel).exists():
                        raise FileNotFoundError(f"{path}:{line_number}: missing {rel}")
                if record.ground_truth and not (root / record.ground_truth).exists():
                    raise FileNotFoundError(
                        f"{path}:{line_number}: missing {record.ground_truth}"
                    )
                records.append(record)
        manifest = cls(root=root, records=records)
        if records:
            first = manifest.intrinsics()
            for record in records[1:]:
                if load_intrinsics(root / record.intrinsics) != first:
                    raise ValueError(f"{path}: inconsistent intrinsics across records")
        return manifest

    def intrinsics(self) -> CameraIntrinsics:
        return load_intrinsics(self.root / self.records[0].intrinsics)

    def load_triplet(self, index: int):
        """Materialize record ``index``.

        Returns (FrameTriplet, ground-truth DenseDepthMap or None,
        poses dict or None with keys "prev"/"next").
        """
        record = self.records[index]
        intrinsics = load_intrinsics(self.root / record.intrinsics)
        images = [
            read_image_png(self.root / p)
            for p in (record.image_prev, record.image_curr, record.image_next)
        ]
        shapes = {img.shape for img in images}
        if len(shapes) != 1:
            raise ValueError(f"record {index}: mismatched image shapes {shapes}")
        sparse = depth_map_to_sparse(read_depth_png(self.root / record.sparse_depth))
        triplet = FrameTriplet(
            image_prev=images[0],
            image_curr=images[1],
            image_next=images[2],
            sparse=sparse,
            intrinsics=intrinsics,
        )
        gt = read_depth_png(self.root / record.ground_truth) if record.ground_truth else None
        poses = None
        if record.pose_prev is not None and record.pose_next is not None:
            poses = {"prev": record.pose_prev, "next": record.pose_next}
        return triplet, gt, poses
