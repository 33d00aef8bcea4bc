"""Dataset readers/writers, sparse subsampling and the synthetic generator."""

from pathlib import Path

from .depthpng import (
    BadFormat,
    read_depth_png,
    read_image_png,
    write_depth_png,
    write_image_png,
)
from .manifest import (
    DatasetManifest,
    TripletRecord,
    load_intrinsics,
    save_intrinsics,
)
from .sampling import DENSITY_PRESETS, InsufficientValidPixels, subsample_sparse
from .sparsefile import (
    depth_map_to_sparse,
    load_sparse,
    save_sparse,
    sparse_to_depth_map,
)
from .synthetic import (
    Box,
    SceneConfig,
    SyntheticTriplet,
    Texture,
    WallPlane,
    render_frame,
    render_triplet,
)

__all__ = [
    "BadFormat",
    "Box",
    "DENSITY_PRESETS",
    "DatasetManifest",
    "InsufficientValidPixels",
    "SceneConfig",
    "SyntheticTriplet",
    "Texture",
    "TripletRecord",
    "WallPlane",
    "depth_map_to_sparse",
    "generate_synthetic",
    "load_intrinsics",
    "read_depth_png",
    "load_sparse",
    "read_image_png",
    "render_frame",
    "render_triplet",
    "save_intrinsics",
    "save_sparse",
    "sparse_to_depth_map",
    "subsample_sparse",
    "write_depth_png",
    "write_image_png",
]


def generate_synthetic(
    scene: SceneConfig, n_triplets: int, seed: int, out_dir
) -> DatasetManifest:
    """Render a dataset to disk and return its manifest.

    Layout: images/, sparse/ and depth/ subdirectories of 8-bit RGB and
    16-bit depth PNGs, one intrinsics.json, and manifest.jsonl tying the
    triplets together with their true relative poses.
    """
    out_dir = Path(out_dir)
    for sub in ("images", "sparse", "depth"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    save_intrinsics(out_dir / "intrinsics.json", scene.intrinsics)

    records = []
    for index in range(n_triplets):
        sample = render_triplet(scene, index, seed=seed)
        names = {}
        for tag, image in zip(("prev", "curr", "next"), sample.images):
            name = f"images/frame_{index:04d}_{tag}.png"
            write_image_png(out_dir / name, image)
            names[tag] = name
        sparse_name = f"sparse/frame_{index:04d}.png"
        write_depth_png(out_dir / sparse_name, sparse_to_depth_map(sample.sparse))
        gt_name = f"depth/frame_{index:04d}.png"
        write_depth_png(out_dir / gt_name, sample.depth_curr)
        records.append(
            TripletRecord(
                image_prev=names["prev"],
                image_curr=names["curr"],
                image_next=names["next"],
                sparse_depth=sparse_name,
                intrinsics="intrinsics.json",
                ground_truth=gt_name,
                pose_prev=sample.pose_prev,
                pose_next=sample.pose_next,
            )
        )
    manifest = DatasetManifest(root=out_dir, records=records)
    manifest.save()
    return manifest
