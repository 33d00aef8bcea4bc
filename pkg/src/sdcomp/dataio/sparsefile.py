"""Sparse depth on disk: JSON point lists or sparse-valued 16-bit PNGs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..scaffold import DenseDepthMap, SparseDepthMap
from .depthpng import BadFormat, read_depth_png, write_depth_png


def sparse_to_depth_map(zs: SparseDepthMap) -> DenseDepthMap:
    """Dense zero-filled image holding the sparse points (PNG convention)."""
    dense = np.zeros((zs.height, zs.width))
    mask = np.zeros((zs.height, zs.width), dtype=bool)
    for u, v, z in zs.points:
        dense[int(round(v)), int(round(u))] = z
        mask[int(round(v)), int(round(u))] = True
    return DenseDepthMap(dense, mask)


def depth_map_to_sparse(dmap: DenseDepthMap) -> SparseDepthMap:
    vs, us = np.nonzero(dmap.validity)
    points = np.column_stack([us.astype(float), vs.astype(float), dmap.depth[vs, us]])
    return SparseDepthMap(dmap.width, dmap.height, points)


def save_sparse_json(path, zs: SparseDepthMap) -> None:
    payload = {
        "width": zs.width,
        "height": zs.height,
        "points": [[float(u), float(v), float(z)] for u, v, z in zs.points],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_sparse_json(path) -> SparseDepthMap:
    try:
        data = json.loads(Path(path).read_text())
        return SparseDepthMap(
            int(data["width"]), int(data["height"]), np.asarray(data["points"], dtype=float)
        )
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise BadFormat(f"{path}: not a sparse-point JSON file: {err}") from None


def load_sparse(path) -> SparseDepthMap:
    """Sparse depth from either a .json point list or a 16-bit PNG."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return load_sparse_json(path)
    return depth_map_to_sparse(read_depth_png(path))


def save_sparse(path, zs: SparseDepthMap) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        save_sparse_json(path, zs)
    else:
        write_depth_png(path, sparse_to_depth_map(zs))
