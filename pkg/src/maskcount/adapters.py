"""Thin converters from published dataset layouts to the normalized one.

Each converter walks a dataset's native directory layout, pulls the head
coordinates out of the MATLAB annotation containers, and writes the
normalized layout this package consumes everywhere else: a PNG/JPG image
directory, one JSON annotation per image, optional ROI PNGs, and a
manifest.json. Pixels are never touched; images are referenced from the
manifest via relative paths when possible and copied otherwise.

Expected native layouts:
  - ShanghaiTech part: ``images/IMG_<n>.jpg`` + ``ground-truth/GT_IMG_<n>.mat``
    (points under the ``image_info`` struct's ``location`` field);
  - UCF_CC_50: ``<n>.jpg`` + ``<n>_ann.mat`` (``annPoints``);
  - WorldExpo'10: ``frames/<scene>/*.jpg`` + ``labels/<scene>/*.mat``
    (``point_position``) + optional ``rois/<scene>_roi.mat`` with the
    mask vertex coordinate arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .data import DatasetManifest, ManifestEntry, rasterize_polygon, save_annotation
from .exceptions import DataError
from .gt import PointAnnotation


def _load_mat(path):
    try:
        import scipy.io as sio

        return sio.loadmat(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path} is not a readable .mat container: {exc}") from exc


def _extract_points(obj) -> np.ndarray:
    """Dig a numeric (N, 2) coordinate array out of nested .mat structures."""
    stack = [obj]
    while stack:
        cur = stack.pop()
        if not isinstance(cur, np.ndarray):
            continue
        if cur.dtype.names:
            if "location" in cur.dtype.names:
                stack.append(cur["location"])
            else:
                stack.extend(cur[name] for name in cur.dtype.names)
            continue
        if cur.dtype == object:
            stack.extend(cur.ravel().tolist())
            continue
        if cur.ndim == 2 and cur.shape[1] == 2 and np.issubdtype(cur.dtype, np.number):
            return np.asarray(cur, dtype=np.float64)
    raise DataError("no (N, 2) point array found in annotation container")


def _image_size(path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


def _clip_points(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Published annotations occasionally sit a fraction outside the frame."""
    if len(points) == 0:
        return points.reshape(0, 2)
    points = points.copy()
    points[:, 0] = np.clip(points[:, 0], 0.0, width - 1e-6)
    points[:, 1] = np.clip(points[:, 1], 0.0, height - 1e-6)
    return points


def _write_entries(records, out_dir: Path, split: str) -> DatasetManifest:
    out_dir = Path(out_dir)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    seen_stems: set[str] = set()
    roi_cache: dict = {}
    for image_path, points, roi_polygon in records:
        image_path = Path(image_path)
        stem = image_path.stem
        if stem in seen_stems:
            stem = f"{image_path.parent.name}_{image_path.stem}"
        seen_stems.add(stem)
        width, height = _image_size(image_path)
        ann = PointAnnotation(
            width=width, height=height, points=_clip_points(points, width, height)
        )
        ann_rel = f"annotations/{stem}.json"
        save_annotation(out_dir / ann_rel, ann)
        roi_rel = None
        if roi_polygon is not None:
            key = (tuple(map(tuple, roi_polygon)), width, height)
            roi_rel = roi_cache.get(key)
            if roi_rel is None:
                (out_dir / "roi").mkdir(exist_ok=True)
                roi_rel = f"roi/{stem}.png"
                roi = rasterize_polygon(roi_polygon, width, height)
                Image.fromarray(roi * 255).save(out_dir / roi_rel)
                roi_cache[key] = roi_rel
        try:
            image_ref = str(image_path.resolve().relative_to(out_dir.resolve()))
        except ValueError:
            image_ref = str(image_path.resolve())
        entries.append(ManifestEntry(image=image_ref, annotation=ann_rel, roi=roi_rel))
    manifest = DatasetManifest(split=split, entries=entries, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


def convert_shanghaitech(part_dir, out_dir, split: str = "train") -> DatasetManifest:
    """Convert one ShanghaiTech part split (images/ + ground-truth/)."""
    part_dir = Path(part_dir)
    images = sorted((part_dir / "images").glob("*.jpg")) + sorted(
        (part_dir / "images").glob("*.png")
    )
    if not images:
        raise DataError(f"no images under {part_dir / 'images'}")
    records = []
    for image_path in images:
        mat_path = part_dir / "ground-truth" / f"GT_{image_path.stem}.mat"
        if not mat_path.exists():
            raise DataError(f"missing annotation {mat_path}")
        points = _extract_points(_load_mat(mat_path).get("image_info"))
        records.append((image_path, points, None))
    return _write_entries(records, out_dir, split)


def convert_ucf_cc_50(src_dir, out_dir, split: str = "train") -> DatasetManifest:
    """Convert the UCF_CC_50 layout (<n>.jpg + <n>_ann.mat)."""
    src_dir = Path(src_dir)
    images = sorted(src_dir.glob("*.jpg")) + sorted(src_dir.glob("*.png"))
    if not images:
        raise DataError(f"no images under {src_dir}")
    records = []
    for image_path in images:
        mat_path = src_dir / f"{image_path.stem}_ann.mat"
        if not mat_path.exists():
            raise DataError(f"missing annotation {mat_path}")
        mat = _load_mat(mat_path)
        source = mat.get("annPoints", mat)
        records.append((image_path, _extract_points(source), None))
    return _write_entries(records, out_dir, split)


def _roi_polygon_from_mat(mat) -> list[tuple[float, float]]:
    try:
        xs = np.asarray(mat["maskVerticesXCoordinates"], dtype=np.float64).ravel()
        ys = np.asarray(mat["maskVerticesYCoordinates"], dtype=np.float64).ravel()
    except KeyError as exc:
        raise DataError(f"roi container is missing {exc}") from exc
    if len(xs) != len(ys) or len(xs) < 3:
        raise DataError("roi vertex arrays are inconsistent")
    return list(zip(xs, ys))


def convert_worldexpo(src_dir, out_dir, split: str = "train") -> DatasetManifest:
    """Convert WorldExpo'10 frames/labels/rois into the normalized layout.

    The per-scene ROI polygon, when present, is rasterized once and shared
    by every frame of that scene.
    """
    src_dir = Path(src_dir)
    frames_root = src_dir / "frames"
    labels_root = src_dir / "labels"
    if not frames_root.is_dir() or not labels_root.is_dir():
        raise DataError(f"expected frames/ and labels/ under {src_dir}")
    records = []
    roi_by_scene = {}
    for scene_dir in sorted(p for p in frames_root.iterdir() if p.is_dir()):
        scene = scene_dir.name
        roi_mat = src_dir / "rois" / f"{scene}_roi.mat"
        if roi_mat.exists():
            roi_by_scene[scene] = _roi_polygon_from_mat(_load_mat(roi_mat))
        for image_path in sorted(scene_dir.glob("*.jpg")) + sorted(scene_dir.glob("*.png")):
            mat_path = labels_root / scene / f"{image_path.stem}.mat"
            if not mat_path.exists():
                raise DataError(f"missing annotation {mat_path}")
            mat = _load_mat(mat_path)
            source = mat.get("point_position", mat)
            records.append((image_path, _extract_points(source), roi_by_scene.get(scene)))
    if not records:
        raise DataError(f"no frames found under {frames_root}")
    return _write_entries(records, out_dir, split)
