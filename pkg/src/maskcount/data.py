"""Dataset ingestion and the seeded synthetic scene generator.

File formats:
  - annotations: JSON ``{"width": int, "height": int, "points": [[x, y], ...]}``
    or a CSV of ``x,y`` rows (image dimensions then come from the paired image);
  - ROI: grayscale PNG (nonzero = inside) or ``{"polygon": [[x, y], ...]}``
    JSON rasterised with the even-odd rule;
  - density maps: ``.npy`` (self-describing shape header + row-major float32);
  - manifests: JSON list of per-image entries with paths relative to the
    manifest file.

The synthetic generator renders Gaussian-profile bright blobs at exact
annotated coordinates over a flat/gradient/noise background, so counting is
learnable but annotations stay exact. Everything is deterministic per seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, ImageDraw

from .exceptions import DataError
from .gt import GtConfig, PointAnnotation, apply_roi, derive_mask, generate_density_map
from .validation import as_image, check_roi

BACKGROUNDS = ("flat", "gradient", "noise")


# ---------------------------------------------------------------------------
# file formats


def load_image(path) -> np.ndarray:
    """Load a grayscale image as float64 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.array(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return as_image(arr)


def save_image(path, image: np.ndarray) -> None:
    """Save a float [0,1] grayscale image as 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="L").save(path)


def load_annotation(path, image_path=None) -> PointAnnotation:
    """Load a JSON or CSV annotation file.

    CSV files carry only x,y pairs, so the paired image supplies the
    dimensions.
    """
    path = Path(path)
    try:
        if path.suffix.lower() == ".csv":
            if image_path is None:
                raise DataError(f"CSV annotation {path} needs a paired image for dimensions")
            with Image.open(image_path) as im:
                width, height = im.size
            with open(path, newline="") as fh:
                rows = [row for row in csv.reader(fh) if row]
            points = [(float(r[0]), float(r[1])) for r in rows]
            return PointAnnotation(width=width, height=height, points=np.array(points))
        with open(path) as fh:
            obj = json.load(fh)
        return PointAnnotation(
            width=int(obj["width"]),
            height=int(obj["height"]),
            points=np.array(obj.get("points", []), dtype=np.float64),
        )
    except DataError:
        raise
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse annotation {path}: {exc}") from exc


def save_annotation(path, ann: PointAnnotation) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"width": ann.width, "height": ann.height, "points": ann.points.tolist()},
            fh,
        )


def rasterize_polygon(polygon, width: int, height: int) -> np.ndarray:
    """Rasterise a polygon to a {0,1} mask using the even-odd fill rule."""
    im = Image.new("L", (width, height), 0)
    ImageDraw.Draw(im).polygon([(float(x), float(y)) for x, y in polygon], fill=1)
    return np.array(im, dtype=np.uint8)


def load_roi(path, width: int, height: int) -> np.ndarray:
    """Load an ROI mask from PNG (nonzero = inside) or polygon JSON."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            with open(path) as fh:
                obj = json.load(fh)
            roi = rasterize_polygon(obj["polygon"], width, height)
        else:
            with Image.open(path) as im:
                roi = (np.array(im.convert("L")) > 0).astype(np.uint8)
        return check_roi(roi)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load roi {path}: {exc}") from exc


def save_density(path, density: np.ndarray) -> None:
    """Persist a density map as a float32 .npy container."""
    np.save(path, np.asarray(density, dtype=np.float32))


def load_density(path) -> np.ndarray:
    try:
        arr = np.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load density map {path}: {exc}") from exc
    return arr


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    image: str
    annotation: str
    roi: str | None = None


@dataclass
class DatasetManifest:
    """List of dataset entries with paths resolved against the manifest dir."""

    split: str
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            with open(path) as fh:
                obj = json.load(fh)
            entries = [
                ManifestEntry(e["image"], e["annotation"], e.get("roi"))
                for e in obj["entries"]
            ]
            split = obj.get("split", "train")
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load manifest {path}: {exc}") from exc
        return cls(split=split, entries=entries, root=path.parent)

    def save(self, path) -> None:
        path = Path(path)
        obj = {
            "split": self.split,
            "entries": [
                {"image": e.image, "annotation": e.annotation, "roi": e.roi}
                for e in self.entries
            ],
        }
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1)


@dataclass
class LoadedEntry:
    """One dataset item at full resolution, ROI already applied if present."""

    image_id: str
    image: np.ndarray
    density: np.ndarray
    mask: np.ndarray
    roi: np.ndarray | None
    gt_count: float


def load_dataset(manifest: DatasetManifest, gt_cfg: GtConfig | None = None) -> Iterator[LoadedEntry]:
    """Yield (image, density, mask, roi?) tuples for each manifest entry.

    Ground truth is generated on the fly from the annotations; the frame and
    its density map are both masked with the ROI when one is present.
    Downsampling to the network output stride is the trainer's job.
    """
    gt_cfg = gt_cfg or GtConfig()
    for entry in manifest.entries:
        img_path = manifest.resolve(entry.image)
        image = load_image(img_path)
        try:
            ann = load_annotation(manifest.resolve(entry.annotation), image_path=img_path)
        except DataError:
            raise
        if ann.height != image.shape[0] or ann.width != image.shape[1]:
            raise DataError(
                f"annotation {entry.annotation} declares {ann.width}x{ann.height} "
                f"but image {entry.image} is {image.shape[1]}x{image.shape[0]}"
            )
        density = generate_density_map(ann, gt_cfg.sigma, gt_cfg.radius)
        roi = None
        if entry.roi is not None:
            roi = load_roi(manifest.resolve(entry.roi), ann.width, ann.height)
            image = apply_roi(image, roi)
            density = apply_roi(density, roi)
        mask = derive_mask(density)
        yield LoadedEntry(
            image_id=Path(entry.image).stem,
            image=image,
            density=density,
            mask=mask,
            roi=roi,
            gt_count=float(density.sum()),
        )


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneSpec:
    """Parameters of the synthetic crowd-scene generator."""

    width: int = 192
    height: int = 160
    count_range: tuple[int, int] = (10, 60)
    head_radius_range: tuple[float, float] = (2.0, 5.0)
    background: str = "flat"
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.count_range
        if lo > hi or lo < 0:
            raise ValueError("count_range must satisfy 0 <= min <= max")
        rlo, rhi = self.head_radius_range
        if rlo <= 0 or rlo > rhi:
            raise ValueError("head radii must be positive with min <= max")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}")


def _render_background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    if spec.background == "flat":
        return np.full((h, w), 0.08)
    if spec.background == "gradient":
        ramp = np.linspace(0.02, 0.25, w)
        return np.tile(ramp, (h, 1))
    return rng.uniform(0.0, 0.15, size=(h, w))


def render_scene(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Render one scene; returns (image in [0,1], exact head points (N,2))."""
    h, w = spec.height, spec.width
    count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    # keep blob centres away from the border so heads stay visibly distinct
    margin = 1.0
    xs = rng.uniform(margin, w - 1 - margin, size=count)
    ys = rng.uniform(margin, h - 1 - margin, size=count)
    radii = rng.uniform(*spec.head_radius_range, size=count)
    intensities = rng.uniform(0.6, 1.0, size=count)

    image = _render_background(spec, rng)
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    for x, y, r, a in zip(xs, ys, radii, intensities):
        extent = int(np.ceil(3 * r))
        cx, cy = int(round(x)), int(round(y))
        x0, x1 = max(0, cx - extent), min(w, cx + extent + 1)
        y0, y1 = max(0, cy - extent), min(h, cy + extent + 1)
        sq = (yy[y0:y1] - y) ** 2 + (xx[:, x0:x1] - x) ** 2
        image[y0:y1, x0:x1] += a * np.exp(-sq / (2.0 * r * r))
    image = np.clip(image, 0.0, 1.0)
    points = np.stack([xs, ys], axis=1) if count else np.zeros((0, 2))
    return image, points


def synth_generate(spec: SceneSpec, n_images: int, out_dir) -> DatasetManifest:
    """Generate ``n_images`` scenes plus exact annotations under ``out_dir``.

    Deterministic per spec.seed: the same spec always produces bitwise
    identical images and annotations.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for i in range(n_images):
        image, points = render_scene(spec, rng)
        img_rel = f"images/scene_{i:05d}.png"
        ann_rel = f"annotations/scene_{i:05d}.json"
        save_image(out_dir / img_rel, image)
        save_annotation(
            out_dir / ann_rel,
            PointAnnotation(width=spec.width, height=spec.height, points=points),
        )
        entries.append(ManifestEntry(image=img_rel, annotation=ann_rel))
    manifest = DatasetManifest(split="train", entries=entries, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
