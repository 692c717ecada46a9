"""Raster ingest pipeline: dynamic-range compression to 8-bit, resolution-consistent
tiling, affine pixel/geo mapping, co-occurrence texture features, and the
KNN-based low-information filter.

Geotransform convention: six reals (c, a, b, f, d, e) mapping pixel (col, row)
to geographic (X, Y) as X = c + a*col + b*row, Y = f + d*col + e*row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, GeometryError

WGS84 = "EPSG:4326"
DEFAULT_EXTENT_M = 1024.0
DEFAULT_GLCM_LEVELS = 32
DEFAULT_GLCM_OFFSETS = ((0, 1), (1, 0))


@dataclass
class GeoRaster:
    """Pixel grid with an affine geotransform and a ground resolution."""

    width: int
    height: int
    pixels: np.ndarray
    geotransform: tuple
    resolution_m: float
    crs: str = WGS84

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.shape != (self.height, self.width):
            raise DataError(
                f"pixel grid {self.pixels.shape} does not match declared {self.height}x{self.width}")
        if len(self.geotransform) != 6:
            raise GeometryError(f"geotransform needs 6 coefficients, got {len(self.geotransform)}")
        self.geotransform = tuple(float(v) for v in self.geotransform)
        c, a, b, f, d, e = self.geotransform
        if a * e - b * d == 0:
            raise GeometryError("geotransform is singular (a*e - b*d == 0)")
        if self.resolution_m <= 0:
            raise DataError(f"resolution_m must be positive, got {self.resolution_m}")


@dataclass
class GeoTile(GeoRaster):
    """One window of a parent raster; (ti, tj) are the grid indices."""

    parent_id: str = ""
    ti: int = 0
    tj: int = 0


@dataclass(frozen=True)
class TileFeatures:
    glcm_contrast: float
    glcm_energy: float
    glcm_homogeneity: float
    glcm_entropy: float
    mean: float
    stddev: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.glcm_contrast, self.glcm_energy, self.glcm_homogeneity,
                         self.glcm_entropy, self.mean, self.stddev], dtype=np.float64)


@dataclass
class FilterReport:
    features: TileFeatures
    knn_score: Optional[float]
    kept: bool
    reason: Optional[str] = None

    def __post_init__(self):
        if self.kept == (self.reason is not None):
            raise DataError("a report is either kept or carries a rejection reason, never both")


@dataclass
class FilterResult:
    reports: list
    stage_b_skipped: bool = False


def compress_to_u8(raster: GeoRaster, p_low: float = 1.0, p_high: float = 99.0) -> GeoRaster:
    """Percentile-clip the dynamic range and rescale linearly to [0, 255].

    Rounds half-up; a constant raster maps to all zeros.
    """
    if not p_low < p_high:
        raise ConfigurationError(f"need p_low < p_high, got {p_low} >= {p_high}")
    values = np.asarray(raster.pixels, dtype=np.float64)
    if values.size == 0 or np.all(np.isnan(values)):
        raise DataError("raster has no finite pixels to compress")
    v_low, v_high = np.nanpercentile(values, [p_low, p_high])
    if v_high <= v_low:
        out = np.zeros_like(values, dtype=np.uint8)
    else:
        clipped = np.clip(values, v_low, v_high)
        clipped = np.where(np.isnan(clipped), v_low, clipped)
        scaled = (clipped - v_low) / (v_high - v_low) * 255.0
        out = np.floor(scaled + 0.5).astype(np.uint8)
    return replace(raster, pixels=out)


def src_window_px(resolution_m: float, target_extent_m: float = DEFAULT_EXTENT_M,
                  patch_size: int = 16) -> int:
    """Window size in pixels covering `target_extent_m` of ground at this resolution.

    Ceil of extent/resolution, then up to the next multiple of patch_size so the
    tiles stay encoder-compatible.
    """
    if resolution_m <= 0 or target_extent_m <= 0:
        raise ConfigurationError("resolution and target extent must be positive")
    if patch_size <= 0:
        raise ConfigurationError("patch_size must be positive")
    window = math.ceil(target_extent_m / resolution_m)
    window = ((window + patch_size - 1) // patch_size) * patch_size
    if window < patch_size:
        raise ConfigurationError(f"window {window} smaller than patch_size {patch_size}")
    return window


def tile_geotransform(parent: Sequence[float], col_off: int, row_off: int) -> tuple:
    c, a, b, f, d, e = parent
    return (c + a * col_off + b * row_off, a, b,
            f + d * col_off + e * row_off, d, e)


def tile_scene(raster: GeoRaster, window_px: int, parent_id: str = "scene") -> list:
    """Non-overlapping row-major grid from the top-left; trailing partials dropped."""
    if window_px <= 0:
        raise ConfigurationError(f"window must be positive, got {window_px}")
    tiles = []
    n_rows = raster.height // window_px
    n_cols = raster.width // window_px
    for ti in range(n_rows):
        for tj in range(n_cols):
            r0, c0 = ti * window_px, tj * window_px
            tiles.append(GeoTile(
                width=window_px,
                height=window_px,
                pixels=raster.pixels[r0:r0 + window_px, c0:c0 + window_px].copy(),
                geotransform=tile_geotransform(raster.geotransform, c0, r0),
                resolution_m=raster.resolution_m,
                crs=raster.crs,
                parent_id=parent_id,
                ti=ti,
                tj=tj,
            ))
    return tiles


def pixel_to_geo(geotransform: Sequence[float], col: float, row: float) -> tuple:
    c, a, b, f, d, e = geotransform
    return (c + a * col + b * row, f + d * col + e * row)


def geo_to_pixel(geotransform: Sequence[float], x: float, y: float) -> tuple:
    c, a, b, f, d, e = geotransform
    det = a * e - b * d
    if det == 0:
        raise GeometryError("geotransform is singular, cannot invert")
    dx, dy = x - c, y - f
    col = (e * dx - b * dy) / det
    row = (a * dy - d * dx) / det
    return (col, row)


def glcm_features(pixels: np.ndarray, levels: int = DEFAULT_GLCM_LEVELS,
                  offsets: Sequence = DEFAULT_GLCM_OFFSETS) -> TileFeatures:
    """Symmetrized gray-level co-occurrence features averaged over the offsets.

    Pixels (8-bit values) are binned into `levels` equal-width bins over the
    full 0..255 range, so shifts that stay inside a bin leave the features
    unchanged.
    """
    if levels < 2:
        raise ConfigurationError(f"levels must be >= 2, got {levels}")
    img = np.asarray(pixels)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise DataError(f"need at least a 2x2 tile, got shape {img.shape}")
    binned = (img.astype(np.int64) * levels) // 256
    binned = np.clip(binned, 0, levels - 1)

    per_offset = []
    for drow, dcol in offsets:
        h, w = binned.shape
        src = binned[max(0, -drow):h - max(0, drow), max(0, -dcol):w - max(0, dcol)]
        dst = binned[max(0, drow):h + min(0, drow), max(0, dcol):w + min(0, dcol)]
        if src.size == 0:
            raise DataError(f"offset {(drow, dcol)} yields no pixel pairs on shape {img.shape}")
        counts = np.zeros((levels, levels), dtype=np.float64)
        np.add.at(counts, (src.ravel(), dst.ravel()), 1.0)
        counts = counts + counts.T
        prob = counts / counts.sum()
        i_idx, j_idx = np.indices((levels, levels))
        contrast = float((prob * (i_idx - j_idx) ** 2).sum())
        energy = float((prob ** 2).sum())
        homogeneity = float((prob / (1.0 + np.abs(i_idx - j_idx))).sum())
        pos = prob[prob > 0]
        entropy = float(-(pos * np.log(pos)).sum())
        per_offset.append((contrast, energy, homogeneity, entropy))

    avg = np.mean(np.asarray(per_offset), axis=0)
    flat = img.astype(np.float64)
    return TileFeatures(
        glcm_contrast=float(avg[0]),
        glcm_energy=float(avg[1]),
        glcm_homogeneity=float(avg[2]),
        glcm_entropy=float(avg[3]),
        mean=float(flat.mean()),
        stddev=float(flat.std()),
    )


def knn_filter(features: Sequence[TileFeatures], k: int = 5, entropy_floor: float = 0.5,
               outlier_percentile: float = 99.0) -> FilterResult:
    """Two-stage filter: entropy floor, then KNN-distance outlier rejection.

    Stage B z-normalizes the survivors' 6-feature vectors and rejects tiles
    whose mean distance to the k nearest neighbors exceeds the given percentile
    of the score distribution. With fewer than k+1 survivors stage B is skipped.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    reports = [None] * len(features)
    survivors = []
    for idx, feat in enumerate(features):
        if feat.glcm_entropy < entropy_floor:
            reports[idx] = FilterReport(feat, knn_score=None, kept=False, reason="low_information")
        else:
            survivors.append(idx)

    if len(survivors) < k + 1:
        for idx in survivors:
            reports[idx] = FilterReport(features[idx], knn_score=None, kept=True)
        return FilterResult(reports=reports, stage_b_skipped=True)

    matrix = np.stack([features[i].as_vector() for i in survivors])
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    std[std == 0] = 1.0
    z = (matrix - mean) / std
    dists = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=2)
    np.fill_diagonal(dists, np.inf)
    scores = np.sort(dists, axis=1)[:, :k].mean(axis=1)
    cut = np.percentile(scores, outlier_percentile)
    for pos, idx in enumerate(survivors):
        score = float(scores[pos])
        if score > cut:
            reports[idx] = FilterReport(features[idx], knn_score=score, kept=False,
                                        reason="structural_outlier")
        else:
            reports[idx] = FilterReport(features[idx], knn_score=score, kept=True)
    return FilterResult(reports=reports, stage_b_skipped=False)


# --- raster and manifest IO --------------------------------------------------------


def write_sidecar(path: Path, raster: GeoRaster) -> None:
    payload = {
        "width": raster.width,
        "height": raster.height,
        "geotransform": list(raster.geotransform),
        "resolution_m": raster.resolution_m,
        "crs": raster.crs,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def save_raster_f32(payload_path: Path, sidecar_path: Path, raster: GeoRaster) -> None:
    """Raw little-endian f32 row-major payload plus the JSON sidecar."""
    data = np.asarray(raster.pixels, dtype="<f4")
    Path(payload_path).write_bytes(data.tobytes(order="C"))
    write_sidecar(sidecar_path, raster)


def load_raster(payload_path: Path, sidecar_path: Path) -> GeoRaster:
    meta = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    raw = Path(payload_path).read_bytes()
    expected = meta["width"] * meta["height"] * 4
    if len(raw) != expected:
        raise DataError(f"payload holds {len(raw)} bytes, sidecar implies {expected}")
    pixels = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    pixels = pixels.reshape(meta["height"], meta["width"])
    return GeoRaster(width=meta["width"], height=meta["height"], pixels=pixels,
                     geotransform=tuple(meta["geotransform"]),
                     resolution_m=meta["resolution_m"], crs=meta.get("crs", WGS84))


def save_pgm(path: Path, pixels: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255)."""
    img = np.asarray(pixels)
    if img.dtype != np.uint8:
        raise DataError(f"PGM output requires uint8 pixels, got {img.dtype}")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes(order="C"))


def load_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DataError(f"{path} is not a maxval-255 binary PGM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
    if data.size != w * h:
        raise DataError(f"PGM payload truncated in {path}")
    return data.reshape(h, w)


@dataclass
class IngestConfig:
    extent_m: float = DEFAULT_EXTENT_M
    p_low: float = 1.0
    p_high: float = 99.0
    levels: int = DEFAULT_GLCM_LEVELS
    k: int = 5
    entropy_floor: float = 0.5
    outlier_percentile: float = 99.0
    patch_size: int = 16
    offsets: Sequence = field(default=DEFAULT_GLCM_OFFSETS)


def run_ingest(scene_payload: Path, sidecar: Path, out_dir: Path,
               cfg: IngestConfig = IngestConfig(), parent_id: Optional[str] = None) -> dict:
    """Full pipeline: load, compress, tile, featurize, filter, and write the manifest.

    Returns a summary dict with tile counts; tile pixel files (PGM) and a
    JSON-lines manifest land in `out_dir`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raster = load_raster(scene_payload, sidecar)
    parent = parent_id if parent_id is not None else Path(scene_payload).stem
    compressed = compress_to_u8(raster, cfg.p_low, cfg.p_high)
    window = src_window_px(raster.resolution_m, cfg.extent_m, cfg.patch_size)
    tiles = tile_scene(compressed, window, parent_id=parent)

    feature_list = [glcm_features(t.pixels, cfg.levels, cfg.offsets) for t in tiles]
    result = knn_filter(feature_list, cfg.k, cfg.entropy_floor, cfg.outlier_percentile)

    manifest_path = out_dir / "manifest.jsonl"
    with manifest_path.open("w", encoding="utf-8") as manifest:
        for tile, feat, report in zip(tiles, feature_list, result.reports):
            tile_name = f"{parent}_t{tile.ti}_{tile.tj}.pgm"
            save_pgm(out_dir / tile_name, tile.pixels)
            write_sidecar(out_dir / f"{parent}_t{tile.ti}_{tile.tj}.json", tile)
            row = {
                "tile_path": tile_name,
                "parent_id": tile.parent_id,
                "ti": tile.ti,
                "tj": tile.tj,
                "geotransform": list(tile.geotransform),
                "resolution_m": tile.resolution_m,
                "features": {
                    "glcm_contrast": feat.glcm_contrast,
                    "glcm_energy": feat.glcm_energy,
                    "glcm_homogeneity": feat.glcm_homogeneity,
                    "glcm_entropy": feat.glcm_entropy,
                    "mean": feat.mean,
                    "stddev": feat.stddev,
                },
                "knn_score": report.knn_score,
                "kept": report.kept,
                "reason": report.reason,
            }
            manifest.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    kept = sum(1 for r in result.reports if r.kept)
    return {
        "tiles": len(tiles),
        "kept": kept,
        "rejected": len(tiles) - kept,
        "window_px": window,
        "stage_b_skipped": result.stage_b_skipped,
        "manifest": str(manifest_path),
    }
