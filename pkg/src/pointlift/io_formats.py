"""On-disk contracts: scene bundles, teacher outputs, feature matrices, labels.

Binary payloads are little-endian 32-bit floats (``.f32``) or unsigned 16-bit
integers (``.u16``) with JSON sidecar headers, so every artifact is bit-exact,
language-neutral, and diff-able at the metadata level.

Scene directory layout::

    scene.json       metadata, camera calibration, dims, endianness
    points.f32       N x 3
    features.f32     N x E
    gt_labels.u16    N (optional, evaluation only)

Teacher directory layout (one per scene)::

    masks.json       per image: RLE masks, prompt id, global mask index
    mask_feats.f32   R x D
    text_feats.f32   T x D (one row per dictionary prompt)
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .projection import UNLABELED, CalibratedCamera


class FormatError(ValueError):
    """Raised on malformed or inconsistent on-disk data."""


@dataclass
class SceneBundle:
    """One scene: coordinates, raw per-point features, cameras, optional labels."""

    points: np.ndarray  # (N, 3) float32, meters
    raw_features: np.ndarray  # (N, E) float32
    cameras: list[CalibratedCamera]
    gt_labels: np.ndarray | None = None  # (N,) uint16
    name: str = "scene"

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32)
        self.raw_features = np.ascontiguousarray(self.raw_features, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise FormatError("points must be an N x 3 array")
        n = self.points.shape[0]
        if n < 1:
            raise FormatError("scene must contain at least one point")
        if self.raw_features.ndim != 2 or self.raw_features.shape[0] != n:
            raise FormatError("raw_features must be an N x E array")
        if self.raw_features.shape[1] < 1:
            raise FormatError("feature dimension must be at least 1")
        if not np.isfinite(self.points).all():
            raise FormatError("non-finite point coordinates")
        if not np.isfinite(self.raw_features).all():
            raise FormatError("non-finite raw features")
        if self.gt_labels is not None:
            self.gt_labels = np.ascontiguousarray(self.gt_labels, dtype=np.uint16)
            if self.gt_labels.shape != (n,):
                raise FormatError("gt_labels length must equal the point count")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.raw_features.shape[1]


@dataclass
class Mask:
    """One teacher mask: run-length-encoded pixel set plus its prompt id."""

    index: int  # global row into mask_feats
    prompt: int  # row into the dictionary's prompt list / text_feats
    rle: np.ndarray  # (k, 2) int64 pairs (start, run), row-major pixel order

    def pixel_count(self) -> int:
        return int(self.rle[:, 1].sum()) if len(self.rle) else 0


@dataclass
class MaskSet:
    """All masks of one image, with their feature rows and the shared text features."""

    camera_index: int
    width: int
    height: int
    masks: list[Mask]
    mask_features: np.ndarray  # (len(masks), D) float32, local order = mask order
    text_features: np.ndarray  # (T, D) float32, shared across images

    _pixel_map: np.ndarray | None = field(default=None, repr=False, compare=False)

    def pixel_mask_index(self) -> np.ndarray:
        """(H, W) array of the local mask index owning each pixel, -1 if none.

        Overlapping masks are resolved deterministically: the mask with the
        highest index wins per pixel.
        """
        if self._pixel_map is None:
            grid = np.full(self.height * self.width, -1, dtype=np.int32)
            for local, mask in enumerate(self.masks):
                for start, run in mask.rle:
                    grid[start : start + run] = local
            self._pixel_map = grid.reshape(self.height, self.width)
        return self._pixel_map


def _write_f32(path: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise FormatError(f"non-finite values, refusing to write {os.path.basename(path)}")
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(path: str, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) != expected:
        raise FormatError(
            f"length mismatch in {os.path.basename(path)}: "
            f"expected {expected} bytes, found {len(raw)}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
    if not np.isfinite(arr).all():
        raise FormatError(f"non-finite values in {os.path.basename(path)}")
    return arr.copy()


def write_labels(labels: np.ndarray, path: str) -> None:
    """Write a label field as little-endian u16; UNLABELED = 65535."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise FormatError("label field must be one-dimensional")
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())


def read_labels(path: str, expected_n: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % 2:
        raise FormatError(f"odd byte count in {os.path.basename(path)}")
    labels = np.frombuffer(raw, dtype="<u2").copy()
    if expected_n is not None and len(labels) != expected_n:
        raise FormatError(
            f"length mismatch in {os.path.basename(path)}: "
            f"expected {expected_n} labels, found {len(labels)}"
        )
    return labels


def _camera_to_json(cam: CalibratedCamera) -> dict:
    return {
        "width": cam.width,
        "height": cam.height,
        "intrinsics": [float(v) for v in np.asarray(cam.intrinsics).reshape(-1)],
        "rotation": [float(v) for v in np.asarray(cam.rotation).reshape(-1)],
        "translation": [float(v) for v in np.asarray(cam.translation).reshape(-1)],
    }


def _camera_from_json(obj: dict) -> CalibratedCamera:
    return CalibratedCamera(
        intrinsics=np.array(obj["intrinsics"], dtype=np.float64).reshape(3, 3),
        rotation=np.array(obj["rotation"], dtype=np.float64).reshape(3, 3),
        translation=np.array(obj["translation"], dtype=np.float64),
        width=int(obj["width"]),
        height=int(obj["height"]),
    )


def write_bundle(bundle: SceneBundle, path: str) -> None:
    """Serialize a scene bundle into a directory (created if absent)."""
    os.makedirs(path, exist_ok=True)
    header = {
        "name": bundle.name,
        "endianness": "little",
        "n_points": bundle.n_points,
        "feature_dim": bundle.feature_dim,
        "has_gt_labels": bundle.gt_labels is not None,
        "cameras": [_camera_to_json(c) for c in bundle.cameras],
    }
    _write_f32(os.path.join(path, "points.f32"), bundle.points)
    _write_f32(os.path.join(path, "features.f32"), bundle.raw_features)
    if bundle.gt_labels is not None:
        write_labels(bundle.gt_labels, os.path.join(path, "gt_labels.u16"))
    with open(os.path.join(path, "scene.json"), "w") as fh:
        json.dump(header, fh, indent=2)


def read_bundle(path: str) -> SceneBundle:
    header_path = os.path.join(path, "scene.json")
    if not os.path.exists(header_path):
        raise FormatError(f"missing scene.json in {path}")
    with open(header_path) as fh:
        header = json.load(fh)
    if header.get("endianness", "little") != "little":
        raise FormatError("only little-endian scene files are supported")
    n = int(header["n_points"])
    e = int(header["feature_dim"])
    if n < 1 or e < 1:
        raise FormatError("scene header declares empty points or features")
    points = _read_f32(os.path.join(path, "points.f32"), (n, 3))
    feats = _read_f32(os.path.join(path, "features.f32"), (n, e))
    gt = None
    if header.get("has_gt_labels"):
        gt = read_labels(os.path.join(path, "gt_labels.u16"), expected_n=n)
    cameras = [_camera_from_json(c) for c in header.get("cameras", [])]
    return SceneBundle(points, feats, cameras, gt_labels=gt, name=header.get("name", "scene"))


def write_teacher(
    path: str,
    mask_sets: list[MaskSet],
    mask_features: np.ndarray,
    text_features: np.ndarray,
) -> None:
    """Serialize teacher outputs. ``mask_features`` rows follow global mask indices."""
    os.makedirs(path, exist_ok=True)
    mask_features = np.asarray(mask_features)
    text_features = np.asarray(text_features)
    n_masks = sum(len(ms.masks) for ms in mask_sets)
    if mask_features.shape[0] != n_masks:
        raise FormatError("mask feature row count must equal total mask count")
    header = {
        "endianness": "little",
        "embed_dim": int(mask_features.shape[1]) if n_masks else int(text_features.shape[1]),
        "n_masks": n_masks,
        "n_text": int(text_features.shape[0]),
        "images": [
            {
                "camera_index": ms.camera_index,
                "width": ms.width,
                "height": ms.height,
                "masks": [
                    {
                        "index": m.index,
                        "prompt": m.prompt,
                        "rle": [[int(s), int(r)] for s, r in m.rle],
                    }
                    for m in ms.masks
                ],
            }
            for ms in mask_sets
        ],
    }
    _write_f32(os.path.join(path, "mask_feats.f32"), mask_features)
    _write_f32(os.path.join(path, "text_feats.f32"), text_features)
    with open(os.path.join(path, "masks.json"), "w") as fh:
        json.dump(header, fh, indent=2)


def read_teacher(path: str) -> list[MaskSet]:
    """Load teacher outputs; one MaskSet per image.

    Mask feature row i corresponds to the mask with global index i; each
    MaskSet receives the rows of its own masks plus a shared view of the text
    feature matrix.
    """
    header_path = os.path.join(path, "masks.json")
    if not os.path.exists(header_path):
        raise FormatError(f"missing masks.json in {path}")
    with open(header_path) as fh:
        header = json.load(fh)
    if header.get("endianness", "little") != "little":
        raise FormatError("only little-endian teacher files are supported")
    d = int(header["embed_dim"])
    n_masks = int(header["n_masks"])
    n_text = int(header["n_text"])
    mask_feats = _read_f32(os.path.join(path, "mask_feats.f32"), (n_masks, d))
    text_feats = _read_f32(os.path.join(path, "text_feats.f32"), (n_text, d))

    declared = sum(len(img["masks"]) for img in header["images"])
    if declared != n_masks:
        raise FormatError(
            f"mask feature rows ({n_masks}) do not match declared masks ({declared})"
        )

    seen = set()
    out = []
    for img in header["images"]:
        w, h = int(img["width"]), int(img["height"])
        masks = []
        for m in img["masks"]:
            rle = np.array(m["rle"], dtype=np.int64).reshape(-1, 2)
            if len(rle) and (
                (rle < 0).any() or (rle[:, 1] < 1).any() or (rle.sum(axis=1) > w * h).any()
            ):
                raise FormatError(f"RLE overrun past image bounds in mask {m['index']}")
            idx = int(m["index"])
            if idx in seen or not 0 <= idx < n_masks:
                raise FormatError(f"bad or duplicate global mask index {idx}")
            seen.add(idx)
            masks.append(Mask(index=idx, prompt=int(m["prompt"]), rle=rle))
        out.append(
            MaskSet(
                camera_index=int(img["camera_index"]),
                width=w,
                height=h,
                masks=masks,
                mask_features=mask_feats[[m.index for m in masks]],
                text_features=text_feats,
            )
        )
    return out
