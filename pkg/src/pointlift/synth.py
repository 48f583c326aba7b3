"""Deterministic synthetic scenes and synthetic teacher outputs.

Scenes are desk-scale stand-ins for autonomous-driving data: a ground plane,
axis-aligned boxes (cars, buildings), and vertical cylinders (pedestrians),
observed by a ring of inward-facing calibrated cameras. Ground truth is exact
by construction, so every downstream stage can be checked against an oracle.

The teacher generator emulates a frozen 2D open-vocabulary segmenter: per
camera it emits masks over the pixels actually hit by points, mask labels
(optionally flipped to simulate 2D model errors), noisy class-prototype mask
features, and exact prototype text features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .classdict import ClassDictionary, ClassEntry
from .io_formats import Mask, MaskSet, SceneBundle, write_bundle, write_teacher
from .projection import CalibratedCamera, winning_hits

CANONICAL_CLASSES = ("road", "car", "pedestrian", "building")
_PROMPTS = {
    "road": ["road", "street"],
    "car": ["car", "sedan"],
    "pedestrian": ["pedestrian", "person"],
    "building": ["building", "house"],
}
_CLASS_WEIGHTS = {"road": 0.60, "car": 0.15, "pedestrian": 0.05, "building": 0.20}


@dataclass
class SynthSpec:
    seed: int = 0
    n_points: int = 5000
    classes: tuple = CANONICAL_CLASSES
    noise_rate: float = 0.0
    feature_dim: int = 6
    embed_dim: int = 8
    n_cameras: int = 4
    extent: float = 40.0
    noise_classes: tuple | None = None  # restrict label flips to these classes
    mask_tile: int | None = 64  # pixel tile size splitting class regions into masks

    def __post_init__(self):
        self.classes = tuple(c for c in CANONICAL_CLASSES if c in self.classes)
        if not self.classes:
            raise ValueError("at least one known class is required")
        if not 0 <= self.noise_rate < 1:
            raise ValueError("noise_rate must lie in [0, 1)")
        if self.n_points < 100:
            raise ValueError("n_points must be at least 100")
        if self.embed_dim < len(self.classes):
            raise ValueError("embed_dim must cover one prototype per class")

    def save(self, path: str) -> None:
        obj = {
            "seed": self.seed,
            "n_points": self.n_points,
            "classes": list(self.classes),
            "noise_rate": self.noise_rate,
            "feature_dim": self.feature_dim,
            "embed_dim": self.embed_dim,
            "n_cameras": self.n_cameras,
            "extent": self.extent,
            "noise_classes": list(self.noise_classes) if self.noise_classes else None,
            "mask_tile": self.mask_tile,
        }
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "SynthSpec":
        with open(path) as fh:
            obj = json.load(fh)
        obj["classes"] = tuple(obj.get("classes", CANONICAL_CLASSES))
        nc = obj.get("noise_classes")
        obj["noise_classes"] = tuple(nc) if nc else None
        return cls(**obj)


def default_dictionary(classes=CANONICAL_CLASSES) -> ClassDictionary:
    """Four-class dictionary shipped with the synthetic harness."""
    present = [c for c in CANONICAL_CLASSES if c in classes]
    return ClassDictionary(
        [ClassEntry(i, name, list(_PROMPTS[name])) for i, name in enumerate(present)]
    )


def _look_at(position: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return rotation, -rotation @ position


def _camera_ring(n_cameras: int, extent: float) -> list[CalibratedCamera]:
    intrinsics = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])
    cams = []
    radius = 0.45 * extent
    for i in range(n_cameras):
        angle = 2 * np.pi * i / n_cameras
        pos = np.array([radius * np.cos(angle), radius * np.sin(angle), 2.5])
        rot, trans = _look_at(pos, np.array([0.0, 0.0, 0.5]))
        cams.append(CalibratedCamera(intrinsics, rot, trans, width=640, height=480))
    return cams


def _sample_box(rng, n, center, size):
    """Points on the top and side faces of an axis-aligned box; returns xyz + normal z."""
    sx, sy, sz = size
    areas = np.array([sx * sy, sy * sz, sy * sz, sx * sz, sx * sz])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    pts = np.zeros((n, 3))
    nz = np.zeros(n)
    top = face == 0
    pts[top] = np.column_stack([u[top] * sx, v[top] * sy, np.full(top.sum(), sz / 2)])
    nz[top] = 1.0
    for fi, (axis, sign) in enumerate([(0, -1), (0, 1), (1, -1), (1, 1)], start=1):
        sel = face == fi
        k = sel.sum()
        p = np.zeros((k, 3))
        p[:, axis] = sign * (sx if axis == 0 else sy) / 2
        p[:, 1 - axis] = u[sel] * (sy if axis == 0 else sx)
        p[:, 2] = (v[sel] + 0.5) * sz - sz / 2
        pts[sel] = p
    pts[:, 2] += sz / 2
    return pts + np.array([center[0], center[1], 0.0]), nz


def _sample_cylinder(rng, n, center, radius, height):
    theta = rng.uniform(0, 2 * np.pi, size=n)
    z = rng.uniform(0, height, size=n)
    pts = np.column_stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta), z]
    )
    return pts, np.zeros(n)


def generate_scene(spec: SynthSpec) -> SceneBundle:
    """Sample a deterministic scene with exact ground-truth labels."""
    rng = np.random.default_rng(spec.seed)
    half = spec.extent / 2
    class_ids = {name: i for i, name in enumerate(spec.classes)}

    instances = {"car": [], "pedestrian": [], "building": []}
    if "car" in class_ids:
        for _ in range(4):
            instances["car"].append(rng.uniform(-0.6 * half, 0.6 * half, size=2))
    if "pedestrian" in class_ids:
        for _ in range(6):
            instances["pedestrian"].append(rng.uniform(-0.6 * half, 0.6 * half, size=2))
    if "building" in class_ids:
        for _ in range(2):
            instances["building"].append(rng.uniform(-0.7 * half, 0.7 * half, size=2))

    weights = np.array([_CLASS_WEIGHTS[c] for c in spec.classes])
    weights = weights / weights.sum()
    assignment = rng.choice(len(spec.classes), size=spec.n_points, p=weights)

    points = np.zeros((spec.n_points, 3))
    normal_z = np.zeros(spec.n_points)
    labels = np.zeros(spec.n_points, dtype=np.uint16)
    for ci, cname in enumerate(spec.classes):
        sel = np.nonzero(assignment == ci)[0]
        labels[sel] = ci
        if len(sel) == 0:
            continue
        if cname == "road":
            points[sel, 0] = rng.uniform(-half, half, size=len(sel))
            points[sel, 1] = rng.uniform(-half, half, size=len(sel))
            points[sel, 2] = rng.normal(0, 0.02, size=len(sel))
            normal_z[sel] = 1.0
        else:
            inst = rng.choice(len(instances[cname]), size=len(sel))
            for ii, center in enumerate(instances[cname]):
                isel = sel[inst == ii]
                if len(isel) == 0:
                    continue
                if cname == "car":
                    pts, nz = _sample_box(rng, len(isel), center, (4.5, 2.0, 1.6))
                elif cname == "building":
                    pts, nz = _sample_box(rng, len(isel), center, (10.0, 8.0, 12.0))
                else:
                    pts, nz = _sample_cylinder(rng, len(isel), center, 0.3, 1.7)
                points[isel] = pts
                normal_z[isel] = nz

    feats = np.zeros((spec.n_points, spec.feature_dim))
    feats[:, 0] = points[:, 2]
    if spec.feature_dim > 1:
        feats[:, 1] = normal_z + rng.normal(0, 0.05, size=spec.n_points)
    n_class_ch = min(len(spec.classes), max(0, spec.feature_dim - 2))
    for c in range(n_class_ch):
        feats[:, 2 + c] = (labels == c).astype(float) + rng.normal(0, 0.3, size=spec.n_points)
    for extra in range(2 + n_class_ch, spec.feature_dim):
        feats[:, extra] = rng.normal(0, 1.0, size=spec.n_points)

    perm = rng.permutation(spec.n_points)
    return SceneBundle(
        points=points[perm],
        raw_features=feats[perm],
        cameras=_camera_ring(spec.n_cameras, spec.extent),
        gt_labels=labels[perm],
        name=f"synth-{spec.seed}",
    )


def _pixels_to_rle(pixels: np.ndarray) -> np.ndarray:
    """Sorted flat pixel indices to (start, run) pairs."""
    pixels = np.sort(pixels)
    breaks = np.nonzero(np.diff(pixels) != 1)[0]
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [len(pixels) - 1]])
    return np.column_stack([pixels[starts], ends - starts + 1]).astype(np.int64)


@dataclass
class SynthTeacher:
    mask_sets: list[MaskSet]
    mask_features: np.ndarray  # (R, D)
    text_features: np.ndarray  # (T, D)
    flipped: list[bool] = field(default_factory=list)  # per global mask

    def write(self, path: str) -> None:
        write_teacher(path, self.mask_sets, self.mask_features, self.text_features)


def class_prototypes(n_classes: int, embed_dim: int) -> np.ndarray:
    """Orthonormal unit prototype per class (standard basis rows)."""
    return np.eye(embed_dim)[:n_classes]


def generate_teacher(bundle: SceneBundle, classdict: ClassDictionary,
                     spec: SynthSpec) -> SynthTeacher:
    """Emulate teacher outputs from ground truth.

    Masks cover exactly the pixels that are some point's winning hit and are
    class-unambiguous there, split into tiles of ``mask_tile`` pixels (sparse
    LiDAR projections make pixel connectivity degenerate, so tiling stands in
    for region granularity). With zero noise, pseudo-labels derived from these
    masks reproduce ground truth on every covered point.
    """
    rng = np.random.default_rng(spec.seed + 1)
    best_cam, best_u, best_v = winning_hits(bundle)
    gt = bundle.gt_labels
    if gt is None:
        raise ValueError("teacher generation requires ground-truth labels")
    protos = class_prototypes(classdict.n_classes, spec.embed_dim)
    text_features = protos[classdict.class_of_prompt]

    prompts_of_class = [
        [classdict.prompt_index(p) for p in entry.prompts]
        for entry in sorted(classdict.classes, key=lambda c: c.id)
    ]

    mask_sets = []
    mask_feature_rows = []
    flipped_flags = []
    next_index = 0
    for ci, cam in enumerate(bundle.cameras):
        sel = np.nonzero(best_cam == ci)[0]
        w, h = cam.width, cam.height
        flat = best_v[sel] * w + best_u[sel]
        masks = []
        if len(sel):
            order = np.argsort(flat, kind="stable")
            flat_s, cls_s = flat[order], gt[sel][order].astype(np.int64)
            # a pixel enters a mask only if all its winning points agree on class
            uniq, starts = np.unique(flat_s, return_index=True)
            ends = np.append(starts[1:], len(flat_s))
            pix_class = np.full(len(uniq), -1, dtype=np.int64)
            for i, (s, e) in enumerate(zip(starts, ends)):
                c = cls_s[s:e]
                if (c == c[0]).all():
                    pix_class[i] = c[0]
            ok = pix_class >= 0
            uniq, pix_class = uniq[ok], pix_class[ok]

            for class_id in range(classdict.n_classes):
                pix = uniq[pix_class == class_id]
                if len(pix) == 0:
                    continue
                if spec.mask_tile:
                    tile = (pix // w) // spec.mask_tile * ((w // spec.mask_tile) + 1) \
                        + (pix % w) // spec.mask_tile
                    groups = [pix[tile == t] for t in np.unique(tile)]
                else:
                    groups = [pix]
                for gpix in groups:
                    eligible = spec.noise_classes is None or \
                        spec.classes[class_id] in spec.noise_classes
                    flip = eligible and rng.random() < spec.noise_rate
                    if flip and classdict.n_classes > 1:
                        others = [c for c in range(classdict.n_classes) if c != class_id]
                        label_class = int(rng.choice(others))
                    else:
                        flip = False
                        label_class = class_id
                    prompt = int(rng.choice(prompts_of_class[label_class]))
                    feat = protos[label_class] + rng.normal(0, 0.1, size=spec.embed_dim)
                    feat = feat / np.linalg.norm(feat)
                    masks.append(Mask(index=next_index, prompt=prompt,
                                      rle=_pixels_to_rle(gpix)))
                    mask_feature_rows.append(feat)
                    flipped_flags.append(flip)
                    next_index += 1
        mask_sets.append(
            MaskSet(
                camera_index=ci,
                width=w,
                height=h,
                masks=masks,
                mask_features=np.array(mask_feature_rows[next_index - len(masks):next_index])
                if masks else np.zeros((0, spec.embed_dim)),
                text_features=text_features,
            )
        )

    mask_features = (
        np.stack(mask_feature_rows) if mask_feature_rows else np.zeros((0, spec.embed_dim))
    )
    return SynthTeacher(
        mask_sets=mask_sets,
        mask_features=mask_features,
        text_features=text_features,
        flipped=flipped_flags,
    )
