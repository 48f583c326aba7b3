"""Superpixel-superpoint correspondence and pooled embeddings.

A mask whose pixels received at least one projected point becomes a pair:
its pixel set is the superpixel, the projected points form the superpoint.
The pairing is bijective by construction, so the pair count never exceeds
the mask count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projection import winning_hits


@dataclass
class CorrespondencePair:
    camera_index: int
    mask_index: int  # global mask index, -1 for k-NN ablation groups
    prompt: int  # global prompt index
    class_id: int
    point_indices: np.ndarray  # member points, non-empty
    superpixel_feature: np.ndarray  # (D,) unit norm


@dataclass
class Correspondence:
    pairs: list[CorrespondencePair]

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def count(self) -> int:
        return len(self.pairs)


def _normalize_rows(feats: np.ndarray) -> np.ndarray:
    feats = np.asarray(feats, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm feature row")
    return feats / norms[:, None]


def build(bundle, teacher: list, classdict) -> Correspondence:
    """Pair each mask with the points whose winning pixel lies inside it.

    Masks without any mapped point are dropped. Point membership follows the
    same winning-hit resolution as pseudo-labeling, so superpoints are
    disjoint.
    """
    best_cam, best_u, best_v = winning_hits(bundle)
    members: dict[tuple[int, int], list[int]] = {}
    for ci, ms in enumerate(teacher):
        sel = np.nonzero(best_cam == ci)[0]
        if len(sel) == 0:
            continue
        grid = ms.pixel_mask_index()
        local = grid[best_v[sel], best_u[sel]]
        for pt, lo in zip(sel[local >= 0], local[local >= 0]):
            members.setdefault((ci, int(lo)), []).append(int(pt))

    pairs = []
    for ci, ms in enumerate(teacher):
        if not ms.masks:
            continue
        unit_feats = _normalize_rows(ms.mask_features)
        for lo, mask in enumerate(ms.masks):
            pts = members.get((ci, lo))
            if not pts:
                continue
            pairs.append(
                CorrespondencePair(
                    camera_index=ci,
                    mask_index=mask.index,
                    prompt=mask.prompt,
                    class_id=classdict.resolve(mask.prompt),
                    point_indices=np.array(pts, dtype=np.int64),
                    superpixel_feature=unit_feats[lo],
                )
            )
    return Correspondence(pairs)


def build_knn_groups(bundle, teacher: list, classdict, k: int = 16) -> Correspondence:
    """Ablation grouping: replace mask grouping by greedy k-NN clusters.

    Covered points are partitioned into clusters of up to ``k`` points: the
    lowest-index unassigned point seeds a cluster with its nearest unassigned
    neighbors. Each cluster borrows the superpixel/text features of its seed
    point's winning mask, reproducing the point-level partitioning that mask
    grouping is meant to improve on.
    """
    from scipy.spatial import cKDTree

    best_cam, best_u, best_v = winning_hits(bundle)
    point_mask: dict[int, tuple[int, int]] = {}
    for ci, ms in enumerate(teacher):
        sel = np.nonzero(best_cam == ci)[0]
        if len(sel) == 0:
            continue
        grid = ms.pixel_mask_index()
        local = grid[best_v[sel], best_u[sel]]
        for pt, lo in zip(sel[local >= 0], local[local >= 0]):
            point_mask[int(pt)] = (ci, int(lo))

    covered = np.array(sorted(point_mask), dtype=np.int64)
    if len(covered) == 0:
        return Correspondence([])
    coords = np.asarray(bundle.points, dtype=np.float64)[covered]
    tree = cKDTree(coords)
    unit_feats = {ci: _normalize_rows(ms.mask_features) for ci, ms in enumerate(teacher) if ms.masks}

    assigned = np.zeros(len(covered), dtype=bool)
    pairs = []
    for seed in range(len(covered)):
        if assigned[seed]:
            continue
        kq = min(4 * k, len(covered))
        _, nbrs = tree.query(coords[seed], k=kq)
        nbrs = np.atleast_1d(nbrs)
        group = [i for i in nbrs if not assigned[i]][:k]
        if seed not in group:
            group = [seed] + group[: k - 1]
        assigned[group] = True
        ci, lo = point_mask[int(covered[seed])]
        mask = teacher[ci].masks[lo]
        pairs.append(
            CorrespondencePair(
                camera_index=ci,
                mask_index=-1,
                prompt=mask.prompt,
                class_id=classdict.resolve(mask.prompt),
                point_indices=covered[np.array(group, dtype=np.int64)],
                superpixel_feature=unit_feats[ci][lo],
            )
        )
    return Correspondence(pairs)


def pool_superpoints(point_embeddings: np.ndarray, corr: Correspondence) -> np.ndarray:
    """Average-pool member embeddings per pair, then L2-normalize.

    Raises on a zero-norm pooled vector (degenerate superpoint).
    """
    emb = np.asarray(point_embeddings, dtype=np.float64)
    if not np.isfinite(emb).all():
        raise ValueError("non-finite point embeddings")
    out = np.empty((len(corr.pairs), emb.shape[1]))
    for r, pair in enumerate(corr.pairs):
        mean = emb[pair.point_indices].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ValueError(f"zero-norm pooled vector for pair {r}")
        out[r] = mean / norm
    return out
