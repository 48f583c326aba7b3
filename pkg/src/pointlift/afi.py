"""Non-parametric label propagation along approximately flat structures.

Predicted labels are refined without any learned parameters: a four-level
encoder repeatedly downsamples the cloud (farthest point sampling + k-NN),
quantizes each neighborhood into directions of a spherical Fibonacci lattice,
and lets features interact only where mean directions of two neighborhoods
are approximately parallel to the line connecting them. A mirrored decoder
upsamples the features back, discarding distance from the upsampling weights,
and the final per-point argmax yields the refined labels.

Two optional pre-steps handle camera blind spots: predictions outside every
camera's field of view are cleared, and pseudo-labels can randomly overwrite
predictions with a probability that decays with horizontal distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .projection import UNLABELED


@dataclass
class AfiConfig:
    gamma: float = 0.995  # min |cosine| for two directions to interact (~5.7 deg)
    beta: float = 4.0  # pseudo/predict odds at horizontal distance 0
    s_dist: float = 15.0  # horizontal distance with coverage probability 0.5
    lattice_m: int = 60
    layers: int = 4
    rates: tuple = (1 / 3, 1 / 3, 1 / 3, 1 / 3)
    k_encoder: int = 16
    k_decoder: int = 3
    coverage_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0,1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.s_dist <= 0:
            raise ValueError("s_dist must be positive")
        if self.lattice_m < 4:
            raise ValueError("lattice size must be at least 4")
        if len(self.rates) != self.layers:
            raise ValueError("one downsampling rate per layer is required")
        if any(not 0 < r <= 1 for r in self.rates):
            raise ValueError("rates must lie in (0, 1]")
        if self.k_encoder < 1 or self.k_decoder < 1:
            raise ValueError("neighborhood sizes must be positive")


def fibonacci_lattice(m: int) -> np.ndarray:
    """M near-uniform unit vectors on the sphere.

    Offset form z_i = (2i+1)/M - 1 with golden-ratio azimuth increments; every
    row is unit-norm within 1e-12 by construction.
    """
    if m < 1:
        raise ValueError("lattice size must be at least 1")
    i = np.arange(m, dtype=np.float64)
    z = (2 * i + 1) / m - 1
    phi = (np.sqrt(5.0) - 1) / 2
    r = np.sqrt(1 - z * z)
    theta = 2 * np.pi * i * phi
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def coverage_sample(predict: np.ndarray, pseudo: np.ndarray, points: np.ndarray,
                    cfg: AfiConfig, seed: int | None = None) -> np.ndarray:
    """Randomly overwrite predictions with pseudo-labels, odds decaying with range.

    Replacement probability is beta*e^(-d/T) / (1 + beta*e^(-d/T)) with
    T = S/ln(beta) and d the horizontal distance sqrt(x^2 + y^2). Draws are
    assigned to points by their lexicographic coordinate rank, so the result
    is deterministic for a seed and equivariant under point permutation.
    """
    predict = np.asarray(predict)
    pseudo = np.asarray(pseudo)
    if predict.shape != pseudo.shape:
        raise ValueError("predict/pseudo length mismatch")
    pts = np.asarray(points, dtype=np.float64)
    if seed is None:
        seed = cfg.seed
    rng = np.random.default_rng(seed)
    draws = rng.random(len(predict))
    rank = np.empty(len(predict), dtype=np.int64)
    rank[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))] = np.arange(len(predict))
    u = draws[rank]

    d = np.hypot(pts[:, 0], pts[:, 1])
    t = cfg.s_dist / np.log(cfg.beta)
    odds = cfg.beta * np.exp(-d / t)
    p = odds / (1 + odds)
    replace = (pseudo != UNLABELED) & (u < p)
    out = predict.copy()
    out[replace] = pseudo[replace]
    return out


def clear_confused(predict: np.ndarray, fov: np.ndarray) -> np.ndarray:
    """Set predictions outside every camera's field of view to UNLABELED."""
    predict = np.asarray(predict)
    fov = np.asarray(fov, dtype=bool)
    if predict.shape != fov.shape:
        raise ValueError("predict/fov length mismatch")
    out = predict.copy()
    out[~fov] = UNLABELED
    return out


def direction_cluster(center: np.ndarray, neighbors: np.ndarray,
                      basis: np.ndarray) -> np.ndarray:
    """Assign each neighbor to the lattice direction of maximum cosine similarity.

    Ties resolve to the lowest lattice index. A neighbor coincident with the
    center is assigned cluster 0 (its contribution is dropped downstream).
    """
    offsets = np.asarray(neighbors, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    norms = np.linalg.norm(offsets, axis=1)
    cos = np.zeros((len(offsets), len(basis)))
    ok = norms > 0
    cos[ok] = (offsets[ok] @ basis.T) / norms[ok, None]
    return np.argmax(cos, axis=1)


def aggregate(center: np.ndarray, neighbors: np.ndarray, cluster_ids: np.ndarray,
              neighbor_feats: np.ndarray, neighbor_corr: np.ndarray,
              m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-direction mean offsets, summed features, and summed correlations.

    Empty clusters yield zero direction, feature, and correlation. Neighbors
    coincident with the center contribute nothing.
    """
    center = np.asarray(center, dtype=np.float64)
    offsets = np.asarray(neighbors, dtype=np.float64) - center
    norms = np.linalg.norm(offsets, axis=1)
    valid = norms > 0
    ids = np.asarray(cluster_ids)
    feats = np.asarray(neighbor_feats, dtype=np.float64)
    corr = np.asarray(neighbor_corr, dtype=np.float64)

    dirs = np.zeros((m, 3))
    f = np.zeros((m, feats.shape[1]))
    l = np.zeros(m)
    counts = np.zeros(m)
    np.add.at(dirs, ids[valid], offsets[valid])
    np.add.at(f, ids[valid], feats[valid])
    np.add.at(l, ids[valid], corr[valid])
    np.add.at(counts, ids[valid], 1.0)
    nonempty = counts > 0
    dirs[nonempty] /= counts[nonempty, None]
    return dirs, f, l


def pair_correlation(dirs_a: np.ndarray, corr_a: np.ndarray,
                     dirs_b: np.ndarray, corr_b: np.ndarray,
                     p_a0: np.ndarray, p_b0: np.ndarray, gamma: float) -> float:
    """Correlation between two directional states along the connecting line.

    Product of a direction component (summed correlations of approximately
    parallel directions on each side) and a distance component built from the
    largest parallel direction extents. Zero when the centers coincide or no
    direction clears the gamma threshold.
    """
    v = np.asarray(p_a0, dtype=np.float64) - np.asarray(p_b0, dtype=np.float64)
    dist = np.linalg.norm(v)
    if dist == 0:
        return 0.0

    def side(dirs, corr):
        dn = np.linalg.norm(dirs, axis=1)
        ok = dn > 0
        s = np.zeros(len(dirs))
        s[ok] = (dirs[ok] @ v) / (dn[ok] * dist)
        pos = s > gamma
        neg = s < -gamma
        d_pos = dn[pos].max() if pos.any() else 0.0
        d_neg = dn[neg].max() if neg.any() else 0.0
        l_sum = corr[pos | neg].sum()
        return l_sum, d_pos, d_neg

    la_sum, da_pos, da_neg = side(np.asarray(dirs_a, dtype=np.float64),
                                  np.asarray(corr_a, dtype=np.float64))
    lb_sum, db_pos, db_neg = side(np.asarray(dirs_b, dtype=np.float64),
                                  np.asarray(corr_b, dtype=np.float64))
    l_c = la_sum * lb_sum
    l_d = ((da_pos + da_neg) * (db_pos + db_neg)) / (dist + da_neg + db_pos) ** 2
    return float(l_c * l_d)


def _canonical_argmax(values: np.ndarray, coords: np.ndarray) -> int:
    """Index of the maximum value; ties go to the lexicographically smallest point."""
    m = values.max()
    cand = np.nonzero(values == m)[0]
    if len(cand) == 1:
        return int(cand[0])
    c = coords[cand]
    order = np.lexsort((c[:, 2], c[:, 1], c[:, 0]))
    return int(cand[order[0]])


def fps(coords: np.ndarray, n_sample: int) -> np.ndarray:
    """Farthest point sampling with canonical tie-breaking.

    Starts from the point farthest from the centroid; all ties resolve by
    lexicographic coordinate order, so the selection is invariant under input
    permutation.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    n_sample = min(n_sample, n)
    centered = coords - coords.mean(axis=0)
    d2 = np.einsum("ij,ij->i", centered, centered)
    start = _canonical_argmax(d2, coords)

    selected = np.empty(n_sample, dtype=np.int64)
    selected[0] = start
    dist = np.einsum("ij,ij->i", coords - coords[start], coords - coords[start])
    for s in range(1, n_sample):
        nxt = _canonical_argmax(dist, coords)
        selected[s] = nxt
        delta = coords - coords[nxt]
        dist = np.minimum(dist, np.einsum("ij,ij->i", delta, delta))
    return selected


def _knn_indices(coords: np.ndarray, queries: np.ndarray, query_idx: np.ndarray | None,
                 k: int) -> np.ndarray:
    """k nearest neighbors per query, self excluded, canonically ordered.

    Rows are sorted by (distance, x, y, z) so downstream reductions are
    independent of the input point order.
    """
    tree = cKDTree(coords)
    kq = min(k + 1, len(coords))
    dist, idx = tree.query(queries, k=kq)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    rows = []
    for r in range(len(queries)):
        di, ii = dist[r], idx[r]
        if query_idx is not None:
            keep = ii != query_idx[r]
            # ties truncated by the query may hide the self entry; drop the last
            if keep.all() and len(ii) > k:
                keep[-1] = False
            di, ii = di[keep][:k], ii[keep][:k]
        c = coords[ii]
        order = np.lexsort((c[:, 2], c[:, 1], c[:, 0], di))
        rows.append(ii[order])
    return np.array(rows, dtype=np.int64)


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    zmax = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - zmax)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class LayerRecord:
    coords: np.ndarray  # (n, 3) sampled center coordinates
    feats: np.ndarray  # (n, C) updated features
    dirs: np.ndarray  # (n, M, 3) per-center mean direction vectors
    corr: np.ndarray  # (n, M) per-center direction correlations


@dataclass
class EncoderOutput:
    base_coords: np.ndarray
    base_feats: np.ndarray
    layers: list[LayerRecord] = field(default_factory=list)


def encode(points: np.ndarray, feats: np.ndarray, cfg: AfiConfig) -> EncoderOutput:
    """Four downsampling rounds of direction-gated feature aggregation."""
    basis = fibonacci_lattice(cfg.lattice_m)
    coords = np.asarray(points, dtype=np.float64)
    f = np.asarray(feats, dtype=np.float64)
    out = EncoderOutput(base_coords=coords, base_feats=f)
    dirs_prev = corr_prev = None

    for li in range(cfg.layers):
        n = len(coords)
        n_next = max(1, int(round(cfg.rates[li] * n)))
        centers = fps(coords, n_next)
        k = min(cfg.k_encoder, n - 1)

        m = cfg.lattice_m
        new_dirs = np.zeros((n_next, m, 3))
        new_corr = np.zeros((n_next, m))
        new_feats = np.zeros((n_next, f.shape[1]))

        if k >= 1:
            nbr = _knn_indices(coords, coords[centers], centers, k)
            for row, c in enumerate(centers):
                nb = nbr[row]
                center_pt = coords[c]
                if li == 0:
                    l_nbr = np.full(len(nb), 1.0 / len(nb))
                else:
                    lstar = np.array([
                        pair_correlation(dirs_prev[c], corr_prev[c],
                                         dirs_prev[j], corr_prev[j],
                                         center_pt, coords[j], cfg.gamma)
                        for j in nb
                    ])
                    l_nbr = _softmax(lstar)
                ids = direction_cluster(center_pt, coords[nb], basis)
                d_i, f_i, l_i = aggregate(center_pt, coords[nb], ids, f[nb], l_nbr, m)
                new_dirs[row] = d_i
                new_corr[row] = l_i
                z = l_i @ f_i + 0.1 * f[c] + 1e-8 * f[nb].max(axis=0)
                new_feats[row] = _softmax(z)
        else:
            for row, c in enumerate(centers):
                new_feats[row] = _softmax(0.1 * f[c])

        coords = coords[centers]
        f = new_feats
        dirs_prev, corr_prev = new_dirs, new_corr
        out.layers.append(LayerRecord(coords=coords, feats=f,
                                      dirs=new_dirs, corr=new_corr))
    return out


def decode(enc: EncoderOutput, cfg: AfiConfig) -> tuple[np.ndarray, np.ndarray]:
    """Mirror upsampling; returns (labels, final per-point features).

    Upsampling weights come only from direction correlations (distance is
    discarded): per fine point, each coarse neighbor contributes the summed
    correlations of its directions approximately parallel to the connecting
    line, softmax-normalized over the neighborhood. The encoder feature of
    the same level enters as a skip term. Fine points whose final pre-softmax
    accumulation is all-zero stay UNLABELED.
    """
    g = enc.layers[-1].feats
    allzero = None
    for li in reversed(range(cfg.layers)):
        if li == 0:
            fine_coords, fine_feats = enc.base_coords, enc.base_feats
        else:
            fine_coords = enc.layers[li - 1].coords
            fine_feats = enc.layers[li - 1].feats
        coarse = enc.layers[li]
        kd = min(cfg.k_decoder, len(coarse.coords))
        nbr = _knn_indices(coarse.coords, fine_coords, None, kd)

        v = fine_coords[:, None, :] - coarse.coords[nbr]  # (N, kd, 3)
        vnorm = np.linalg.norm(v, axis=2)
        dk = coarse.dirs[nbr]  # (N, kd, M, 3)
        dknorm = np.linalg.norm(dk, axis=3)
        denom = vnorm[:, :, None] * dknorm
        cos = np.zeros_like(denom)
        ok = denom > 0
        dots = np.einsum("nkd,nkmd->nkm", v, dk)
        cos[ok] = dots[ok] / denom[ok]
        wstar = np.where(np.abs(cos) > cfg.gamma, coarse.corr[nbr], 0.0).sum(axis=2)
        w = _softmax(wstar, axis=1)
        z = np.einsum("nk,nkc->nc", w, g[nbr]) + fine_feats
        if li == 0:
            allzero = ~z.any(axis=1)
        g = _softmax(z, axis=1)

    labels = np.argmax(g, axis=1).astype(np.uint16)
    labels[allzero] = UNLABELED
    return labels, g


def afi(predict: np.ndarray, points: np.ndarray, cfg: AfiConfig, n_classes: int,
        pseudo: np.ndarray | None = None, fov: np.ndarray | None = None) -> np.ndarray:
    """Full refinement: clear blind spots, optional pseudo coverage, encode, decode."""
    labels = np.asarray(predict, dtype=np.uint16).copy()
    if fov is not None:
        labels = clear_confused(labels, fov)
    if cfg.coverage_enabled and pseudo is not None:
        labels = coverage_sample(labels, pseudo, points, cfg)

    onehot = np.zeros((len(labels), n_classes))
    labeled = labels != UNLABELED
    if labeled.any():
        if labels[labeled].max() >= n_classes:
            raise ValueError("label id outside the class range")
        onehot[np.nonzero(labeled)[0], labels[labeled].astype(np.int64)] = 1.0

    enc = encode(points, onehot, cfg)
    out, _ = decode(enc, cfg)
    return out
