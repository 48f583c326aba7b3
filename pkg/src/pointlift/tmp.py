"""Tri-modal contrastive objective and a toy trainable projection head.

Two InfoNCE-style losses align superpoint embeddings with superpixel features
(image side) and with text features (semantic side). The text loss
down-weights "semi-positive" negatives: other prompts of the same class,
weighted by text cosine similarity, so same-semantics regions are not pushed
apart.

Gradients flow only into the superpoint rows (the 3D side); image and text
features are frozen teacher outputs. All loss and gradient math runs in
64-bit; features are 32-bit at rest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .classdict import semi_positive_weights
from .correspondence import build, build_knn_groups


@dataclass
class TmpBatch:
    """One mini-batch of aligned (superpoint, superpixel, text) feature rows."""

    superpoint: np.ndarray  # (R, D)
    superpixel: np.ndarray  # (R, D) unit rows
    text: np.ndarray  # (R, D) unit rows
    class_of: np.ndarray  # (R,) class ids
    prompt_of: np.ndarray  # (R,) global prompt ids
    tau: float = 0.07
    alpha_image: float = 0.5
    alpha_text: float = 0.5

    def __post_init__(self):
        self.superpoint = np.asarray(self.superpoint, dtype=np.float64)
        self.superpixel = np.asarray(self.superpixel, dtype=np.float64)
        self.text = np.asarray(self.text, dtype=np.float64)
        self.class_of = np.asarray(self.class_of, dtype=np.int64)
        self.prompt_of = np.asarray(self.prompt_of, dtype=np.int64)
        r = self.superpoint.shape[0]
        if r < 1:
            raise ValueError("empty batch")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        for name, arr in (("superpixel", self.superpixel), ("text", self.text)):
            if arr.shape != self.superpoint.shape:
                raise ValueError(f"{name} shape mismatch")
            norms = np.linalg.norm(arr, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError(f"{name} rows must be unit-norm within 1e-6")
        # superpoint rows are normalized inside the losses; allow the slack a
        # finite-difference probe needs while still rejecting unscaled inputs
        sp_norms = np.linalg.norm(self.superpoint, axis=1)
        if np.abs(sp_norms - 1.0).max() > 1e-3:
            raise ValueError("superpoint rows must be unit-norm within 1e-3")

    @property
    def size(self) -> int:
        return self.superpoint.shape[0]


@dataclass
class LossReport:
    l_ip: float
    l_tp: float
    l_tmp: float
    grad_superpoints: np.ndarray  # (R, D) w.r.t. raw superpoint rows


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm superpoint row")
    return x / norms[:, None], norms


def _through_normalization(grad_unit: np.ndarray, unit: np.ndarray,
                           norms: np.ndarray) -> np.ndarray:
    # Jacobian of x -> x/|x| applied to the gradient w.r.t. the unit vector.
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms[:, None]


def loss_ip(batch: TmpBatch) -> tuple[float, np.ndarray]:
    """Image-to-superpoint InfoNCE loss and its gradient.

    Per anchor i the positive is the paired superpoint; all other batch
    superpoints act as negatives. Similarities are cosines, so the gradient
    w.r.t. each raw superpoint row includes the normalization Jacobian.
    """
    x = np.asarray(batch.superpoint, dtype=np.float64)
    a = batch.superpixel
    u, norms = _unit_rows(x)
    r = batch.size
    s = (a @ u.T) / batch.tau  # s[i, j] = <f_i^I, f_j^p> / tau
    smax = s.max(axis=1, keepdims=True)
    lse = smax[:, 0] + np.log(np.exp(s - smax).sum(axis=1))
    loss = float(np.mean(lse - np.diag(s)))

    p = np.exp(s - lse[:, None])
    g_s = (p - np.eye(r)) / (r * batch.tau)  # dL/d<cos_ij>
    grad_u = g_s.T @ a
    return loss, _through_normalization(grad_u, u, norms)


def loss_tp(batch: TmpBatch, alpha: np.ndarray) -> tuple[float, np.ndarray]:
    """Text-to-superpoint loss with semi-positive weighting, plus gradient.

    Negatives are restricted to rows carrying a different prompt; their
    exponents are scaled by (1 - alpha_ij). Rows with the same prompt as the
    anchor do not appear in the denominator at all.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    r = batch.size
    if alpha.shape != (r, r):
        raise ValueError("alpha must be R x R")
    if np.abs(alpha - alpha.T).max() > 1e-9:
        raise ValueError("alpha must be symmetric within 1e-9")
    x = np.asarray(batch.superpoint, dtype=np.float64)
    t = batch.text
    u, norms = _unit_rows(x)
    s = t @ u.T  # cosine similarities

    same_prompt = batch.prompt_of[:, None] == batch.prompt_of[None, :]
    diag = np.eye(r, dtype=bool)
    scale = np.where(diag, 1.0, 1.0 - alpha)
    z = scale * s / batch.tau
    allowed = diag | ~same_prompt
    z = np.where(allowed, z, -np.inf)

    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float(np.mean(lse - np.diag(z)))

    p = np.where(allowed, np.exp(z - lse[:, None]), 0.0)
    g_s = (p - np.eye(r)) * scale * allowed / (r * batch.tau)
    grad_u = g_s.T @ t
    return loss, _through_normalization(grad_u, u, norms)


def loss_tmp(batch: TmpBatch, classdict=None, alpha: np.ndarray | None = None) -> LossReport:
    """Weighted sum of the two contrastive losses with summed gradients.

    The semi-positive matrix is computed from the batch's own text rows when
    not supplied; a dictionary is then required to group prompts by class.
    """
    if alpha is None:
        if classdict is None:
            raise ValueError("either alpha or a class dictionary is required")
        alpha = semi_positive_weights(batch.text, classdict, prompt_ids=batch.prompt_of)
    ip, g_ip = loss_ip(batch)
    tp, g_tp = loss_tp(batch, alpha)
    l = batch.alpha_image * ip + batch.alpha_text * tp
    grad = batch.alpha_image * g_ip + batch.alpha_text * g_tp
    return LossReport(l_ip=ip, l_tp=tp, l_tmp=l, grad_superpoints=grad)


@dataclass
class ToyHead:
    """Affine projection from raw point features into the teacher embedding space."""

    weights: np.ndarray  # (D, E)
    bias: np.ndarray  # (D,)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, seed: int) -> "ToyHead":
        rng = np.random.default_rng(seed)
        w = rng.uniform(-0.1, 0.1, size=(out_dim, in_dim))
        b = rng.uniform(-0.1, 0.1, size=out_dim)
        return cls(weights=w, bias=b)

    def apply(self, feats: np.ndarray) -> np.ndarray:
        return np.asarray(feats, dtype=np.float64) @ self.weights.T + self.bias

    def save(self, path: str) -> None:
        obj = {
            "in_dim": int(self.weights.shape[1]),
            "out_dim": int(self.weights.shape[0]),
            "weights": [float(v) for v in self.weights.reshape(-1)],
            "bias": [float(v) for v in self.bias],
        }
        with open(path, "w") as fh:
            json.dump(obj, fh)

    @classmethod
    def load(cls, path: str) -> "ToyHead":
        with open(path) as fh:
            obj = json.load(fh)
        w = np.array(obj["weights"], dtype=np.float64).reshape(obj["out_dim"], obj["in_dim"])
        return cls(weights=w, bias=np.array(obj["bias"], dtype=np.float64))


@dataclass
class TrainResult:
    head: ToyHead
    trace: list[tuple[int, float, float, float]]  # (step, l_ip, l_tp, l_tmp)
    final: LossReport | None

    def write_trace(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "l_ip", "l_tp", "l_tmp"])
            for row in self.trace:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


def make_batch(bundle, corr, text_features: np.ndarray, head: ToyHead,
               tau: float = 0.07, alpha_image: float = 0.5, alpha_text: float = 0.5):
    """Assemble a TmpBatch from one scene's correspondence pairs.

    Superpoint rows are the head's output on per-pair raw feature means,
    L2-normalized (the mean commutes with the affine head, so pooling before
    the head is exact). Returns the batch plus the intermediates needed to
    backpropagate into the head.
    """
    raw = np.asarray(bundle.raw_features, dtype=np.float64)
    means = np.stack([raw[p.point_indices].mean(axis=0) for p in corr.pairs])
    y = head.apply(means)
    norms = np.linalg.norm(y, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm projected superpoint")
    unit = y / norms[:, None]

    text = np.asarray(text_features, dtype=np.float64)
    rows = text[[p.prompt for p in corr.pairs]]
    tnorms = np.linalg.norm(rows, axis=1)
    if (tnorms == 0).any():
        raise ValueError("zero-norm text feature")
    batch = TmpBatch(
        superpoint=unit,
        superpixel=np.stack([p.superpixel_feature for p in corr.pairs]),
        text=rows / tnorms[:, None],
        class_of=np.array([p.class_id for p in corr.pairs]),
        prompt_of=np.array([p.prompt for p in corr.pairs]),
        tau=tau,
        alpha_image=alpha_image,
        alpha_text=alpha_text,
    )
    return batch, means, norms


def train_toy_head(bundle, teacher: list, classdict, steps: int, lr: float,
                   seed: int, tau: float = 0.07, alpha_image: float = 0.5,
                   alpha_text: float = 0.5, use_superpoints: bool = True,
                   embed_dim: int | None = None) -> TrainResult:
    """Train the affine head by plain gradient descent on one scene's pairs.

    Each step evaluates the combined loss over all correspondence pairs of the
    scene, records it in the trace, and applies one descent update. The final
    report is computed after the last update (and is None when steps == 0).
    Fully deterministic given the seed.
    """
    if use_superpoints:
        corr = build(bundle, teacher, classdict)
    else:
        corr = build_knn_groups(bundle, teacher, classdict)
    if len(corr.pairs) == 0:
        raise ValueError("no correspondence pairs; cannot train")
    text_features = teacher[0].text_features
    if embed_dim is None:
        embed_dim = text_features.shape[1]
    head = ToyHead.init(bundle.feature_dim, embed_dim, seed)
    alpha = None  # fixed per scene; text rows do not change across steps

    trace: list[tuple[int, float, float, float]] = []
    report = None
    for step in range(steps):
        batch, means, norms = make_batch(
            bundle, corr, text_features, head, tau, alpha_image, alpha_text)
        if alpha is None:
            alpha = semi_positive_weights(batch.text, classdict, prompt_ids=batch.prompt_of)
        report = loss_tmp(batch, alpha=alpha)
        if not np.isfinite(report.l_tmp):
            raise DivergenceError(step)
        trace.append((step, report.l_ip, report.l_tp, report.l_tmp))
        # grad_superpoints is tangential at the unit rows, so chaining through
        # the explicit normalization reduces to dividing by the raw norms
        g_y = report.grad_superpoints / norms[:, None]
        head.weights -= lr * (g_y.T @ means)
        head.bias -= lr * g_y.sum(axis=0)

    if steps > 0:
        batch, _, _ = make_batch(
            bundle, corr, text_features, head, tau, alpha_image, alpha_text)
        report = loss_tmp(batch, alpha=alpha)
    return TrainResult(head=head, trace=trace, final=report)
