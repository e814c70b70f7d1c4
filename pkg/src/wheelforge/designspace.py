"""Design-space embedding, clustering, quality indices, LHS selection and diversity."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .depthsynth import DepthMap
from .errors import DimensionMismatch, InsufficientDesigns, RankDeficientWarning, UndefinedIndex

FEATURE_GRID = 16


@dataclass(frozen=True)
class FeatureVector:
    design_id: str
    values: np.ndarray


@dataclass(frozen=True)
class Embedding2D:
    design_id: str
    x: float
    y: float


@dataclass(frozen=True)
class DiversityReport:
    group_label: str
    dsd: float
    psd: float


def depth_features(d: DepthMap, design_id: str = "", grid: int = FEATURE_GRID,
                   depth_scale: float | None = None) -> FeatureVector:
    """Block means of nearness ``1 - depth / depth_scale`` over valid pixels.

    The image is cut into ``grid x grid`` equal blocks; blocks without a valid
    pixel contribute 0, so background and near surfaces are told apart.
    ``depth_scale`` defaults to the largest valid depth (1 for an all-zero map).
    """
    h, w = d.values.shape
    if h % grid or w % grid:
        raise DimensionMismatch(f"{h}x{w} map does not split into {grid}x{grid} blocks")
    if depth_scale is None:
        vmax = float(d.values[d.valid_mask].max()) if d.valid_mask.any() else 0.0
        depth_scale = vmax if vmax > 0 else 1.0
    near = np.where(d.valid_mask, 1.0 - d.values / depth_scale, 0.0)
    bh, bw = h // grid, w // grid
    sums = near.reshape(grid, bh, grid, bw).sum(axis=(1, 3))
    counts = d.valid_mask.reshape(grid, bh, grid, bw).sum(axis=(1, 3))
    values = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return FeatureVector(design_id, values.ravel())


def reduce_2d(features) -> tuple[list[Embedding2D], np.ndarray]:
    """Project onto the top two principal components.

    Each component's sign makes its largest-magnitude loading positive. Returns
    the embeddings and the two explained variances.
    """
    features = list(features)
    if len(features) < 3:
        raise InsufficientDesigns("need at least 3 feature vectors")
    X = np.stack([f.values for f in features]).astype(float)
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:2]
    if len(comps) < 2:
        comps = np.vstack([comps, np.zeros((2 - len(comps), X.shape[1]))])
    idx = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.where(comps[np.arange(len(comps)), idx] < 0, -1.0, 1.0)[:, None]
    var = np.zeros(2)
    var[: min(2, len(s))] = s[:2] ** 2 / (len(X) - 1)
    if var[1] <= 1e-12 * max(var[0], 1e-300):
        warnings.warn("second principal component has zero variance", RankDeficientWarning, stacklevel=2)
    Y = Xc @ comps.T
    return [Embedding2D(f.design_id, float(a), float(b)) for f, (a, b) in zip(features, Y)], var


def _as_points(embeddings) -> np.ndarray:
    pts = [(e.x, e.y) if isinstance(e, Embedding2D) else e for e in embeddings]
    return np.asarray(pts, dtype=float)


def kmeans(embeddings, k: int = 10, seed: int = 0, max_iter: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from a k-means++ start; returns ``(labels, centroids)``.

    Empty clusters are reseeded with the point farthest from its centroid.
    """
    X = _as_points(embeddings)
    n = len(X)
    if not 1 <= k <= n:
        raise InsufficientDesigns(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    centres = np.empty((k, X.shape[1]))
    centres[0] = X[rng.integers(n)]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        i = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centres[c] = X[i]
        d2 = np.minimum(d2, np.sum((X - centres[c]) ** 2, axis=1))

    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = cdist(X, centres, "sqeuclidean")
        new = np.argmin(dist, axis=1)
        for c in range(k):
            if not np.any(new == c):
                far = int(np.argmax(dist[np.arange(n), new]))
                new[far] = c
                dist[far] = 0.0
        if np.array_equal(new, labels):
            break
        labels = new
        centres = np.stack([X[labels == c].mean(axis=0) for c in range(k)])
    return labels, centres


def silhouette(X, labels) -> float:
    """Mean silhouette; singletons contribute 0."""
    X, labels = np.asarray(X, dtype=float), np.asarray(labels)
    ks = np.unique(labels)
    if len(ks) < 2:
        raise UndefinedIndex("silhouette needs at least two clusters")
    D = squareform(pdist(X))
    onehot = labels[:, None] == ks[None, :]
    sizes = onehot.sum(axis=0)
    mean_to = (D @ onehot) / sizes  # mean distance to every cluster
    own = np.argmax(onehot, axis=1)
    n_own = sizes[own]
    a = np.where(n_own > 1, (D @ onehot)[np.arange(len(X)), own] / np.maximum(n_own - 1, 1), 0.0)
    mean_to[np.arange(len(X)), own] = np.inf
    b = mean_to.min(axis=1)
    denom = np.maximum(a, b)
    s = np.divide(b - a, denom, out=np.zeros(len(X)), where=denom > 0)
    s[n_own == 1] = 0.0
    return float(s.mean())


def davies_bouldin(X, labels) -> float:
    X, labels = np.asarray(X, dtype=float), np.asarray(labels)
    ks = np.unique(labels)
    if len(ks) < 2:
        raise UndefinedIndex("Davies-Bouldin needs at least two clusters")
    cents = np.stack([X[labels == c].mean(axis=0) for c in ks])
    scatter = np.array([np.linalg.norm(X[labels == c] - cents[i], axis=1).mean() for i, c in enumerate(ks)])
    sep = squareform(pdist(cents))
    if np.any(sep[~np.eye(len(ks), dtype=bool)] == 0):
        raise UndefinedIndex("two cluster centroids coincide")
    R = (scatter[:, None] + scatter[None, :]) / np.where(sep > 0, sep, np.inf)
    np.fill_diagonal(R, -np.inf)
    return float(R.max(axis=1).mean())


def calinski_harabasz(X, labels) -> float:
    X, labels = np.asarray(X, dtype=float), np.asarray(labels)
    ks = np.unique(labels)
    n, k = len(X), len(ks)
    if not 2 <= k < n:
        raise UndefinedIndex("Calinski-Harabasz needs 2 <= k < n")
    mean = X.mean(axis=0)
    between = within = 0.0
    for c in ks:
        members = X[labels == c]
        cent = members.mean(axis=0)
        between += len(members) * np.sum((cent - mean) ** 2)
        within += np.sum((members - cent) ** 2)
    if within == 0:
        raise UndefinedIndex("zero within-cluster dispersion")
    return float(between / (k - 1) / (within / (n - k)))


def cluster_quality(embeddings, labels) -> tuple[float, float, float]:
    """Silhouette, Davies-Bouldin and Calinski-Harabasz indices."""
    X = _as_points(embeddings)
    return silhouette(X, labels), davies_bouldin(X, labels), calinski_harabasz(X, labels)


def lhs_points(n: int, bounds_lo, bounds_hi, rng: np.random.Generator) -> np.ndarray:
    """One point per equal-width bin on every axis, bins paired by random permutations."""
    lo, hi = np.asarray(bounds_lo, dtype=float), np.asarray(bounds_hi, dtype=float)
    dim = len(lo)
    u = np.empty((n, dim))
    for a in range(dim):
        u[:, a] = (rng.permutation(n) + rng.random(n)) / n
    return lo + u * (hi - lo)


def lhs_sample(embeddings, n_samples: int, seed: int = 0, ids=None) -> list:
    """Pick ``n_samples`` distinct designs closest to a Latin hypercube over the embedding.

    LHS points are processed in generation order; each claims its nearest
    unclaimed design, ties going to the lower index.
    """
    embeddings = list(embeddings)
    X = _as_points(embeddings)
    if ids is None:
        ids = [e.design_id if isinstance(e, Embedding2D) else i for i, e in enumerate(embeddings)]
    if n_samples < 1 or n_samples > len(X):
        raise InsufficientDesigns(f"cannot pick {n_samples} of {len(X)} designs")
    rng = np.random.default_rng(seed)
    pts = lhs_points(n_samples, X.min(axis=0), X.max(axis=0), rng)
    D = cdist(pts, X)
    claimed = np.zeros(len(X), dtype=bool)
    picked = []
    for row in D:
        row = np.where(claimed, np.inf, row)
        j = int(np.argmin(row))  # first minimum = lowest index
        claimed[j] = True
        picked.append(ids[j])
    return picked


def diversity(vectors, subset_size: int | None = None, seed: int = 0) -> tuple[np.ndarray, float]:
    """Per-item mean Euclidean distance to the other members of a subset.

    With ``subset_size`` smaller than the set, the subset is drawn without
    replacement under ``seed``; otherwise all vectors are used. Returns the
    per-item values and their mean.
    """
    try:
        V = np.asarray(vectors, dtype=float)
    except ValueError as exc:
        raise DimensionMismatch("vectors have unequal lengths") from exc
    if V.ndim != 2:
        raise DimensionMismatch("vectors must form a 2-D array")
    n = len(V) if subset_size is None else int(subset_size)
    if n < 2 or n > len(V):
        raise InsufficientDesigns(f"subset size {n} invalid for {len(V)} vectors")
    if n < len(V):
        V = V[np.sort(np.random.default_rng(seed).choice(len(V), n, replace=False))]
    s = squareform(pdist(V)).sum(axis=1) / (n - 1)
    return s, float(s.mean())
