"""Inference and reporting: cosine KNN, long-tailed metrics, 2-D layouts.

Classification is visual-only at test time: train-set embeddings form
the gallery, each query votes among its k most cosine-similar gallery
items.  Metrics are reported overall and per class, with the per-class
means additionally restricted to tail classes (train count below 100)
and head classes (above 1000), the split that makes imbalance damage
visible.  Class-centroid cosine distance matrices can be pressed into
2-D with a Kamada-Kawai style stress minimizer for figures.
"""

from dataclasses import dataclass, field

import numpy as np

from . import embednet

TAIL_THRESHOLD = 100
HEAD_THRESHOLD = 1000


@dataclass
class EmbeddingTable:
    """N embedding rows with ids and integer labels; zero rows rejected
    (cosine needs a direction)."""

    ids: list
    labels: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        self.ids = list(self.ids)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise ValueError("embedding matrix must be (N, E) aligned with ids")
        if self.labels.shape != (len(self.ids),):
            raise ValueError("labels must align with ids")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite embedding values")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms == 0):
            bad = self.ids[int(np.argmin(norms))]
            raise ValueError(f"zero-norm embedding row {bad!r}")

    @property
    def n(self):
        return len(self.ids)


def embed_features(params, table):
    """Push a FeatureTable through the head -> EmbeddingTable."""
    emb, _, _ = embednet.forward(params, table.matrix)
    return EmbeddingTable(table.ids, table.labels, emb)


def _normalize_rows(matrix):
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


def knn_predict(gallery, queries, k):
    """Majority vote among the k most cosine-similar gallery items.

    Neighbor order is by descending similarity with gallery index as
    the tie key.  Vote ties go to the class whose in-k members sit at
    the smaller mean cosine distance, then to the smaller class id.
    """
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if gallery.n == 0:
        raise ValueError("empty gallery")
    if k > gallery.n:
        raise ValueError(f"k={k} exceeds gallery size {gallery.n}")
    if gallery.matrix.shape[1] != queries.matrix.shape[1]:
        raise ValueError("gallery/query embedding dims differ")

    sims = _normalize_rows(queries.matrix) @ _normalize_rows(gallery.matrix).T
    out = np.empty(queries.n, dtype=np.int64)
    for qi in range(queries.n):
        # stable sort on -sim keeps equal-similarity items in index order
        order = np.argsort(-sims[qi], kind="stable")[:k]
        neigh_labels = gallery.labels[order]
        neigh_sims = sims[qi][order]
        votes = {}
        for lbl in neigh_labels:
            votes[int(lbl)] = votes.get(int(lbl), 0) + 1
        top = max(votes.values())
        tied = sorted(c for c, v in votes.items() if v == top)
        if len(tied) == 1:
            out[qi] = tied[0]
        else:
            # mean cosine distance of each tied class's members within the k
            best = min(
                tied,
                key=lambda c: (float(np.mean(1.0 - neigh_sims[neigh_labels == c])), c),
            )
            out[qi] = best
    return out


@dataclass
class MetricsReport:
    """Accuracy breakdown; tail/head are None when no class qualifies."""

    overall: float
    macro: float
    tail: object
    head: object
    per_class: list
    confusion: np.ndarray
    tail_threshold: int
    head_threshold: int
    n_test: int
    k: object = None
    alignment: dict = field(default_factory=dict)

    def to_dict(self):
        obj = {
            "overall": self.overall,
            "macro": self.macro,
            "tail": self.tail,
            "head": self.head,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "tail_threshold": self.tail_threshold,
            "head_threshold": self.head_threshold,
            "n_test": self.n_test,
            "k": self.k,
        }
        if self.alignment:
            obj["alignment"] = self.alignment
        return obj


def compute_metrics(predictions, truth, train_counts,
                    tail_threshold=TAIL_THRESHOLD, head_threshold=HEAD_THRESHOLD,
                    k=None):
    """Confusion matrix plus overall/macro/tail/head accuracy.

    `train_counts[c]` is class c's training sample count; it decides
    tail (< tail_threshold) and head (> head_threshold) membership.
    Macro-style means run over classes with at least one test sample;
    an empty tail or head set is reported as None, never as 0.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    train_counts = np.asarray(train_counts, dtype=np.int64)
    if predictions.shape != truth.shape or predictions.ndim != 1:
        raise ValueError("predictions and truth must be equal-length vectors")
    if predictions.size == 0:
        raise ValueError("no test items")
    n_classes = len(train_counts)
    if truth.max() >= n_classes or predictions.max() >= n_classes:
        raise ValueError("class id out of range of train_counts")
    if truth.min() < 0 or predictions.min() < 0:
        raise ValueError("negative class id")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, predictions), 1)

    test_counts = confusion.sum(axis=1)
    present = test_counts > 0
    recalls = np.full(n_classes, np.nan)
    recalls[present] = np.diag(confusion)[present] / test_counts[present]

    overall = float(np.trace(confusion) / confusion.sum())
    macro = float(np.mean(recalls[present]))

    def group_mean(mask):
        mask = mask & present
        return float(np.mean(recalls[mask])) if np.any(mask) else None

    tail = group_mean(train_counts < tail_threshold)
    head = group_mean(train_counts > head_threshold)
    per_class = [None if np.isnan(r) else float(r) for r in recalls]
    return MetricsReport(overall, macro, tail, head, per_class, confusion,
                         int(tail_threshold), int(head_threshold),
                         int(predictions.size), k)


def class_centroids(table):
    """Per-class arithmetic-mean embeddings -> (sorted class ids, (C, E))."""
    class_ids = sorted(int(c) for c in np.unique(table.labels))
    cents = np.stack([table.matrix[table.labels == c].mean(axis=0)
                      for c in class_ids])
    return class_ids, cents


def centroid_distance_matrix(table):
    """Cosine distance (1 - cos) between class centroids.

    Returns (sorted class ids, C x C symmetric matrix with zero diagonal).
    """
    class_ids, cents = class_centroids(table)
    norms = np.linalg.norm(cents, axis=1)
    if np.any(norms == 0):
        bad = class_ids[int(np.argmin(norms))]
        raise ValueError(f"class {bad} centroid has zero norm; cosine undefined")
    normed = cents / norms[:, None]
    dist = 1.0 - normed @ normed.T
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return class_ids, dist


def anchor_centroid_cosines(table, anchors):
    """Mean cosine between each class centroid and its genetic anchor.

    `anchors` maps taxon -> 256-vector (dict or GeneticAnchor list).
    Returns (mean cosine, {taxon: cosine}).  The quantity stage 2 is
    supposed to push up.
    """
    if not isinstance(anchors, dict):
        anchors = {a.taxon: a.vector for a in anchors}
    class_ids, cents = class_centroids(table)
    cosines = {}
    for cid, cent in zip(class_ids, cents):
        if cid not in anchors:
            raise ValueError(f"no anchor for class {cid}")
        a = np.asarray(anchors[cid], dtype=np.float64)
        denom = np.linalg.norm(a) * np.linalg.norm(cent)
        if denom == 0:
            raise ValueError(f"zero-norm centroid or anchor for class {cid}")
        cosines[cid] = float(np.dot(a, cent) / denom)
    mean = float(np.mean([cosines[c] for c in class_ids]))
    return mean, cosines


@dataclass
class Layout2D:
    coords: np.ndarray
    stress: float
    n_iters: int

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("non-finite layout coordinates")
        if self.stress < 0:
            raise ValueError("stress cannot be negative")


def _stress_and_grad(points, dist, weights):
    diff = points[:, None, :] - points[None, :, :]
    norms = np.linalg.norm(diff, axis=2)
    err = norms - dist
    stress = 0.5 * float(np.sum(weights * err ** 2))  # each pair counted twice
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(norms[:, :, None] > 0, diff / norms[:, :, None], 0.0)
    grad = 2.0 * np.sum((weights * err)[:, :, None] * unit, axis=1)
    return stress, grad


def _descend(points, dist, weights, iters, tol):
    """Gradient descent with a backtracking line search from one start.
    Returns (points, stress, iterations taken); accepted steps never
    increase the stress."""
    stress, grad = _stress_and_grad(points, dist, weights)
    step = 0.1
    done_iters = 0
    for it in range(int(iters)):
        gnorm2 = float(np.sum(grad ** 2))
        if gnorm2 == 0:
            break
        # sufficient decrease: f(p - s g) <= f(p) - 1e-4 s |g|^2
        accepted = False
        s = step
        while s > 1e-18:
            cand = points - s * grad
            cand_stress, cand_grad = _stress_and_grad(cand, dist, weights)
            if cand_stress <= stress - 1e-4 * s * gnorm2:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        done_iters = it + 1
        improvement = stress - cand_stress
        rel = improvement / stress if stress > 0 else 0.0
        points, stress, grad = cand, cand_stress, cand_grad
        step = s * 2.0
        if rel < tol or stress == 0.0:
            break
    return points, stress, done_iters


def kamada_kawai_layout(dist, iters=2000, tol=1e-12, seed=0, restarts=8):
    """Press a distance matrix into 2-D by minimizing weighted stress.

    E = sum over pairs i<j of w_ij (||p_i - p_j|| - d_ij)^2 with
    w_ij = d_ij^-2 (zero-distance pairs get weight 0, they carry no
    scale information).  Each start is a seeded draw on the unit disk
    followed by gradient descent with a backtracking line search
    (sufficient-decrease test, step halving, step doubling after each
    accepted move), stopping at `iters` or when the relative improvement
    drops below `tol`.  The stress landscape has local minima (a square
    can collapse into a crossed quadrilateral), so up to `restarts`
    starts are tried, all drawn from one generator seeded with `seed`,
    and the lowest-stress layout wins; the search ends early once a
    start lands at machine-zero stress.  n_iters on the result sums the
    iterations over every start actually run.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.ndim != 2 or dist.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if np.any(dist < 0):
        raise ValueError("negative distances")
    if not np.allclose(dist, dist.T, atol=1e-12):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.diag(dist) != 0):
        raise ValueError("distance matrix diagonal must be zero")
    if int(restarts) < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    if n == 1:
        return Layout2D(np.zeros((1, 2)), 0.0, 0)

    with np.errstate(divide="ignore"):
        weights = np.where(dist > 0, dist ** -2.0, 0.0)
    np.fill_diagonal(weights, 0.0)

    rng = np.random.default_rng(seed)
    best_points, best_stress = None, np.inf
    total_iters = 0
    for _ in range(int(restarts)):
        # uniform on the unit disk
        radius = np.sqrt(rng.random(n))
        angle = 2.0 * np.pi * rng.random(n)
        points = np.column_stack([radius * np.cos(angle),
                                  radius * np.sin(angle)])
        points, stress, done_iters = _descend(points, dist, weights,
                                              iters, tol)
        total_iters += done_iters
        if stress < best_stress:
            best_points, best_stress = points, stress
        if best_stress <= 1e-12:
            break
    return Layout2D(best_points, best_stress, total_iters)


def write_layout_csv(class_ids, layout, path):
    """CSV rows ``class_id,x,y,stress`` (stress repeated, it is global)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("class_id,x,y,stress\n")
        for cid, (x, y) in zip(class_ids, layout.coords):
            fh.write(f"{cid},{float(x)!r},{float(y)!r},{layout.stress!r}\n")
