"""Landmark-point selection: class centers, per-class k-means, random columns, one-hot axes.

A landmark set is a d x m matrix of representative points in some feature
space, plus the provenance needed to rebuild the *same* m landmarks in a
different feature space (class membership, cluster assignment, or sampled
column indices).  That pairing is what lets a student landmark j correspond
to teacher landmark j.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .nystrom import feature_matrix


class LandmarkStrategy(str, Enum):
    CLASS_CENTERS = "centers"
    KMEANS_PER_CLASS = "kmeans"
    RANDOM = "random"
    ONE_HOT = "onehot"


@dataclass
class LandmarkSet:
    """Landmark matrix (one landmark per column) with selection provenance.

    ``class_of`` maps landmark index -> class label (absent for random
    landmarks).  ``assignment`` maps example index -> landmark index for
    strategies that partition the dataset (class centers, per-class k-means).
    ``indices`` records the sampled dataset columns for random landmarks.
    """

    points: np.ndarray
    strategy: LandmarkStrategy
    class_of: dict[int, int] | None = None
    seed: int | None = None
    assignment: np.ndarray | None = None
    indices: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = feature_matrix(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]


def as_labels(y, n: int | None = None) -> np.ndarray:
    """Coerce to a 1-D int64 label vector with non-negative entries."""
    labels = np.asarray(y, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
    if n is not None and labels.shape[0] != n:
        raise ValueError(f"expected {n} labels, got {labels.shape[0]}")
    if labels.size == 0 or labels.min() < 0:
        raise ValueError("labels must be non-empty and non-negative")
    return labels


def class_centers(x, y) -> LandmarkSet:
    """One landmark per class: the mean of that class's feature columns."""
    f = feature_matrix(x)
    labels = as_labels(y, f.shape[1])
    n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"class {int(empty[0])} has no examples")
    centers = np.empty((f.shape[0], n_classes))
    for label in range(n_classes):
        centers[:, label] = f[:, labels == label].mean(axis=1)
    return LandmarkSet(
        points=centers,
        strategy=LandmarkStrategy.CLASS_CENTERS,
        class_of={l: l for l in range(n_classes)},
        assignment=labels.copy(),
    )


def lloyd_kmeans(points, n_clusters: int, rng: np.random.Generator,
                 max_iter: int = 50, min_improvement: float = 1e-8):
    """Lloyd's k-means with farthest-point seeding.

    Returns (centers d x k, assignment, inertia_history).  The history holds
    the clustering objective (sum of squared distances to the nearest center)
    after each update step and is non-increasing.  Empty clusters are repaired
    by moving their center onto the farthest point of the largest cluster.
    """
    f = feature_matrix(points)
    n = f.shape[1]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")

    # Farthest-point seeding: random first pick, then repeatedly the point
    # farthest from all chosen centers.
    chosen = [int(rng.integers(n))]
    min_d2 = _sq_dist_to(f, f[:, chosen[0]])
    while len(chosen) < n_clusters:
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, _sq_dist_to(f, f[:, nxt]))
    centers = f[:, chosen].copy()

    history: list[float] = []
    assignment = np.zeros(n, dtype=np.int64)
    prev = np.inf
    for _ in range(max_iter):
        d2 = _pairwise_sq_dists(centers, f)
        assignment = np.argmin(d2, axis=0)
        sizes = np.bincount(assignment, minlength=n_clusters)
        for empty in np.flatnonzero(sizes == 0):
            donor = int(np.argmax(sizes))
            members = np.flatnonzero(assignment == donor)
            far = members[np.argmax(d2[donor, members])]
            centers[:, empty] = f[:, far]
            assignment[far] = empty
            sizes = np.bincount(assignment, minlength=n_clusters)
        for c in range(n_clusters):
            centers[:, c] = f[:, assignment == c].mean(axis=1)
        inertia = float(np.maximum(_pairwise_sq_dists(centers, f).min(axis=0), 0.0).sum())
        history.append(inertia)
        if prev - inertia < min_improvement:
            break
        prev = inertia
    return centers, assignment, history


def _sq_dist_to(f: np.ndarray, point: np.ndarray) -> np.ndarray:
    diff = f - point[:, None]
    return np.einsum("ij,ij->j", diff, diff)


def _pairwise_sq_dists(centers: np.ndarray, f: np.ndarray) -> np.ndarray:
    # (k x n) matrix of ||c_a - x_j||^2; the expansion can go slightly
    # negative from rounding, which argmin tolerates.
    c2 = np.einsum("ij,ij->j", centers, centers)
    f2 = np.einsum("ij,ij->j", f, f)
    return c2[:, None] - 2.0 * (centers.T @ f) + f2[None, :]


def kmeans_per_class(x, y, centers_per_class: int, seed: int) -> LandmarkSet:
    """Run k-means inside each class; m = n_classes * centers_per_class landmarks.

    Deterministic for a fixed seed.  Landmark columns are class-major: class
    0's centers first, then class 1's, and so on.
    """
    if centers_per_class < 1:
        raise ValueError("centers_per_class must be >= 1")
    f = feature_matrix(x)
    labels = as_labels(y, f.shape[1])
    n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    small = np.flatnonzero(counts < centers_per_class)
    if small.size:
        raise ValueError(
            f"class {int(small[0])} has {int(counts[small[0]])} examples, "
            f"fewer than centers_per_class={centers_per_class}"
        )
    rng = np.random.default_rng(seed)
    columns = []
    class_of: dict[int, int] = {}
    assignment = np.zeros(f.shape[1], dtype=np.int64)
    for label in range(n_classes):
        members = np.flatnonzero(labels == label)
        centers, local_assign, _ = lloyd_kmeans(f[:, members], centers_per_class, rng)
        base = label * centers_per_class
        columns.append(centers)
        for j in range(centers_per_class):
            class_of[base + j] = label
        assignment[members] = base + local_assign
    return LandmarkSet(
        points=np.hstack(columns),
        strategy=LandmarkStrategy.KMEANS_PER_CLASS,
        class_of=class_of,
        seed=seed,
        assignment=assignment,
    )


def random_landmarks(x, m: int, seed: int) -> LandmarkSet:
    """m distinct dataset columns sampled uniformly without replacement."""
    f = feature_matrix(x)
    n = f.shape[1]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    idx = np.random.default_rng(seed).choice(n, size=m, replace=False)
    return LandmarkSet(
        points=f[:, idx].copy(),
        strategy=LandmarkStrategy.RANDOM,
        seed=seed,
        indices=idx,
    )


def onehot_landmarks(n_classes: int) -> LandmarkSet:
    """Axis-vector landmarks: the identity matrix, one column per class."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    return LandmarkSet(
        points=np.eye(n_classes),
        strategy=LandmarkStrategy.ONE_HOT,
        class_of={l: l for l in range(n_classes)},
        assignment=None,
    )


def matched_landmarks(template: LandmarkSet, x, y=None) -> LandmarkSet:
    """Rebuild ``template``'s landmarks from features in another space.

    Landmark j of the result corresponds to landmark j of the template: group
    membership (class/cluster assignment) or sampled column indices carry over,
    only the feature space changes.  This is how student landmarks are paired
    with teacher landmarks.
    """
    f = feature_matrix(x)
    if template.strategy is LandmarkStrategy.RANDOM:
        if template.indices is None:
            raise ValueError("random landmark template is missing its column indices")
        return LandmarkSet(
            points=f[:, template.indices].copy(),
            strategy=template.strategy,
            seed=template.seed,
            indices=template.indices,
        )
    if template.strategy is LandmarkStrategy.ONE_HOT:
        return onehot_landmarks(template.m)
    if template.assignment is None:
        raise ValueError(f"{template.strategy.value} template is missing its assignment")
    if template.assignment.shape[0] != f.shape[1]:
        raise ValueError(
            f"template assigns {template.assignment.shape[0]} examples, features have {f.shape[1]}"
        )
    points = np.empty((f.shape[0], template.m))
    for j in range(template.m):
        members = template.assignment == j
        if not members.any():
            raise ValueError(f"landmark {j} has no assigned examples")
        points[:, j] = f[:, members].mean(axis=1)
    return LandmarkSet(
        points=points,
        strategy=template.strategy,
        class_of=dict(template.class_of) if template.class_of else None,
        seed=template.seed,
        assignment=template.assignment.copy(),
    )


def nearest_landmark_cost(x, landmarks) -> float:
    """Sum over examples of the distance to the nearest landmark.

    The quantity landmark selection tries to keep small; class centers should
    beat random columns on clustered data.
    """
    f = feature_matrix(x)
    pts = landmarks.points if isinstance(landmarks, LandmarkSet) else feature_matrix(landmarks)
    d2 = np.maximum(_pairwise_sq_dists(pts, f), 0.0)
    return float(np.sqrt(d2.min(axis=0)).sum())
