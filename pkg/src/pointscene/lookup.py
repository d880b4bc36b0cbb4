"""Room label lookup: compress view embeddings to K representatives with
k-means, score each against category text embeddings, majority-vote the
per-representative argmax predictions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingBackend, cosine_similarity_matrix


@dataclass(frozen=True)
class LookupParams:
    num_representatives: int = 0  # 0 resolves to min(4, number of views)
    max_iterations: int = 50
    seed: int = 0

    def resolve_k(self, num_views: int) -> int:
        k = self.num_representatives if self.num_representatives > 0 else min(4, num_views)
        if not (1 <= k <= num_views):
            raise ValueError(f"K={k} out of range for {num_views} view embeddings")
        return k


@dataclass(frozen=True)
class RoomLabelResult:
    label: str
    votes: dict[str, int]
    mean_similarity: dict[str, float]
    per_view_predictions: tuple[str, ...]
    similarity_matrix: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "votes": dict(sorted(self.votes.items())),
            "mean_similarity": {k: float(v) for k, v in sorted(self.mean_similarity.items())},
            "per_view_predictions": list(self.per_view_predictions),
            "similarity_matrix": np.asarray(self.similarity_matrix).tolist(),
        }


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centroid; take the first unchosen
            for idx in range(n):
                if idx not in chosen:
                    chosen.append(idx)
                    break
            else:
                chosen.append(chosen[-1])
            continue
        idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans_representatives(
    view_embeddings, params: LookupParams | None = None
) -> np.ndarray:
    """Lloyd's k-means (Euclidean, k-means++ seeding) over unit view vectors.

    Returns K centroids renormalized to unit length. Empty clusters are
    re-seeded to the point farthest from all current centroids. Same seed,
    same inputs: identical output.
    """
    params = params or LookupParams()
    points = np.atleast_2d(np.asarray(view_embeddings, dtype=np.float64))
    k = params.resolve_k(len(points))
    rng = np.random.default_rng(params.seed)
    centroids = _kmeans_pp_init(points, k, rng)
    assignment = np.full(len(points), -1)
    for _ in range(params.max_iterations):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignment = d2.argmin(axis=1)
        for c in range(k):
            members = points[new_assignment == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                min_d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2).min(axis=1)
                centroids[c] = points[int(min_d2.argmax())]
                new_assignment = (
                    ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
                )
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    norms = np.linalg.norm(centroids, axis=1)
    for c in range(k):
        if norms[c] < 1e-12:
            members = points[assignment == c]
            centroids[c] = members[0] if len(members) else points[0]
            norms[c] = np.linalg.norm(centroids[c])
    return centroids / norms[:, None]


def classify_room(
    representatives, categories: list[str], backend: EmbeddingBackend
) -> RoomLabelResult:
    """Majority vote over per-representative argmax against category texts.

    Vote ties break by highest mean cosine over representatives, then
    lexicographically; within-row argmax ties break lexicographically so the
    outcome is invariant to category list order.
    """
    if not categories:
        raise ValueError("category list is empty")
    reps = np.atleast_2d(np.asarray(representatives, dtype=np.float64))
    text_vecs = [backend.embed_text(c) for c in categories]
    sims = cosine_similarity_matrix(reps, text_vecs)

    predictions = []
    for row in sims:
        best = row.max()
        tied = [categories[j] for j in range(len(categories)) if row[j] >= best - 1e-12]
        predictions.append(min(tied))

    votes = {c: 0 for c in categories}
    for p in predictions:
        votes[p] += 1
    mean_sim: dict[str, float] = {}
    for j, c in enumerate(categories):
        # duplicate category names collapse onto one key; identical text gives
        # identical similarity so which column wins is immaterial
        mean_sim[c] = float(sims[:, j].mean())

    top = max(votes.values())
    tied = [c for c, v in votes.items() if v == top]
    label = min(tied, key=lambda c: (-mean_sim[c], c))
    return RoomLabelResult(label, votes, mean_sim, tuple(predictions), sims)
