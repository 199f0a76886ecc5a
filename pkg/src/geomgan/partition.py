"""Voronoi partition of a latent space and the density-balancing point weights.

Each point's weight is the reciprocal of the number of same-dataset points
sharing its region, so every occupied region contributes equal loss mass.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

DEFAULT_MAX_ITER = 300


@dataclass
class Partition:
    centroids: np.ndarray  # (k, latent_dim)
    region_counts: np.ndarray  # (k,) counts of the builder dataset
    k: int
    seed: int = 0
    bic_curve: list[tuple[int, float]] | None = None

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float64))
        self.region_counts = np.asarray(self.region_counts, dtype=np.int64)
        if self.centroids.shape[0] != self.k or self.region_counts.shape[0] != self.k:
            raise ConfigError(f"partition k={self.k} inconsistent with arrays")
        if not np.isfinite(self.centroids).all():
            raise ConfigError("partition centroids must be finite")

    @property
    def id(self) -> str:
        """Content hash identifying this partition."""
        h = hashlib.sha1(self.centroids.tobytes())
        h.update(self.region_counts.tobytes())
        return h.hexdigest()[:12]


@dataclass
class WeightVector:
    weights: np.ndarray  # one positive float per row
    source_partition: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)


def _squared_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    p2 = (points * points).sum(axis=1)[:, None]
    c2 = (centroids * centroids).sum(axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centroids.T, 0.0)


def _plusplus_seeding(latents: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = latents.shape[0]
    centroids = np.empty((k, latents.shape[1]))
    centroids[0] = latents[rng.integers(n)]
    closest = _squared_dists(latents, centroids[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining mass on already-chosen points; fall back to uniform
            centroids[j] = latents[rng.integers(n)]
        else:
            centroids[j] = latents[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _squared_dists(latents, centroids[j : j + 1]).ravel())
    return centroids


def kmeans(latents: np.ndarray, k: int, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER) -> Partition:
    """Lloyd's algorithm from k-means++ seeding; empty clusters move to the farthest point."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2:
        raise ConfigError(f"latents must be 2-D, got shape {latents.shape}")
    n_distinct = np.unique(latents, axis=0).shape[0]
    if not 1 <= k <= n_distinct:
        raise ConfigError(f"k={k} but data has {n_distinct} distinct rows")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_seeding(latents, k, rng)
    assign = np.argmin(_squared_dists(latents, centroids), axis=1)
    for _ in range(max_iter):
        for j in range(k):
            members = latents[assign == j]
            if members.shape[0]:
                centroids[j] = members.mean(axis=0)
            else:
                worst = int(np.argmax(np.min(_squared_dists(latents, centroids), axis=1)))
                centroids[j] = latents[worst]
        new_assign = np.argmin(_squared_dists(latents, centroids), axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    counts = np.bincount(assign, minlength=k)
    return Partition(centroids=centroids, region_counts=counts, k=k, seed=seed)


def assign_region(p: Partition, latents: np.ndarray) -> np.ndarray:
    """Nearest-centroid region per row; ties resolve to the lowest region index."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[1] != p.centroids.shape[1]:
        raise ConfigError(f"latent dim {latents.shape[1]} != centroid dim {p.centroids.shape[1]}")
    return np.argmin(_squared_dists(latents, p.centroids), axis=1)


def compute_weights(p: Partition, latents: np.ndarray) -> WeightVector:
    """w_i = 1 / (number of given rows sharing row i's region).

    Counts always come from the rows passed in, so the same formula serves the
    builder dataset (where counts match region_counts) and fresh generated
    minibatches.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[0] == 0:
        return WeightVector(weights=np.empty(0), source_partition=p.id)
    assign = assign_region(p, latents)
    counts = np.bincount(assign, minlength=p.k)
    return WeightVector(weights=1.0 / counts[assign], source_partition=p.id)


# ---------------------------------------------------------------------------
# BIC model selection
#
# Spherical Gaussian per cluster with one shared variance estimated from the
# pooled within-cluster SSE:
#   BIC(k) = k (d+1) ln N - 2 ln L^


def _bic_score(latents: np.ndarray, p: Partition) -> float:
    n, d = latents.shape
    assign = assign_region(p, latents)
    counts = np.bincount(assign, minlength=p.k).astype(np.float64)
    sse = float(((latents - p.centroids[assign]) ** 2).sum())
    dof = max(n - p.k, 1)
    var = max(sse / (d * dof), 1e-12)
    occupied = counts > 0
    log_lik = (
        float((counts[occupied] * np.log(counts[occupied] / n)).sum())
        - 0.5 * n * d * np.log(2.0 * np.pi * var)
        - 0.5 * sse / var
    )
    return p.k * (d + 1) * np.log(n) - 2.0 * log_lik


def select_k_bic(latents: np.ndarray, k_range: tuple[int, int], seed: int = 0,
                 max_iter: int = DEFAULT_MAX_ITER) -> tuple[int, Partition]:
    """Fit k-means across k_range and return the argmin-BIC fit (ties -> smaller k)."""
    k_min, k_max = int(k_range[0]), int(k_range[1])
    latents = np.asarray(latents, dtype=np.float64)
    if k_min < 1 or k_max < k_min:
        raise ConfigError(f"bad k range [{k_min}, {k_max}]")
    if k_max > latents.shape[0] // 2 and k_max > 1:
        raise ConfigError(f"k_max={k_max} exceeds N/2={latents.shape[0] // 2}")

    best = None
    curve = []
    for k in range(k_min, k_max + 1):
        part = kmeans(latents, k, seed=seed, max_iter=max_iter)
        bic = _bic_score(latents, part)
        curve.append((k, float(bic)))
        if best is None or bic < best[0]:
            best = (bic, k, part)
    _, best_k, best_part = best
    best_part.bic_curve = curve
    return best_k, best_part


# ---------------------------------------------------------------------------
# export: centroid CSV plus a JSON sidecar


def export_partition(p: Partition, centroids_csv, sidecar_json) -> None:
    with open(centroids_csv, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"z{i}" for i in range(p.centroids.shape[1])])
        for row in p.centroids:
            writer.writerow([repr(float(v)) for v in row])
    sidecar = {
        "k": int(p.k),
        "counts": [int(c) for c in p.region_counts],
        "seed": int(p.seed),
        "bic_curve": [[int(k), float(b)] for k, b in (p.bic_curve or [])],
    }
    with open(sidecar_json, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_partition(centroids_csv, sidecar_json) -> Partition:
    with open(centroids_csv, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        next(reader)  # header
        centroids = np.array([[float(c) for c in row] for row in reader])
    with open(sidecar_json, "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    return Partition(
        centroids=centroids,
        region_counts=np.array(sidecar["counts"], dtype=np.int64),
        k=int(sidecar["k"]),
        seed=int(sidecar.get("seed", 0)),
        bic_curve=[(int(k), float(b)) for k, b in sidecar.get("bic_curve", [])] or None,
    )
