"""Label transfer, F-scores, confusion matrices, mean-abundance R², KDE grids."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .partition import Partition, assign_region


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable config, for report provenance."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# nearest-neighbor label transfer


def nn_label_transfer(mapped: np.ndarray, target: Dataset, chunk: int = 512) -> np.ndarray:
    """Label of the nearest target row (Euclidean) per mapped row; ties take
    the lowest target index."""
    if target.labels is None:
        raise ConfigError("nn_label_transfer needs a labeled target dataset")
    mapped = np.asarray(mapped, dtype=np.float64)
    if mapped.shape[1] != target.dim:
        raise ConfigError(f"mapped rows have {mapped.shape[1]} features, target has {target.dim}")
    t2 = (target.rows * target.rows).sum(axis=1)[None, :]
    out = np.empty(mapped.shape[0], dtype=np.int64)
    for start in range(0, mapped.shape[0], chunk):
        block = mapped[start : start + chunk]
        d2 = (block * block).sum(axis=1)[:, None] + t2 - 2.0 * block @ target.rows.T
        out[start : start + chunk] = target.labels[np.argmin(d2, axis=1)]
    return out


# ---------------------------------------------------------------------------
# classification scores


def f_score(pred: np.ndarray, truth: np.ndarray, class_id: int) -> float:
    """F1 = 2PR/(P+R); 0 when the class is never predicted and never recalled."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ConfigError(f"{pred.shape[0]} predictions vs {truth.shape[0]} truths")
    tp = int(((pred == class_id) & (truth == class_id)).sum())
    fp = int(((pred == class_id) & (truth != class_id)).sum())
    fn = int(((pred != class_id) & (truth == class_id)).sum())
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


def macro_f(pred: np.ndarray, truth: np.ndarray) -> float:
    """Unweighted mean F1 over the classes present in the truth labels."""
    classes = np.unique(truth)
    return float(np.mean([f_score(pred, truth, c) for c in classes]))


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, classes) -> np.ndarray:
    """counts[i, j] = rows with truth classes[i] predicted as classes[j]."""
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(np.asarray(pred), np.asarray(truth)):
        if t in index and p in index:
            m[index[t], index[p]] += 1
    return m


# ---------------------------------------------------------------------------
# per-feature mean-abundance agreement


def population_mean_r2(source: Dataset, mapped: np.ndarray, target: Dataset, mask) -> tuple[float, float]:
    """Squared Pearson correlation of per-feature population means against the
    target, before (source vs target) and after (mapped vs target) alignment.

    mask(dataset) selects the population's rows; mapped rows correspond 1:1
    to source rows, so the source mask selects the mapped population too.
    """
    mapped = np.asarray(mapped, dtype=np.float64)
    if mapped.shape != source.rows.shape:
        raise ConfigError(f"mapped shape {mapped.shape} != source shape {source.rows.shape}")
    src_sel = np.asarray(mask(source), dtype=bool)
    tgt_sel = np.asarray(mask(target), dtype=bool)
    if not src_sel.any() or not tgt_sel.any():
        raise ConfigError("population mask selects no rows")
    target_means = target.rows[tgt_sel].mean(axis=0)
    before = _pearson_sq(source.rows[src_sel].mean(axis=0), target_means)
    after = _pearson_sq(mapped[src_sel].mean(axis=0), target_means)
    return before, after


def _pearson_sq(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return 1.0 if np.allclose(a, b) else 0.0
    r = float((a * b).sum() / denom)
    return r * r


# ---------------------------------------------------------------------------
# kernel density grids (the figure interface)


@dataclass
class KdeGrid:
    xs: np.ndarray  # (res_x,)
    ys: np.ndarray  # (res_y,)
    density: np.ndarray  # (res_y, res_x)

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.density, self.xs, axis=1), self.ys))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["x", "y", "density"])
            for iy, y in enumerate(self.ys):
                for ix, x in enumerate(self.xs):
                    writer.writerow([repr(float(x)), repr(float(y)), repr(float(self.density[iy, ix]))])


def scott_bandwidth(points: np.ndarray) -> np.ndarray:
    """Scott's rule per dimension: n^(-1/6) * sigma_d (floored to avoid zero width)."""
    n = points.shape[0]
    sigma = points.std(axis=0, ddof=1) if n > 1 else np.ones(points.shape[1])
    return np.maximum(n ** (-1.0 / 6.0) * sigma, 1e-3)


def kde_grid(points: np.ndarray, bandwidth=None, grid=((-1.0, 1.0), (-1.0, 1.0), 64)) -> KdeGrid:
    """Gaussian product-kernel density of 2-D points evaluated on a grid."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ConfigError(f"kde_grid needs (n, 2) points, got {points.shape}")
    (x_lo, x_hi), (y_lo, y_hi), res = grid
    xs = np.linspace(x_lo, x_hi, int(res))
    ys = np.linspace(y_lo, y_hi, int(res))
    if bandwidth is None:
        h = scott_bandwidth(points)
    else:
        h = np.asarray(bandwidth, dtype=np.float64) * np.ones(2)
    gx = (xs[None, :] - points[:, 0][:, None]) / h[0]  # (n, res)
    gy = (ys[None, :] - points[:, 1][:, None]) / h[1]
    kx = np.exp(-0.5 * gx * gx) / (h[0] * np.sqrt(2 * np.pi))
    ky = np.exp(-0.5 * gy * gy) / (h[1] * np.sqrt(2 * np.pi))
    density = ky.T @ kx / points.shape[0]  # (res_y, res_x)
    return KdeGrid(xs=xs, ys=ys, density=density)


# ---------------------------------------------------------------------------
# geometry-vs-density summary used by the generation experiment


def region_occupancy_entropy(p: Partition, latents: np.ndarray) -> float:
    """Shannon entropy (nats) of the region-occupancy distribution."""
    assign = assign_region(p, latents)
    counts = np.bincount(assign, minlength=p.k).astype(np.float64)
    probs = counts[counts > 0] / counts.sum()
    return float(-(probs * np.log(probs)).sum())


# ---------------------------------------------------------------------------
# report container


@dataclass
class EvalReport:
    f_scores: dict = field(default_factory=dict)  # variant -> domain -> class -> F
    confusion: dict = field(default_factory=dict)  # variant -> domain -> list of lists
    r_squared: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)  # seeds, config hash, scenario name

    def to_json(self) -> dict:
        return {
            "f_scores": self.f_scores,
            "confusion": self.confusion,
            "r_squared": self.r_squared,
            "extras": self.extras,
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
        return cls(
            f_scores=obj.get("f_scores", {}),
            confusion=obj.get("confusion", {}),
            r_squared=obj.get("r_squared", {}),
            extras=obj.get("extras", {}),
            metadata=obj.get("metadata", {}),
        )


def save_confusion_csv(matrix: np.ndarray, classes, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["truth\\pred"] + [str(c) for c in classes])
        for c, row in zip(classes, matrix):
            writer.writerow([str(c)] + [int(v) for v in row])


def save_f_scores_csv(f_by_variant: dict, path) -> None:
    """f_by_variant: variant -> domain -> class -> F."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "domain", "class", "f_score"])
        for variant in sorted(f_by_variant):
            for domain in sorted(f_by_variant[variant]):
                for cls in sorted(f_by_variant[variant][domain]):
                    writer.writerow([variant, domain, cls, repr(float(f_by_variant[variant][domain][cls]))])
