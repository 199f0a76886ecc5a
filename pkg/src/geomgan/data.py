"""Dataset container, mixture simulators, IDX/CSV ingestion, PCA reduction."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    rows: np.ndarray  # (N, D) float64
    labels: np.ndarray | None = None  # (N,) int64
    feature_names: list[str] | None = None
    provenance: str = ""

    def __post_init__(self):
        self.rows = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        if self.rows.ndim != 2:
            raise ConfigError(f"dataset rows must be 2-D, got shape {self.rows.shape}")
        bad = np.flatnonzero(~np.isfinite(self.rows).all(axis=1))
        if bad.size:
            raise FormatError(f"row {bad[0]} contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.rows.shape[0],):
                raise ConfigError(
                    f"{self.labels.shape[0]} labels for {self.rows.shape[0]} rows"
                )
        if self.feature_names is not None and len(self.feature_names) != self.rows.shape[1]:
            raise ConfigError(
                f"{len(self.feature_names)} feature names for {self.rows.shape[1]} features"
            )

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


# ---------------------------------------------------------------------------
# Gaussian mixture simulator


@dataclass
class MixtureComponent:
    mean: list[float]
    cov_diag: list[float]
    frequency: float


@dataclass
class TransitionPair:
    a: int
    b: int
    count: int


@dataclass
class MixtureSpec:
    components: list[MixtureComponent]
    total_n: int
    seed: int
    transition_pairs: list[TransitionPair] = field(default_factory=list)

    def validate(self) -> None:
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        total = sum(c.frequency for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"component frequencies sum to {total}, expected 1")
        d = len(self.components[0].mean)
        for i, c in enumerate(self.components):
            if len(c.mean) != d or len(c.cov_diag) != d:
                raise ConfigError(f"component {i} dims inconsistent with component 0")
            if any(v < 0 for v in c.cov_diag):
                raise ConfigError(f"component {i} has negative covariance entries")
        for p in self.transition_pairs:
            if p.count < 0:
                raise ConfigError(f"transition pair ({p.a},{p.b}) has negative count")
            if not (0 <= p.a < len(self.components) and 0 <= p.b < len(self.components)):
                raise ConfigError(f"transition pair ({p.a},{p.b}) references a missing component")
        if self.total_n < 0:
            raise ConfigError("total_n must be >= 0")

    def to_json(self) -> dict:
        return {
            "total_n": self.total_n,
            "seed": self.seed,
            "components": [
                {"mean": list(c.mean), "cov_diag": list(c.cov_diag), "frequency": c.frequency}
                for c in self.components
            ],
            "transition_pairs": [{"a": p.a, "b": p.b, "count": p.count} for p in self.transition_pairs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MixtureSpec":
        known = {"total_n", "seed", "components", "transition_pairs"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown mixture spec key {sorted(unknown)[0]!r}")
        spec = cls(
            components=[MixtureComponent(**c) for c in obj["components"]],
            total_n=int(obj["total_n"]),
            seed=int(obj.get("seed", 0)),
            transition_pairs=[TransitionPair(**p) for p in obj.get("transition_pairs", [])],
        )
        spec.validate()
        return spec


def load_mixture_spec(path) -> MixtureSpec:
    with open(path, "r", encoding="utf-8") as f:
        return MixtureSpec.from_json(json.load(f))


def simulate_mixture(spec: MixtureSpec) -> Dataset:
    """Draw labeled points from the mixture; transition rows between component
    means get their own label values after the component labels."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k = len(spec.components)
    means = np.array([c.mean for c in spec.components], dtype=np.float64)
    stds = np.sqrt(np.array([c.cov_diag for c in spec.components], dtype=np.float64))
    d = means.shape[1]

    freqs = np.array([c.frequency for c in spec.components])
    comp = rng.choice(k, size=spec.total_n, p=freqs)
    rows = means[comp] + stds[comp] * rng.standard_normal((spec.total_n, d))
    labels = comp.astype(np.int64)

    extra_rows, extra_labels = [], []
    for pair_idx, pair in enumerate(spec.transition_pairs):
        seg = means[pair.b] - means[pair.a]
        jitter = 0.05 * float(np.linalg.norm(seg))
        t = rng.uniform(0.0, 1.0, size=(pair.count, 1))
        pts = means[pair.a] + t * seg + jitter * rng.standard_normal((pair.count, d))
        extra_rows.append(pts)
        extra_labels.append(np.full(pair.count, k + pair_idx, dtype=np.int64))
    if extra_rows:
        rows = np.vstack([rows] + extra_rows)
        labels = np.concatenate([labels] + extra_labels)

    return Dataset(rows=rows, labels=labels, provenance=f"simulate_mixture(seed={spec.seed})")


# ---------------------------------------------------------------------------
# IDX image ingestion (big-endian, standard image/label file pair)


def load_idx_images(images_path, labels_path) -> Dataset:
    """Flattened image rows scaled to [-1, 1], with integer labels attached."""
    with open(images_path, "rb") as f:
        img_data = f.read()
    with open(labels_path, "rb") as f:
        lbl_data = f.read()

    if len(img_data) < 16:
        raise FormatError(f"{images_path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", img_data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}")
    expected = 16 + count * rows * cols
    if len(img_data) != expected:
        raise FormatError(f"{images_path}: {len(img_data)} bytes, expected {expected}")

    if len(lbl_data) < 8:
        raise FormatError(f"{labels_path}: truncated IDX header")
    lmagic, lcount = struct.unpack(">II", lbl_data[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{lmagic:08x}")
    if len(lbl_data) != 8 + lcount:
        raise FormatError(f"{labels_path}: {len(lbl_data)} bytes, expected {8 + lcount}")
    if lcount != count:
        raise FormatError(f"image count {count} != label count {lcount}")

    pixels = np.frombuffer(img_data, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    scaled = pixels.astype(np.float64) / 255.0 * 2.0 - 1.0  # 0 -> -1, 255 -> +1
    labels = np.frombuffer(lbl_data, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(rows=scaled, labels=labels, provenance=f"idx:{images_path}")


def save_idx_images(d: Dataset, images_path, labels_path) -> None:
    """Inverse of load_idx_images for square images; used to build fixtures."""
    if d.labels is None:
        raise ConfigError("IDX export needs labels")
    side = int(round(np.sqrt(d.dim)))
    if side * side != d.dim:
        raise ConfigError(f"{d.dim} features is not a square image")
    pixels = np.clip((d.rows + 1.0) / 2.0 * 255.0, 0, 255).round().astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, d.n, side, side))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, d.n))
        f.write(d.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# class-imbalance resampling


def oversample_class(d: Dataset, class_id: int, target_count: int, others_count: int, seed: int) -> Dataset:
    """Resample so class_id has target_count rows and every other class others_count.

    Sampling is without replacement up to a class's supply; only the overflow
    is drawn with replacement. Output row order is shuffled.
    """
    if d.labels is None:
        raise ConfigError("oversample_class needs a labeled dataset")
    classes = np.unique(d.labels)
    if class_id not in classes:
        raise ConfigError(f"class {class_id} absent from dataset")
    rng = np.random.default_rng(seed)
    picked = []
    for c in classes:
        idx = np.flatnonzero(d.labels == c)
        want = target_count if c == class_id else others_count
        if want <= idx.size:
            take = rng.choice(idx, size=want, replace=False)
        else:
            extra = rng.choice(idx, size=want - idx.size, replace=True)
            take = np.concatenate([idx, extra])
        picked.append(take)
    order = np.concatenate(picked)
    order = order[rng.permutation(order.size)]
    return Dataset(
        rows=d.rows[order],
        labels=d.labels[order],
        feature_names=d.feature_names,
        provenance=f"{d.provenance}|oversample(class={class_id})",
    )


def subsample(d: Dataset, n: int, seed: int) -> Dataset:
    """Uniform subsample without replacement (all rows if n >= N)."""
    if n >= d.n:
        return d
    rng = np.random.default_rng(seed)
    idx = rng.choice(d.n, size=n, replace=False)
    return Dataset(
        rows=d.rows[idx],
        labels=None if d.labels is None else d.labels[idx],
        feature_names=d.feature_names,
        provenance=f"{d.provenance}|subsample({n})",
    )


# ---------------------------------------------------------------------------
# CSV (RFC-4180 subset: comma, '.' decimal, UTF-8 header row)


def load_csv(path, label_column: str | None = None) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise FormatError(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        rows, labels = [], []
        for r, record in enumerate(reader):
            if len(record) != len(header):
                raise FormatError(f"{path}: row {r} has {len(record)} cells, header has {len(header)}")
            values = []
            for c, cell in enumerate(record):
                if c == label_idx:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise FormatError(f"{path}: non-numeric cell at row {r}, column {header[c]!r}") from None
            if label_idx is not None:
                try:
                    labels.append(int(float(record[label_idx])))
                except ValueError:
                    raise FormatError(f"{path}: non-numeric label at row {r}") from None
            rows.append(values)
    feature_names = [h for i, h in enumerate(header) if i != label_idx]
    arr = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(feature_names)))
    return Dataset(
        rows=arr,
        labels=np.array(labels, dtype=np.int64) if label_idx is not None else None,
        feature_names=feature_names,
        provenance=f"csv:{path}",
    )


def save_csv(d: Dataset, path, label_column: str = "label") -> None:
    """Writes shortest-round-trip float representations, so load_csv restores exact values."""
    names = d.feature_names or [f"f{i}" for i in range(d.dim)]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        header = list(names) + ([label_column] if d.labels is not None else [])
        writer.writerow(header)
        for i in range(d.n):
            record = [repr(float(v)) for v in d.rows[i]]
            if d.labels is not None:
                record.append(str(int(d.labels[i])))
            writer.writerow(record)


# ---------------------------------------------------------------------------
# PCA for desk-scale image runs


@dataclass
class PcaResult:
    dataset: Dataset
    components: np.ndarray  # (D, dims) orthonormal columns
    mean: np.ndarray  # (D,)
    explained_variance_ratio: np.ndarray  # (dims,)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, reduced: np.ndarray) -> np.ndarray:
        return reduced @ self.components.T + self.mean


def pca_reduce(d: Dataset, dims: int) -> PcaResult:
    """Project centered rows onto the top principal axes of the covariance."""
    if not 1 <= dims <= d.dim:
        raise ConfigError(f"pca dims must be in [1, {d.dim}], got {dims}")
    if d.n < 2:
        raise ConfigError("pca needs at least two rows")
    mean = d.rows.mean(axis=0)
    centered = d.rows - mean
    cov = centered.T @ centered / (d.n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:dims]
    components = eigvecs[:, order]
    # deterministic sign: largest-magnitude loading positive
    for j in range(components.shape[1]):
        i_max = int(np.argmax(np.abs(components[:, j])))
        if components[i_max, j] < 0:
            components[:, j] = -components[:, j]
    eigvals = np.clip(eigvals, 0.0, None)
    total = float(eigvals.sum())
    ratios = eigvals[order] / total if total > 0 else np.zeros(dims)
    reduced = Dataset(
        rows=centered @ components,
        labels=d.labels,
        provenance=f"{d.provenance}|pca({dims})",
    )
    return PcaResult(
        dataset=reduced,
        components=np.ascontiguousarray(components),
        mean=mean,
        explained_variance_ratio=ratios,
    )
