"""Synthetic hierarchical classification data.

Samples come from a Gaussian mixture with two levels: well-separated coarse
clusters, each split into nearby fine sub-clusters.  Coarse labels are a
deterministic function of fine labels, so a coarse task is a strictly easier
view of the same samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .ensemble import SubsetId

SPLIT_FRACTIONS = {"train": 0.70, "val": 0.15, "test": 0.15}
SPLIT_ORDER = ("train", "val", "test")

# Sample noise, as a fraction of the fine sub-center spread.  At 2.0 the fine
# task is hard enough that joint training visibly helps while the coarse task
# stays easy; the intra/inter spread ratio stays below 1.
NOISE_FRACTION = 2.0

FINE = "fine"
COARSE = "coarse"


@dataclass(frozen=True)
class LabelHierarchy:
    """Total map from fine label to coarse label."""

    fine_to_coarse: tuple[int, ...]

    def __post_init__(self):
        if not self.fine_to_coarse:
            raise ValueError("hierarchy must cover at least one fine label")
        coarse = sorted(set(self.fine_to_coarse))
        if coarse != list(range(len(coarse))):
            raise ValueError(f"coarse labels must be 0..{len(coarse) - 1} with no gaps, got {coarse}")

    @classmethod
    def even(cls, coarse_classes: int, fine_per_coarse: int) -> LabelHierarchy:
        """Fine label f belongs to coarse class f // fine_per_coarse."""
        if coarse_classes < 1 or fine_per_coarse < 1:
            raise ValueError("class counts must be positive")
        return cls(tuple(c for c in range(coarse_classes) for _ in range(fine_per_coarse)))

    @property
    def num_fine(self) -> int:
        return len(self.fine_to_coarse)

    @property
    def num_coarse(self) -> int:
        return max(self.fine_to_coarse) + 1


def coarsify(fine_labels: np.ndarray, hierarchy: LabelHierarchy) -> np.ndarray:
    """Map fine labels through the hierarchy; rejects labels outside its range."""
    labels = np.asarray(fine_labels)
    if labels.size and (labels.min() < 0 or labels.max() >= hierarchy.num_fine):
        raise ValueError(f"fine label outside 0..{hierarchy.num_fine - 1}")
    table = np.asarray(hierarchy.fine_to_coarse)
    return table[labels]


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of the generated mixture.

    ``spread_ratio`` is intra-coarse spread over inter-coarse spread and must be
    below 1 so the coarse structure stays genuinely easier than the fine one.
    """

    coarse_classes: int = 4
    fine_per_coarse: int = 4
    dim: int = 16
    samples_per_class: int = 200
    spread_ratio: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.coarse_classes, self.fine_per_coarse, self.dim, self.samples_per_class) < 1:
            raise ValueError("counts and dimension must be positive")
        if not 0.0 < self.spread_ratio < 1.0:
            raise ValueError(f"spread_ratio must sit in (0, 1), got {self.spread_ratio}")

    @property
    def num_fine(self) -> int:
        return self.coarse_classes * self.fine_per_coarse

    @property
    def num_samples(self) -> int:
        return self.num_fine * self.samples_per_class


@dataclass
class LabeledDataset:
    """Feature matrix plus fine/coarse labels and a per-sample split tag."""

    features: np.ndarray
    fine: np.ndarray
    coarse: np.ndarray
    split: np.ndarray
    hierarchy: LabelHierarchy
    seed: int | None = None

    def __post_init__(self):
        n = self.features.shape[0]
        if not (self.fine.shape == self.coarse.shape == self.split.shape == (n,)):
            raise ValueError("labels and split tags must align with the feature rows")
        if not np.all(np.isin(self.split, SPLIT_ORDER)):
            raise ValueError(f"split tags must be one of {SPLIT_ORDER}")
        if not np.array_equal(self.coarse, coarsify(self.fine, self.hierarchy)):
            raise ValueError("coarse labels disagree with the hierarchy")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, tag: str) -> LabeledDataset:
        """Samples of one split, as a dataset sharing the parent's arrays."""
        if tag not in SPLIT_ORDER:
            raise ValueError(f"unknown split {tag!r}")
        mask = self.split == tag
        return LabeledDataset(
            features=self.features[mask],
            fine=self.fine[mask],
            coarse=self.coarse[mask],
            split=self.split[mask],
            hierarchy=self.hierarchy,
            seed=self.seed,
        )


@dataclass(frozen=True)
class DataView:
    """One subset's task view: the shared features with one label granularity."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    granularity: str


def gen_hierarchical(spec: SyntheticSpec) -> LabeledDataset:
    """Sample the mixture and assign a stratified 70/15/15 split per fine class."""
    rng = np.random.default_rng(spec.seed)
    coarse_centers = rng.normal(0.0, 1.0, size=(spec.coarse_classes, spec.dim))
    intra = spec.spread_ratio
    fine_centers = np.repeat(coarse_centers, spec.fine_per_coarse, axis=0) + rng.normal(
        0.0, intra, size=(spec.num_fine, spec.dim)
    )
    noise_scale = intra * NOISE_FRACTION

    n_train = round(spec.samples_per_class * SPLIT_FRACTIONS["train"])
    n_val = round(spec.samples_per_class * SPLIT_FRACTIONS["val"])
    counts = {"train": n_train, "val": n_val, "test": spec.samples_per_class - n_train - n_val}
    if min(counts.values()) < 1:
        raise ValueError(f"samples_per_class={spec.samples_per_class} leaves an empty split")

    features = np.empty((spec.num_samples, spec.dim))
    fine = np.empty(spec.num_samples, dtype=np.int64)
    tags = np.empty(spec.num_samples, dtype=object)
    row = 0
    for f in range(spec.num_fine):
        block = fine_centers[f] + rng.normal(0.0, noise_scale, size=(spec.samples_per_class, spec.dim))
        features[row : row + spec.samples_per_class] = block
        fine[row : row + spec.samples_per_class] = f
        pos = row
        for tag in SPLIT_ORDER:
            tags[pos : pos + counts[tag]] = tag
            pos += counts[tag]
        row += spec.samples_per_class

    hierarchy = LabelHierarchy.even(spec.coarse_classes, spec.fine_per_coarse)
    return LabeledDataset(
        features=features,
        fine=fine,
        coarse=coarsify(fine, hierarchy),
        split=tags.astype("U5"),
        hierarchy=hierarchy,
        seed=spec.seed,
    )


def process_dataset(data: LabeledDataset, s: SubsetId, granularity: Mapping[SubsetId, str] | None = None) -> DataView:
    """Label view for subset ``s``; granularity defaults to fine."""
    grain = FINE if granularity is None else granularity.get(s, FINE)
    if grain == FINE:
        return DataView(data.features, data.fine, data.hierarchy.num_fine, FINE)
    if grain == COARSE:
        return DataView(data.features, data.coarse, data.hierarchy.num_coarse, COARSE)
    raise ValueError(f"granularity for {s} must be '{FINE}' or '{COARSE}', got {grain!r}")


def save_csv(data: LabeledDataset, path: str | Path) -> None:
    """One row per sample: features, fine, coarse, split.  repr floats round-trip."""
    dim = data.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dim)] + ["fine", "coarse", "split"])
        for i in range(len(data)):
            writer.writerow([repr(float(v)) for v in data.features[i]] + [int(data.fine[i]), int(data.coarse[i]), data.split[i]])


def load_csv(path: str | Path) -> LabeledDataset:
    """Rebuild a dataset (and its hierarchy) from ``save_csv`` output."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-3:] != ["fine", "coarse", "split"]:
            raise ValueError(f"unrecognized dataset header in {path}")
        dim = len(header) - 3
        feats: list[list[float]] = []
        fine: list[int] = []
        coarse: list[int] = []
        tags: list[str] = []
        for line in reader:
            feats.append([float(v) for v in line[:dim]])
            fine.append(int(line[dim]))
            coarse.append(int(line[dim + 1]))
            tags.append(line[dim + 2])
    fine_arr = np.asarray(fine, dtype=np.int64)
    coarse_arr = np.asarray(coarse, dtype=np.int64)
    table = np.full(int(fine_arr.max()) + 1, -1, dtype=np.int64)
    for f, c in zip(fine_arr, coarse_arr):
        if table[f] not in (-1, c):
            raise ValueError(f"fine label {f} maps to both coarse {table[f]} and {c}")
        table[f] = c
    if np.any(table < 0):
        raise ValueError("some fine labels never appear; hierarchy incomplete")
    return LabeledDataset(
        features=np.asarray(feats),
        fine=fine_arr,
        coarse=coarse_arr,
        split=np.asarray(tags, dtype="U5"),
        hierarchy=LabelHierarchy(tuple(int(c) for c in table)),
        seed=None,
    )
