"""Multi-source datasets: synthetic generation, category shift, batching, CSV IO."""

import csv
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ParseError, ShapeError

SHIFT_MODES = ("vanilla", "overlap", "disjoint")


@dataclass(frozen=True)
class DomainDataset:
    """One source (labeled) or the target (unlabeled).

    ``class_set`` is the sorted tuple of classes present in ``labels``; it is
    empty for unlabeled data.
    """

    name: str
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    class_set: tuple = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError(f"{self.name}: features must be a non-empty [n x d] matrix")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.name}: non-finite feature values")
        object.__setattr__(self, "features", x)
        if self.labels is None:
            object.__setattr__(self, "class_set", () if self.class_set is None else tuple(self.class_set))
            if self.class_set:
                raise ValueError(f"{self.name}: unlabeled data cannot carry a class set")
            return
        y = np.asarray(self.labels, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise ShapeError(f"{self.name}: {y.shape[0]} labels for {x.shape[0]} rows")
        object.__setattr__(self, "labels", y)
        present = tuple(int(c) for c in np.unique(y))
        if self.class_set is None:
            object.__setattr__(self, "class_set", present)
        else:
            cs = tuple(sorted(int(c) for c in self.class_set))
            if not set(present) <= set(cs):
                raise ValueError(f"{self.name}: labels {set(present) - set(cs)} outside class_set")
            object.__setattr__(self, "class_set", cs)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def labeled(self):
        return self.labels is not None

    def unlabeled(self):
        return DomainDataset(self.name, self.features)


@dataclass(frozen=True)
class ShiftSpec:
    mode: str = "vanilla"
    n_sources: int = 2
    total_classes: int = 4

    def __post_init__(self):
        if self.mode not in SHIFT_MODES:
            raise ValueError(f"shift mode must be one of {SHIFT_MODES}, got {self.mode!r}")
        if self.mode == "vanilla" and self.n_sources < 2:
            raise ValueError("vanilla multi-source setting needs at least 2 sources")
        if self.mode != "vanilla" and self.n_sources != 2:
            raise ValueError(f"{self.mode} category shift is defined for exactly 2 sources")
        if self.mode == "overlap" and self.total_classes < 3:
            raise ValueError("overlap split needs at least 3 classes (private sets would be empty)")
        if self.mode == "disjoint" and self.total_classes < 2:
            raise ValueError("disjoint split needs at least 2 classes")


@dataclass
class BatchTuple:
    target_batch: np.ndarray
    source_batches: list  # [(features [M x d], labels [M]), ...]
    target_index: np.ndarray = None


def _rotation(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def sample_blobs(rng, n_classes, n, radius=3.0, std=0.5):
    """Class-balanced Gaussian blobs with centres evenly spaced on a circle."""
    labels = rng.permutation(np.arange(n) % n_classes)
    angles = 2 * np.pi * labels / n_classes
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centres + std * rng.standard_normal((n, 2)), labels


def gen_synthetic_domains(n_sources, n_classes, samples_per_domain, shift_strength, seed):
    """Sources rotated by ``j*theta`` and shifted by ``j*(theta/2, -theta/2)``
    (j = 1..N); the target is rotated by ``(N+1)*theta/2``.

    Each domain draws from its own stream ``default_rng([seed, j])`` with
    ``j = N`` for the target. Returns ``(sources, target, target_labels)``;
    the target dataset itself carries no labels.
    """
    if n_sources < 1 or n_classes < 2 or samples_per_domain < n_classes:
        raise ValueError("need n_sources >= 1, n_classes >= 2, samples_per_domain >= n_classes")
    theta = float(shift_strength)
    sources = []
    for j in range(1, n_sources + 1):
        x, y = sample_blobs(np.random.default_rng([seed, j - 1]), n_classes, samples_per_domain)
        x = x @ _rotation(j * theta).T + j * np.array([theta / 2, -theta / 2])
        sources.append(DomainDataset(f"source{j}", x, y))
    x, y = sample_blobs(np.random.default_rng([seed, n_sources]), n_classes, samples_per_domain)
    x = x @ _rotation((n_sources + 1) * theta / 2).T
    return sources, DomainDataset("target", x), y


def category_split(spec: ShiftSpec):
    """Class lists kept by each source under ``spec``."""
    k = spec.total_classes
    every = list(range(k))
    if spec.mode == "vanilla":
        return [every] * spec.n_sources
    if spec.mode == "overlap":
        private = k // 3
        return [every[: k - private], every[private:]]
    half = k // 2
    return [every[:half], every[half:]]


def apply_category_shift(sources, spec: ShiftSpec):
    if len(sources) != spec.n_sources:
        raise ValueError(f"spec expects {spec.n_sources} sources, got {len(sources)}")
    out = []
    for src, keep in zip(sources, category_split(spec)):
        mask = np.isin(src.labels, keep)
        if not mask.any():
            raise ValueError(f"{src.name}: no samples left after category shift")
        out.append(DomainDataset(src.name, src.features[mask], src.labels[mask], class_set=keep))
    return out


def make_batches(sources, target, batch_size, seed, epochs=1) -> Iterator[BatchTuple]:
    """Yield mini-batch tuples of exactly ``batch_size`` rows per domain.

    One epoch walks the shuffled target once; the last short target batch is
    topped up by sampling with replacement. Each source keeps its own shuffled
    cursor and reshuffles when exhausted. ``epochs=None`` streams forever.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if target.n < 1 or any(s.n < 1 for s in sources):
        raise ValueError("empty domain")
    rng = np.random.default_rng(seed)
    orders = [rng.permutation(s.n) for s in sources]
    cursors = [0] * len(sources)

    def take_source(j):
        idx = np.empty(batch_size, dtype=np.int64)
        filled = 0
        while filled < batch_size:
            if cursors[j] >= len(orders[j]):
                orders[j] = rng.permutation(sources[j].n)
                cursors[j] = 0
            chunk = orders[j][cursors[j]: cursors[j] + batch_size - filled]
            idx[filled: filled + len(chunk)] = chunk
            filled += len(chunk)
            cursors[j] += len(chunk)
        return idx

    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(target.n)
        for start in range(0, target.n, batch_size):
            t_idx = order[start: start + batch_size]
            if len(t_idx) < batch_size:
                t_idx = np.concatenate([t_idx, rng.integers(0, target.n, batch_size - len(t_idx))])
            src = []
            for j, s in enumerate(sources):
                idx = take_source(j)
                src.append((s.features[idx], s.labels[idx]))
            yield BatchTuple(target.features[t_idx], src, t_idx)
        epoch += 1


def load_csv_dataset(path, has_labels, name=None):
    """Comma separated, no header; the label column comes last when present."""
    rows, labels = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if has_labels and width < 2:
                    raise ParseError("labeled rows need at least one feature and a label column", lineno)
            elif len(row) != width:
                raise ParseError(f"ragged row: {len(row)} columns, expected {width}", lineno)
            cells = row[:-1] if has_labels else row
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", lineno) from None
            if has_labels:
                try:
                    labels.append(int(row[-1]))
                except ValueError:
                    raise ParseError(f"label {row[-1]!r} is not an integer", lineno) from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    name = name or str(path)
    if has_labels:
        return DomainDataset(name, np.array(rows), np.array(labels))
    return DomainDataset(name, np.array(rows))


def save_csv_dataset(path, dataset: DomainDataset, labels=None):
    """Write ``dataset`` in the format read by :func:`load_csv_dataset`.

    ``labels`` overrides the dataset's own labels (used to write held-out
    target labels next to the features).
    """
    y = dataset.labels if labels is None else np.asarray(labels)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(dataset.features):
            cells = [repr(float(v)) for v in row]
            if y is not None:
                cells.append(str(int(y[i])))
            w.writerow(cells)
