"""Multi-view datasets: loading, synthesis, splitting, binarization, poisoning."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MultiViewDataset:
    """V feature matrices over the same m samples plus integer labels.

    ``unlabeled_views`` is an optional pool of feature rows without labels
    (one matrix per view, all with the same row count).
    """

    views: list
    labels: np.ndarray
    unlabeled_views: list | None = None
    name: str = "dataset"
    n_classes: int | None = None
    # held-out partitions may legitimately miss a class
    require_all_classes: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        views = [np.asarray(x, dtype=float) for x in self.views]
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DatasetError("labels must be a vector")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DatasetError("labels must be integers")
        labels = labels.astype(np.int64)
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "labels", labels)
        if len(views) < 2:
            raise DatasetError(f"need V >= 2 views, got {len(views)}")
        m = labels.shape[0]
        if m < 1:
            raise DatasetError("need at least one sample")
        for v, x in enumerate(views):
            if x.ndim != 2 or x.shape[1] < 1:
                raise DatasetError(f"view {v + 1} must be a 2-D matrix with >= 1 column")
            if x.shape[0] != m:
                raise DatasetError(
                    f"row count mismatch: view {v + 1} has {x.shape[0]} rows, labels have {m}")
        C = self.n_classes if self.n_classes is not None else int(labels.max()) + 1
        object.__setattr__(self, "n_classes", int(C))
        if labels.min() < 0 or labels.max() >= C:
            raise DatasetError(f"labels must lie in 0..{C - 1}")
        missing = np.setdiff1d(np.arange(C), labels)
        if missing.size and self.require_all_classes:
            raise DatasetError(f"classes {missing.tolist()} never occur in labels")
        if self.unlabeled_views is not None:
            unl = [np.asarray(x, dtype=float) for x in self.unlabeled_views]
            if len(unl) != len(views):
                raise DatasetError("unlabeled pool must have one matrix per view")
            n_u = unl[0].shape[0]
            for v, (x, xl) in enumerate(zip(unl, views)):
                if x.ndim != 2 or x.shape[0] != n_u:
                    raise DatasetError(f"row count mismatch in unlabeled view {v + 1}")
                if x.shape[1] != xl.shape[1]:
                    raise DatasetError(f"column count mismatch in unlabeled view {v + 1}")
            object.__setattr__(self, "unlabeled_views", unl)

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def m(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_unlabeled(self) -> int:
        return 0 if self.unlabeled_views is None else int(self.unlabeled_views[0].shape[0])

    def take(self, rows, name=None, keep_pool=True, require_all_classes=True) -> "MultiViewDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return MultiViewDataset(
            views=[x[rows] for x in self.views],
            labels=self.labels[rows],
            unlabeled_views=self.unlabeled_views if keep_pool else None,
            name=name or self.name,
            n_classes=self.n_classes,
            require_all_classes=require_all_classes,
        )


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    test_fraction: float = 0.2
    labeled_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must be in (0, 1], got {self.labeled_fraction}")


class Split(NamedTuple):
    """Result of :func:`split`.

    ``train_labeled.unlabeled_views`` holds the rows listed in
    ``unlabeled_rows`` (features only) followed by the source pool, if any.
    Hidden labels of those rows remain reachable only through the source
    dataset, for ground-truth checks.
    """

    train_labeled: MultiViewDataset
    unlabeled_rows: np.ndarray
    test: MultiViewDataset
    labeled_rows: np.ndarray
    test_rows: np.ndarray


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def _read_matrix(path: Path) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    rows = []
    width = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric value") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetError(
                    f"{path}:{lineno}: ragged row ({len(vals)} columns, expected {width})")
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: empty file")
    return np.array(rows, dtype=float)


def _read_labels(path: Path, n_classes: int) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    labels = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                y = int(line)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: label {line!r} is not an integer") from None
            if not 0 <= y < n_classes:
                raise DatasetError(f"{path}:{lineno}: label {y} outside 0..{n_classes - 1}")
            labels.append(y)
    return np.array(labels, dtype=np.int64)


def load_dataset(directory) -> MultiViewDataset:
    """Read a dataset directory (meta.json, view_k.csv, labels.csv, unlabeled/)."""
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text())
    V, C = int(meta["views"]), int(meta["classes"])
    if V < 2:
        raise DatasetError(f"{meta_path}: need V >= 2 views, got {V}")
    views = [_read_matrix(d / f"view_{k}.csv") for k in range(1, V + 1)]
    labels = _read_labels(d / "labels.csv", C)
    for k, x in enumerate(views, start=1):
        if x.shape[0] != labels.shape[0]:
            raise DatasetError(
                f"{d / f'view_{k}.csv'}: row count mismatch ({x.shape[0]} rows, "
                f"labels.csv has {labels.shape[0]})")
    unlabeled = None
    udir = d / "unlabeled"
    if udir.is_dir():
        unlabeled = [_read_matrix(udir / f"view_{k}.csv") for k in range(1, V + 1)]
        for k, x in enumerate(unlabeled, start=1):
            if x.shape[0] != unlabeled[0].shape[0]:
                raise DatasetError(f"{udir / f'view_{k}.csv'}: row count mismatch")
    return MultiViewDataset(views, labels, unlabeled, name=meta.get("name", d.name), n_classes=C)


def save_dataset(ds: MultiViewDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"views": ds.n_views, "classes": ds.n_classes, "name": ds.name}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for k, x in enumerate(ds.views, start=1):
        np.savetxt(d / f"view_{k}.csv", x, delimiter=",", fmt="%.17g")
    np.savetxt(d / "labels.csv", ds.labels, fmt="%d")
    if ds.unlabeled_views is not None:
        (d / "unlabeled").mkdir(exist_ok=True)
        for k, x in enumerate(ds.unlabeled_views, start=1):
            np.savetxt(d / "unlabeled" / f"view_{k}.csv", x, delimiter=",", fmt="%.17g")
    return d


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------

def make_binary_task(ds: MultiViewDataset, label_a: int, label_b: int) -> MultiViewDataset:
    """One-versus-one task: keep classes a and b, relabelled to 0 and 1."""
    if label_a == label_b:
        raise DatasetError("label_a and label_b must differ")
    present = set(np.unique(ds.labels).tolist())
    for lab in (label_a, label_b):
        if lab not in present:
            raise DatasetError(f"label {lab} is absent from the dataset")
    rows = np.flatnonzero((ds.labels == label_a) | (ds.labels == label_b))
    labels = (ds.labels[rows] == label_b).astype(np.int64)
    return MultiViewDataset(
        views=[x[rows] for x in ds.views],
        labels=labels,
        unlabeled_views=ds.unlabeled_views,
        name=f"{ds.name}[{label_a}v{label_b}]",
        n_classes=2,
    )


def split(ds: MultiViewDataset, spec: SplitSpec, max_attempts: int = 100) -> Split:
    """Shuffle into test / labeled-train / unlabeled-train blocks.

    Resamples with ``(seed, attempt)`` until the labeled block covers every
    class.
    """
    m = ds.m
    n_test = math.ceil(spec.test_fraction * m)
    n_train = m - n_test
    n_lab = math.ceil(spec.labeled_fraction * n_train)
    if n_lab < 1:
        raise DatasetError("split leaves no labeled training rows")
    for attempt in range(max_attempts):
        rng = np.random.default_rng([spec.seed, attempt])
        perm = rng.permutation(m)
        test_rows = np.sort(perm[:n_test])
        lab_rows = np.sort(perm[n_test:n_test + n_lab])
        unl_rows = np.sort(perm[n_test + n_lab:])
        if np.unique(ds.labels[lab_rows]).size == ds.n_classes:
            break
    else:
        raise DatasetError(
            f"could not draw a labeled split covering all {ds.n_classes} classes "
            f"in {max_attempts} attempts")
    pool = [x[unl_rows] for x in ds.views]
    if ds.unlabeled_views is not None:
        pool = [np.vstack([p, u]) for p, u in zip(pool, ds.unlabeled_views)]
    has_pool = pool[0].shape[0] > 0
    train = MultiViewDataset(
        views=[x[lab_rows] for x in ds.views],
        labels=ds.labels[lab_rows],
        unlabeled_views=pool if has_pool else None,
        name=f"{ds.name}/train",
        n_classes=ds.n_classes,
    )
    test = ds.take(test_rows, name=f"{ds.name}/test", keep_pool=False, require_all_classes=False)
    return Split(train, unl_rows, test, lab_rows, test_rows)


def _class_means(rng, V, C, d):
    return [rng.normal(0.0, 1.0, size=(C, d)) for _ in range(V)]


def synth_dataset(V: int, m: int, C: int, d_per_view: int, view_noise, seed: int = 0,
                  n_unlabeled: int = 0) -> MultiViewDataset:
    """Class-conditional Gaussian clusters, one noise scale per view.

    Class means are drawn first from the seed, so datasets that share a seed
    and shape come from the same distribution whatever their size.
    """
    view_noise = np.broadcast_to(np.asarray(view_noise, dtype=float), (V,))
    if V < 2 or C < 2 or m < C:
        raise DatasetError(f"need V >= 2, C >= 2, m >= C (got V={V}, C={C}, m={m})")
    if np.any(view_noise < 0):
        raise DatasetError("view noise scales must be >= 0")
    rng = np.random.default_rng(seed)
    means = _class_means(rng, V, C, d_per_view)
    sample_rng = np.random.default_rng([seed, 1])

    def draw(labels):
        return [means[v][labels] + view_noise[v] * sample_rng.normal(size=(labels.size, d_per_view))
                for v in range(V)]

    labels = np.concatenate([np.arange(C), sample_rng.integers(0, C, size=m - C)])
    labels = sample_rng.permutation(labels)
    views = draw(labels)
    unlabeled = None
    if n_unlabeled > 0:
        unlabeled = draw(sample_rng.integers(0, C, size=n_unlabeled))
    noise_txt = ",".join(f"{s:g}" for s in view_noise)
    return MultiViewDataset(views, labels, unlabeled,
                            name=f"synth(V={V},m={m},C={C},d={d_per_view},noise={noise_txt},seed={seed})",
                            n_classes=C)


def poison_views(ds: MultiViewDataset, target_views, sigma: float, seed: int = 0) -> MultiViewDataset:
    """Add Gaussian noise (sigma times each column's std) to the target views.

    ``target_views`` are 0-based view indices. Untargeted views are passed
    through as the very same arrays.
    """
    targets = sorted(set(int(v) for v in target_views))
    if not targets:
        raise DatasetError("poison_views needs at least one target view")
    if not sigma > 0:
        raise DatasetError(f"sigma must be > 0, got {sigma}")
    for v in targets:
        if not 0 <= v < ds.n_views:
            raise DatasetError(f"view index {v} out of range 0..{ds.n_views - 1}")
    rng = np.random.default_rng(seed)
    views = list(ds.views)
    unl = list(ds.unlabeled_views) if ds.unlabeled_views is not None else None
    for v in targets:
        stacked = views[v] if unl is None else np.vstack([views[v], unl[v]])
        scale = sigma * stacked.std(axis=0)
        views[v] = views[v] + rng.normal(size=views[v].shape) * scale
        if unl is not None:
            unl[v] = unl[v] + rng.normal(size=unl[v].shape) * scale
    return MultiViewDataset(views, ds.labels, unl, name=f"{ds.name}+poison{targets}",
                            n_classes=ds.n_classes)


def concat_views(views) -> np.ndarray:
    """Concatenated-view baseline: join all views' columns."""
    return np.hstack(views)
