"""Datasets, client shards and IID / Dirichlet splitting."""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, features)
    y: np.ndarray  # (n,) integer labels
    num_classes: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ValueError(f"inconsistent dataset shapes X{self.X.shape} y{self.y.shape}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.num_classes)

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    def to_dict(self) -> dict:
        return {"X": self.X.tolist(), "y": self.y.tolist(), "num_classes": self.num_classes}

    @classmethod
    def from_dict(cls, doc: dict) -> Dataset:
        X = np.asarray(doc["X"], dtype=float).reshape(len(doc["y"]), -1)
        return cls(X, np.asarray(doc["y"], dtype=np.int64), int(doc["num_classes"]))


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    X: np.ndarray
    y: np.ndarray
    indices: np.ndarray  # positions in the source dataset

    @property
    def num_samples(self) -> int:
        return len(self.y)

    def label_histogram(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.y, minlength=num_classes)


def _make_shard(dataset: Dataset, client_id: int, idx: np.ndarray) -> ClientShard:
    idx = np.asarray(idx, dtype=np.intp)
    return ClientShard(client_id, dataset.X[idx], dataset.y[idx], idx)


def generate_synthetic(kind: str, d: int, classes: int, samples: int, noise: float, seed: int) -> Dataset:
    """Seeded synthetic data.

    ``quadratic``: rows are targets scattered around ``classes`` centres in
    [-1, 1]^d; the matching task minimises the mean of 0.5 * ||x - row||^2.
    ``blobs``: Gaussian class clusters, min-max scaled into [0, 1]^d.
    Labels are balanced across classes before shuffling.
    """
    if min(d, classes, samples) <= 0:
        raise ValueError("d, classes and samples must be positive")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(samples) % classes)
    if kind == "quadratic":
        centres = rng.uniform(-1.0, 1.0, size=(classes, d))
        X = centres[y] + noise * rng.standard_normal((samples, d))
    elif kind == "blobs":
        centres = rng.uniform(0.0, 1.0, size=(classes, d))
        X = centres[y] + noise * rng.standard_normal((samples, d))
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        X = (X - lo) / span
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return Dataset(X, y.astype(np.int64), classes)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    n_test = int(round(len(dataset) * test_fraction))
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def split_iid(dataset: Dataset, n_clients: int, samples_per_client: int, seed: int) -> list[ClientShard]:
    need = n_clients * samples_per_client
    if n_clients < 1 or samples_per_client < 1:
        raise ValueError("n_clients and samples_per_client must be positive")
    if need > len(dataset):
        raise ValueError(f"insufficient data: {n_clients} x {samples_per_client} = {need} > {len(dataset)} samples")
    perm = np.random.default_rng(seed).permutation(len(dataset))[:need]
    return [_make_shard(dataset, i + 1, np.sort(chunk)) for i, chunk in enumerate(perm.reshape(n_clients, -1))]


def _round_counts(p: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``p * total`` to integers summing to ``total``."""
    raw = p * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def split_dirichlet(
    dataset: Dataset, n_clients: int, alpha: float, samples_per_client: int, seed: int
) -> list[ClientShard]:
    """Label-skewed shards: each client draws its class mix from Dirichlet(alpha).

    Class counts per client are the rounded Dirichlet proportions. When a
    class runs out, the shortfall is redistributed over classes that still
    have samples, in proportion to the client's remaining mix (or to what is
    left in the pool if the client's mix puts no mass there).
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    need = n_clients * samples_per_client
    if need > len(dataset):
        raise ValueError(f"insufficient data: {n_clients} x {samples_per_client} = {need} > {len(dataset)} samples")
    rng = np.random.default_rng(seed)
    C = dataset.num_classes
    pools = [list(rng.permutation(np.flatnonzero(dataset.y == c))) for c in range(C)]
    shards = []
    for i in range(n_clients):
        p = rng.dirichlet(np.full(C, float(alpha)))
        want = _round_counts(p, samples_per_client)
        taken: list[int] = []
        while True:
            avail = np.array([len(pl) for pl in pools])
            got = np.minimum(want, avail)
            for c in range(C):
                taken.extend(pools[c][: got[c]])
                del pools[c][: got[c]]
            short = int((want - got).sum())
            if short == 0:
                break
            avail = np.array([len(pl) for pl in pools])
            weights = np.where(avail > 0, p, 0.0)
            if weights.sum() <= 0:
                weights = avail.astype(float)
            want = np.minimum(_round_counts(weights / weights.sum(), short), avail)
            # Rounding may under-fill when capped; top up from the largest pools.
            while want.sum() < short:
                c = int(np.argmax(avail - want))
                want[c] += 1
        shards.append(_make_shard(dataset, i + 1, np.sort(np.array(taken, dtype=np.intp))))
    return shards


def pooled(shards: list[ClientShard], num_classes: int) -> Dataset:
    return Dataset(np.concatenate([s.X for s in shards]), np.concatenate([s.y for s in shards]), num_classes)


def write_label_histograms(shards: list[ClientShard], num_classes: int, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client", *[f"class_{c}" for c in range(num_classes)]])
        for s in shards:
            w.writerow([s.client_id, *s.label_histogram(num_classes).tolist()])


def shards_to_json(shards: list[ClientShard]) -> str:
    return json.dumps(
        [{"client": s.client_id, "indices": s.indices.tolist(), "y": s.y.tolist(), "X": s.X.tolist()} for s in shards]
    )


def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Parse an IDX image/label file pair (optionally gzipped) into [0, 1] features."""
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    if len(img) < 16:
        raise IdxFormatError(f"{images_path}: image file too short for IDX header ({len(img)} bytes)")
    if len(lab) < 8:
        raise IdxFormatError(f"{labels_path}: label file too short for IDX header ({len(lab)} bytes)")
    magic, n_img, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    magic, n_lab = struct.unpack(">II", lab[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if n_img != n_lab:
        raise IdxFormatError(f"count mismatch: {n_img} images vs {n_lab} labels")
    size = rows * cols
    if len(img) - 16 < n_img * size:
        raise IdxFormatError(f"{images_path}: truncated, expected {n_img * size} pixel bytes, got {len(img) - 16}")
    if len(lab) - 8 < n_lab:
        raise IdxFormatError(f"{labels_path}: truncated, expected {n_lab} labels, got {len(lab) - 8}")
    X = np.frombuffer(img, dtype=np.uint8, count=n_img * size, offset=16).reshape(n_img, size) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    if n_lab and y.max() > 9:
        raise IdxFormatError(f"{labels_path}: label {int(y.max())} outside 0..9")
    return Dataset(X, y, 10)
