"""Datasets: Gaussian-cluster generator, IDX reader/writer, non-IID partitions."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lightpfl.errors import ConfigError, InputError, ParseError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InputError("features must be (n, dim) with one label per row")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx])


def synth_dataset(clusters: int, dims: int, size: int, noise: float, seed: int,
                  separation: float = 3.0) -> Dataset:
    """Gaussian clusters: class c is centred at ``separation * e_c``, then rotated.

    Labels are balanced within one; dims must be >= clusters so the centres
    are linearly independent.
    """
    if clusters < 2 or dims < clusters or size < clusters:
        raise ConfigError("need clusters >= 2, dims >= clusters and size >= clusters")
    if noise < 0:
        raise ConfigError("noise must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5D]))
    labels = np.arange(size) % clusters
    rng.shuffle(labels)
    centres = np.zeros((clusters, dims))
    centres[np.arange(clusters), np.arange(clusters)] = separation
    X = centres[labels] + noise * rng.standard_normal((size, dims))
    Q, _ = np.linalg.qr(rng.standard_normal((dims, dims)))
    return Dataset(X @ Q, labels)


def _open(path: Path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ParseError(f"{path}: too short for an IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise ParseError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise ParseError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise ParseError(f"{path}: truncated payload ({len(raw) - head} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(image_file, label_file) -> Dataset:
    """Parse IDX images (ubyte, 3-d) and labels; pixels scaled to [0, 1]."""
    images = _read_idx(image_file, IDX_IMAGES)
    labels = _read_idx(label_file, IDX_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise ParseError("image and label counts differ")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64))


def save_idx(images: np.ndarray, labels: np.ndarray, image_file, label_file) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(image_file, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES, *images.shape))
        fh.write(images.tobytes())
    with open(label_file, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS, labels.shape[0]))
        fh.write(labels.tobytes())


def partition_class(ds: Dataset, m: int, N: int, seed: int) -> list[np.ndarray]:
    """Each client owns exactly ``m`` classes; class samples split evenly among owners.

    Class assignment deals a shuffled class sequence round-robin, so every
    class has an owner whenever N * m >= number of classes.
    """
    C = ds.n_classes
    if m < 1 or m > C:
        raise ConfigError(f"classes per client must lie in [1, {C}]")
    if N < 1:
        raise ConfigError("need at least one client")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A5]))
    owners: list[list[int]] = [[] for _ in range(C)]
    deck: list[int] = []
    for n in range(N):
        mine: list[int] = []
        while len(mine) < m:
            if not deck:
                deck = list(rng.permutation(C))
            cand = [c for c in deck if c not in mine]
            if not cand:
                deck = list(rng.permutation(C))
                continue
            c = int(cand[0])
            deck.remove(c)
            mine.append(c)
        for c in mine:
            owners[c].append(n)
    parts: list[list[np.ndarray]] = [[] for _ in range(N)]
    orphans = []
    for c in range(C):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        if not owners[c]:
            orphans.append(c)
            continue
        for n, chunk in zip(owners[c], np.array_split(idx, len(owners[c]))):
            parts[n].append(chunk)
    if orphans and any(np.any(ds.labels == c) for c in orphans):
        raise ConfigError(f"N * m too small: classes {orphans} have no owner")
    return [np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in parts]


def partition_dirichlet(ds: Dataset, alpha: float, N: int, seed: int,
                        max_retries: int = 100) -> list[np.ndarray]:
    """Per-class client shares drawn from Dirichlet(alpha); redraw if a client is empty."""
    if alpha <= 0 or N < 1:
        raise ConfigError("alpha must be positive and N >= 1")
    C = ds.n_classes
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1, attempt]))
        parts: list[list[np.ndarray]] = [[] for _ in range(N)]
        for c in range(C):
            idx = rng.permutation(np.flatnonzero(ds.labels == c))
            share = rng.dirichlet(np.full(N, alpha))
            cuts = np.round(np.cumsum(share)[:-1] * idx.size).astype(int)
            for n, chunk in enumerate(np.split(idx, cuts)):
                parts[n].append(chunk)
        out = [np.sort(np.concatenate(p)) for p in parts]
        if all(o.size > 0 for o in out):
            return out
    raise ConfigError(f"dirichlet partition left a client empty after {max_retries} draws")


def holdout_split(idx: np.ndarray, labels: np.ndarray, frac: float, seed: int, client: int):
    """Per-class stratified split of one client's indices into (train, test)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E57, client]))
    train, test = [], []
    for c in np.unique(labels[idx]):
        members = rng.permutation(idx[labels[idx] == c])
        n_test = int(np.floor(frac * members.size))
        if members.size > 1:
            n_test = max(n_test, 1) if frac > 0 else 0
            n_test = min(n_test, members.size - 1)
        else:
            n_test = 0
        test.append(members[:n_test])
        train.append(members[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def class_histogram(ds: Dataset, parts) -> np.ndarray:
    C = ds.n_classes
    return np.array([np.bincount(ds.labels[p], minlength=C) for p in parts])
