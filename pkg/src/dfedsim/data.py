"""Synthetic labeled pools and non-IID client partitions.

A pool is a Gaussian-blob classification task: class means sit uniformly on
a sphere, samples add isotropic noise, and features are z-scored globally so
learning rates transfer across dimensions. Two label-skew partitioners split
the pool across clients, and a stratified train/test split produces the
per-client shards.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .model import Batch


@dataclass(frozen=True)
class GlobalPool:
    """Global sample pool, deterministic in its seed.

    class_means are expressed in the standardized feature space, so with zero
    noise every sample coincides with its class mean.
    """

    features: np.ndarray      # (n, d), z-scored per column
    labels: np.ndarray        # (n,), ints in [0, C)
    class_means: np.ndarray   # (C, d)
    n_classes: int
    seed: int

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PartitionSpec:
    """Which partitioner to run and its knobs; per-client splits come later."""

    kind: str                               # "dirichlet" | "pathological"
    alpha: float | None = None              # dirichlet concentration
    classes_per_client: int | None = None   # pathological class budget
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in ("dirichlet", "pathological"):
            raise ConfigurationError(f"unknown partition kind {self.kind!r}")
        if self.kind == "dirichlet" and (self.alpha is None or self.alpha <= 0):
            raise ConfigurationError("dirichlet partition needs alpha > 0")
        if self.kind == "pathological" and (
            self.classes_per_client is None or self.classes_per_client < 1
        ):
            raise ConfigurationError("pathological partition needs classes_per_client >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError("test_fraction must be in (0, 1)")


@dataclass(frozen=True)
class ClientShards:
    """Per-client train/test batches plus their global pool indices."""

    train: tuple[Batch, ...]
    test: tuple[Batch | None, ...]
    train_indices: tuple[np.ndarray, ...]
    test_indices: tuple[np.ndarray, ...]

    @property
    def m(self) -> int:
        return len(self.train)


def generate_pool(
    n_classes: int,
    dim: int,
    per_class: int,
    radius: float,
    noise: float,
    seed: int,
) -> GlobalPool:
    """Sample per_class points around each of n_classes sphere-surface means."""
    if min(n_classes, dim, per_class) < 1 or radius <= 0 or noise < 0:
        raise ConfigurationError("pool parameters must be positive (noise may be 0)")
    rng = np.random.default_rng(seed)
    raw_means = rng.normal(size=(n_classes, dim))
    raw_means *= radius / np.linalg.norm(raw_means, axis=1, keepdims=True)
    features = np.repeat(raw_means, per_class, axis=0)
    features = features + noise * rng.normal(size=features.shape)
    labels = np.repeat(np.arange(n_classes), per_class)

    # Global z-scoring; the same affine map is applied to the stored means.
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0] = 1.0
    features = (features - mean) / std
    class_means = (raw_means - mean) / std
    return GlobalPool(
        features=features,
        labels=labels,
        class_means=class_means,
        n_classes=n_classes,
        seed=seed,
    )


def dirichlet_partition(pool: GlobalPool, m: int, alpha: float, seed: int) -> list[np.ndarray]:
    """Label-skew split: each class is spread over clients by Dir(alpha) draws.

    Clients that end up empty are topped up by moving one random sample from
    the currently largest client, so every client can train.
    """
    if alpha <= 0:
        raise ConfigurationError("alpha must be > 0")
    if m < 1 or m > pool.n:
        raise ConfigurationError(f"cannot split {pool.n} samples over {m} clients")
    rng = np.random.default_rng(seed)
    assignment: list[list[int]] = [[] for _ in range(m)]
    for k in range(pool.n_classes):
        class_idx = np.flatnonzero(pool.labels == k)
        proportions = rng.dirichlet(np.full(m, alpha))
        owners = rng.choice(m, size=class_idx.size, p=proportions)
        for idx, owner in zip(class_idx, owners):
            assignment[owner].append(int(idx))

    sizes = np.array([len(a) for a in assignment])
    while (sizes == 0).any():
        receiver = int(np.argmin(sizes))
        donor = int(np.argmax(sizes))
        take = int(rng.integers(0, sizes[donor]))
        assignment[receiver].append(assignment[donor].pop(take))
        sizes = np.array([len(a) for a in assignment])
    return [np.array(sorted(a), dtype=np.int64) for a in assignment]


def pathological_partition(pool: GlobalPool, m: int, c: int, seed: int) -> list[np.ndarray]:
    """Each client owns exactly c distinct classes.

    Class slots are dealt round-robin from a shuffled class order, so every
    class is used ceil(m*c/C) or floor(m*c/C) times; each class's samples are
    then split near-equally among its owners.
    """
    n_classes = pool.n_classes
    if c > n_classes:
        raise ConfigurationError(f"classes_per_client {c} exceeds {n_classes} classes")
    if m * c < n_classes:
        raise ConfigurationError(
            f"{m} clients x {c} classes cannot cover all {n_classes} classes"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_classes)
    owners_of_class: dict[int, list[int]] = {k: [] for k in range(n_classes)}
    for client in range(m):
        for slot in range(c):
            k = int(order[(client * c + slot) % n_classes])
            owners_of_class[k].append(client)

    assignment: list[list[int]] = [[] for _ in range(m)]
    for k in range(n_classes):
        owners = owners_of_class[k]
        class_idx = rng.permutation(np.flatnonzero(pool.labels == k))
        for owner, chunk in zip(owners, np.array_split(class_idx, len(owners))):
            if chunk.size == 0:
                raise ConfigurationError(
                    f"class {k} has too few samples for {len(owners)} owning clients"
                )
            assignment[owner].extend(int(i) for i in chunk)
    return [np.array(sorted(a), dtype=np.int64) for a in assignment]


def split_shards(
    pool: GlobalPool,
    assignment: list[np.ndarray],
    test_fraction: float,
    seed: int,
) -> ClientShards:
    """Stratified per-client train/test split.

    Per class, floor(n * test_fraction) samples go to test; a lone sample of
    a class always stays in train. A client whose test side came out empty
    borrows one sample from its most plentiful train class when possible.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_parts: list[Batch] = []
    test_parts: list[Batch | None] = []
    train_idx_all: list[np.ndarray] = []
    test_idx_all: list[np.ndarray] = []
    for client, owned in enumerate(assignment):
        owned = np.asarray(owned, dtype=np.int64)
        if owned.size == 0:
            raise ConfigurationError(f"client {client} has no samples to split")
        train_ids: list[int] = []
        test_ids: list[int] = []
        for k in np.unique(pool.labels[owned]):
            members = rng.permutation(owned[pool.labels[owned] == k])
            n_test = int(np.floor(members.size * test_fraction))
            test_ids.extend(int(i) for i in members[:n_test])
            train_ids.extend(int(i) for i in members[n_test:])
        if not test_ids:
            counts = {k: sum(1 for i in train_ids if pool.labels[i] == k)
                      for k in set(pool.labels[i] for i in train_ids)}
            best = max(counts, key=lambda k: (counts[k], -k))
            if counts[best] >= 2:
                moved = next(i for i in train_ids if pool.labels[i] == best)
                train_ids.remove(moved)
                test_ids.append(moved)
        train_ids = sorted(train_ids)
        test_ids = sorted(test_ids)
        train_idx_all.append(np.array(train_ids, dtype=np.int64))
        test_idx_all.append(np.array(test_ids, dtype=np.int64))
        train_parts.append(Batch(pool.features[train_ids], pool.labels[train_ids]))
        test_parts.append(
            Batch(pool.features[test_ids], pool.labels[test_ids]) if test_ids else None
        )
    return ClientShards(
        train=tuple(train_parts),
        test=tuple(test_parts),
        train_indices=tuple(train_idx_all),
        test_indices=tuple(test_idx_all),
    )


def label_histogram(pool: GlobalPool, assignment: list[np.ndarray]) -> np.ndarray:
    """(m, C) matrix of per-client class counts for the given assignment."""
    hist = np.zeros((len(assignment), pool.n_classes), dtype=np.int64)
    for client, owned in enumerate(assignment):
        for k, count in zip(*np.unique(pool.labels[owned], return_counts=True)):
            hist[client, int(k)] = int(count)
    return hist


def label_entropy(hist_row: np.ndarray) -> float:
    """Shannon entropy (nats) of one client's label distribution."""
    total = hist_row.sum()
    if total == 0:
        return 0.0
    p = hist_row[hist_row > 0] / total
    return float(-(p * np.log(p)).sum())


def export_shards_csv(pool: GlobalPool, shards: ClientShards, directory: str) -> None:
    """Write client_{i}_{train,test}.csv files with columns index,label,f0..fd-1."""
    os.makedirs(directory, exist_ok=True)
    header = ["index", "label"] + [f"f{j}" for j in range(pool.dim)]
    for i in range(shards.m):
        for tag, indices in (("train", shards.train_indices[i]), ("test", shards.test_indices[i])):
            path = os.path.join(directory, f"client_{i}_{tag}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for idx in indices:
                    row = [int(idx), int(pool.labels[idx])]
                    row += [repr(float(x)) for x in pool.features[idx]]
                    writer.writerow(row)


def import_shards_csv(directory: str, m: int) -> ClientShards:
    """Read shards previously written by export_shards_csv."""
    train_parts, test_parts = [], []
    train_idx_all, test_idx_all = [], []
    for i in range(m):
        per_tag = {}
        for tag in ("train", "test"):
            path = os.path.join(directory, f"client_{i}_{tag}.csv")
            indices, labels, feats = [], [], []
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                next(reader)
                for row in reader:
                    indices.append(int(row[0]))
                    labels.append(int(row[1]))
                    feats.append([float(x) for x in row[2:]])
            per_tag[tag] = (
                np.array(indices, dtype=np.int64),
                np.array(labels, dtype=np.int64),
                np.array(feats, dtype=np.float64),
            )
        tr_idx, tr_lab, tr_feat = per_tag["train"]
        te_idx, te_lab, te_feat = per_tag["test"]
        train_idx_all.append(tr_idx)
        test_idx_all.append(te_idx)
        train_parts.append(Batch(tr_feat, tr_lab))
        test_parts.append(Batch(te_feat, te_lab) if te_idx.size else None)
    return ClientShards(
        train=tuple(train_parts),
        test=tuple(test_parts),
        train_indices=tuple(train_idx_all),
        test_indices=tuple(test_idx_all),
    )
