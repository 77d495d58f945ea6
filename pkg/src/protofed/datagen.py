"""Data generation, client partitioning, and the missing-modality protocol.

The synthetic generator draws a latent class vector plus Gaussian noise per
sample and pushes it through fixed random linear maps, one per modality.
Each map reads a contiguous window of the latent space, so modalities carry
correlated but complementary information: one modality alone cannot see every
discriminative direction, which is what makes modality dropout hurt.

Client shards only ever cover the training split; validation and test stay
whole and fully-modal.  Missing modalities and zero-fill flags are assigned
per client and applied at batch-assembly time by zeroing inputs.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .errors import ConfigError, DataError, ParseError, ShapeError


@dataclass
class MultimodalDataset:
    features: list[np.ndarray]          # per modality, (N, dim) float64
    labels: np.ndarray                  # (N,) int64
    modality_names: list[str]
    n_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_modalities(self) -> int:
        return len(self.features)

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    def feature_dims(self) -> list[int]:
        return [int(f.shape[1]) for f in self.features]


@dataclass
class ClientShard:
    """One client's slice of the training split.

    zero_fill maps a present modality to a boolean mask aligned with
    `indices`: flagged samples have that modality's input zeroed.
    """
    client_id: int
    indices: np.ndarray
    present: tuple
    zero_fill: dict[int, np.ndarray] = field(default_factory=dict)

    def n_samples(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class MultimodalBatch:
    features: list[np.ndarray]
    present: tuple
    labels: np.ndarray


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def _view_windows(latent_dim: int, n_modalities: int, view_size: int) -> list[slice]:
    if n_modalities == 1:
        return [slice(0, latent_dim)]
    span = latent_dim - view_size
    starts = [round(m * span / (n_modalities - 1)) for m in range(n_modalities)]
    return [slice(s, s + view_size) for s in starts]


def synthesize(n_modalities: int, n_classes: int, n_samples: int,
               rng: np.random.Generator, latent_dim: int = 16,
               class_sep: float = 1.0, noise_sigma: float = 1.0,
               feat_dim: int | list[int] = 20, view_size: int | None = None,
               class_means: np.ndarray | None = None) -> MultimodalDataset:
    """Latent-factor multimodal classification data.

    Per sample: latent = class mean + sigma * N(0, I); modality m observes a
    fixed random linear map of its latent window.  Windows overlap but do not
    coincide (view_size defaults to ~5/8 of the latent), so modalities share
    mutual information without being mutually redundant.
    """
    if n_modalities < 1 or n_classes < 2 or n_samples < n_classes:
        raise ConfigError(f"bad synthetic sizes: M={n_modalities}, K={n_classes}, N={n_samples}")
    if noise_sigma < 0 or class_sep <= 0:
        raise ConfigError("noise_sigma must be >= 0 and class_sep > 0")
    dims = [feat_dim] * n_modalities if isinstance(feat_dim, int) else list(feat_dim)
    if len(dims) != n_modalities:
        raise ConfigError(f"feat_dim list has {len(dims)} entries for {n_modalities} modalities")
    if view_size is None:
        view_size = latent_dim if n_modalities == 1 else max(2, math.ceil(latent_dim * 5 / 8))
    if not 1 <= view_size <= latent_dim:
        raise ConfigError(f"view_size {view_size} outside [1, {latent_dim}]")

    if class_means is None:
        class_means = rng.normal(size=(n_classes, latent_dim)) * class_sep
    else:
        class_means = np.asarray(class_means, dtype=np.float64)
        if class_means.shape != (n_classes, latent_dim):
            raise ShapeError(f"class_means shape {class_means.shape} != ({n_classes}, {latent_dim})")

    labels = rng.integers(0, n_classes, size=n_samples)
    latent = class_means[labels] + noise_sigma * rng.normal(size=(n_samples, latent_dim))
    windows = _view_windows(latent_dim, n_modalities, view_size)
    features = []
    for m, dim in enumerate(dims):
        a = rng.normal(size=(view_size, dim)) / np.sqrt(view_size)
        features.append(latent[:, windows[m]] @ a)

    train_idx, val_idx, test_idx = _split_indices(n_samples, rng)
    return MultimodalDataset(
        features=features, labels=labels.astype(np.int64),
        modality_names=[f"m{m}" for m in range(n_modalities)],
        n_classes=n_classes, train_idx=train_idx, val_idx=val_idx, test_idx=test_idx)


def _split_indices(n: int, rng: np.random.Generator):
    """70/30 train/test, then 20% of train held out for validation."""
    perm = rng.permutation(n)
    n_test = round(0.3 * n)
    test = perm[:n_test]
    rest = perm[n_test:]
    n_val = round(0.2 * rest.shape[0])
    val = rest[:n_val]
    train = rest[n_val:]
    return np.sort(train), np.sort(val), np.sort(test)


# ---------------------------------------------------------------------------
# partitioning and missingness
# ---------------------------------------------------------------------------

def dirichlet_partition(labels: np.ndarray, indices: np.ndarray, n_clients: int,
                        beta: float, rng: np.random.Generator,
                        min_samples: int = 8, max_retries: int = 1000) -> list[np.ndarray]:
    """Label-skewed partition: each class is split by Dirichlet(beta) weights.

    Redraws the whole assignment until every client holds at least
    min_samples rows; infeasible settings raise ConfigError.
    """
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    indices = np.asarray(indices)
    if n_clients < 1:
        raise ConfigError("need at least one client")
    if n_clients * min_samples > indices.shape[0]:
        raise ConfigError(f"{n_clients} clients x {min_samples} min samples exceeds "
                          f"{indices.shape[0]} available rows")
    class_rows = [indices[labels[indices] == k] for k in np.unique(labels[indices])]
    for _ in range(max_retries):
        parts = [[] for _ in range(n_clients)]
        for rows in class_rows:
            rows = rng.permutation(rows)
            p = rng.dirichlet(np.full(n_clients, beta))
            cuts = (np.cumsum(p) * rows.shape[0]).astype(int)[:-1]
            for cid, chunk in enumerate(np.split(rows, cuts)):
                parts[cid].append(chunk)
        shards = [np.sort(np.concatenate(chunks)) for chunks in parts]
        if min(s.shape[0] for s in shards) >= min_samples:
            return shards
    raise ConfigError(f"could not satisfy min_samples={min_samples} for {n_clients} clients "
                      f"at beta={beta} after {max_retries} draws")


def assign_missing_modalities(n_clients: int, n_modalities: int, q: float,
                              rng: np.random.Generator) -> list[tuple]:
    """Per client, each modality goes missing independently with probability q.

    A client that would lose everything keeps one uniformly chosen modality,
    so q=1 yields exactly one modality per client.
    """
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"q must lie in [0, 1], got {q}")
    out = []
    for _ in range(n_clients):
        present = rng.random(n_modalities) >= q
        if not present.any():
            present[rng.integers(n_modalities)] = True
        out.append(tuple(bool(b) for b in present))
    return out


def apply_zero_fill(n_rows: int, present: tuple, u: float,
                    rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Flag floor(u * n) rows per present modality for input zeroing."""
    if not 0.0 <= u < 1.0:
        raise ConfigError(f"u must lie in [0, 1), got {u}")
    masks = {}
    k = int(math.floor(u * n_rows))
    for m, flag in enumerate(present):
        if not flag:
            continue
        mask = np.zeros(n_rows, dtype=bool)
        if k:
            mask[rng.choice(n_rows, size=k, replace=False)] = True
        masks[m] = mask
    return masks


def make_client_shards(dataset: MultimodalDataset, n_clients: int, beta: float,
                       q: float, u: float, seed: int,
                       min_samples: int = 8) -> list[ClientShard]:
    """Partition the training split and assign the missingness pattern.

    All randomness comes from named streams of `seed`, so the sharding is a
    pure function of (dataset, settings, seed).
    """
    parts = dirichlet_partition(dataset.labels, dataset.train_idx, n_clients, beta,
                                rng_mod.stream(seed, rng_mod.DOMAIN_PARTITION),
                                min_samples=min_samples)
    presence = assign_missing_modalities(n_clients, dataset.n_modalities, q,
                                         rng_mod.stream(seed, rng_mod.DOMAIN_MISSING))
    shards = []
    for cid in range(n_clients):
        masks = apply_zero_fill(parts[cid].shape[0], presence[cid], u,
                                rng_mod.stream(seed, rng_mod.DOMAIN_ZERO_FILL, cid))
        shards.append(ClientShard(client_id=cid, indices=parts[cid],
                                  present=presence[cid], zero_fill=masks))
    return shards


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

def client_batches(dataset: MultimodalDataset, shard: ClientShard, batch_size: int,
                   rng: np.random.Generator | None = None) -> list[MultimodalBatch]:
    """Cut one epoch of a client's rows into batches.

    Absent modalities are fully zeroed; zero-fill-flagged rows of present
    modalities are zeroed too.  A generator shuffles the epoch; without one
    the order is the sorted row order.  The trailing short batch is kept.
    """
    n = shard.n_samples()
    pos = rng.permutation(n) if rng is not None else np.arange(n)
    batches = []
    for lo in range(0, n, batch_size):
        sel = pos[lo:lo + batch_size]
        rows = shard.indices[sel]
        feats = []
        for m in range(dataset.n_modalities):
            if not shard.present[m]:
                feats.append(np.zeros((sel.shape[0],) + dataset.features[m].shape[1:]))
                continue
            x = dataset.features[m][rows].copy()
            mask = shard.zero_fill.get(m)
            if mask is not None and mask.any():
                x[mask[sel]] = 0.0
            feats.append(x)
        batches.append(MultimodalBatch(features=feats, present=shard.present,
                                       labels=dataset.labels[rows]))
    return batches


def eval_batch(dataset: MultimodalDataset, idx: np.ndarray,
               mask_q: float | None = None,
               mask_rng: np.random.Generator | None = None) -> MultimodalBatch:
    """Full-modality evaluation batch over the given rows.

    With mask_q and a generator, each sample instead drops modalities
    independently at rate mask_q (keeping at least one), for measuring
    robustness to test-side missingness.  Off by default.
    """
    idx = np.asarray(idx)
    feats = [dataset.features[m][idx].copy() for m in range(dataset.n_modalities)]
    if mask_q is not None and mask_rng is not None and dataset.n_modalities > 1:
        keep = mask_rng.random((idx.shape[0], dataset.n_modalities)) >= mask_q
        lost = ~keep.any(axis=1)
        keep[lost, mask_rng.integers(dataset.n_modalities, size=int(lost.sum()))] = True
        for m in range(dataset.n_modalities):
            feats[m][~keep[:, m]] = 0.0
    return MultimodalBatch(features=feats, present=tuple([True] * dataset.n_modalities),
                           labels=dataset.labels[idx])


# ---------------------------------------------------------------------------
# CSV + manifest io
# ---------------------------------------------------------------------------

_SPLIT_TAGS = ("train", "val", "test")


def export_feature_files(dataset: MultimodalDataset, out_dir) -> str:
    """Write one CSV per modality plus labels, splits, and a manifest.

    Floats are written with repr, so a load round-trips bit-exactly.
    Returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for name, feats in zip(dataset.modality_names, dataset.features):
        fname = f"modality_{name}.csv"
        with open(os.path.join(out_dir, fname), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"feat_{j}" for j in range(feats.shape[1])])
            for row in feats:
                writer.writerow([repr(float(v)) for v in row])
        entries.append({"name": name, "file": fname, "dim": int(feats.shape[1])})

    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for y in dataset.labels:
            writer.writerow([int(y)])

    tags = np.empty(dataset.n_samples, dtype=object)
    tags[dataset.train_idx] = "train"
    tags[dataset.val_idx] = "val"
    tags[dataset.test_idx] = "test"
    with open(os.path.join(out_dir, "splits.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split"])
        for t in tags:
            writer.writerow([t])

    manifest = {"modalities": entries, "labels": "labels.csv", "splits": "splits.csv"}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def _read_csv_column(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or rows[0] != [header]:
        raise ParseError(f"{path}: expected single-column header '{header}', got {rows[0] if rows else 'empty file'}")
    return [r[0] for r in rows[1:]], path


def _read_feature_csv(path, dim):
    expect = [f"feat_{j}" for j in range(dim)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != expect:
            raise ParseError(f"{path}: header {header[:3]}... does not match feat_0..feat_{dim - 1}")
        out = []
        for r, row in enumerate(reader, start=2):
            if len(row) != dim:
                raise ParseError(f"{path}: row {r}: expected {dim} columns, got {len(row)}")
            vals = np.empty(dim)
            for c, cell in enumerate(row):
                try:
                    vals[c] = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {r}, column {c + 1}: "
                                     f"not a number: {cell!r}") from None
            out.append(vals)
    return np.array(out) if out else np.zeros((0, dim))


def load_feature_files(manifest_path) -> MultimodalDataset:
    """Load a dataset from a manifest and its CSV files (strict schema)."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid JSON: {exc}") from None

    allowed = {"modalities", "labels", "splits"}
    if not isinstance(manifest, dict) or set(manifest) != allowed:
        raise DataError(f"{manifest_path}: manifest keys must be exactly {sorted(allowed)}, "
                        f"got {sorted(manifest) if isinstance(manifest, dict) else type(manifest).__name__}")
    entry_keys = {"name", "file", "dim"}
    for e in manifest["modalities"]:
        if not isinstance(e, dict) or set(e) != entry_keys:
            raise DataError(f"{manifest_path}: each modality entry needs exactly "
                            f"{sorted(entry_keys)}, got {sorted(e)}")
    if not manifest["modalities"]:
        raise DataError(f"{manifest_path}: no modalities listed")

    features, names = [], []
    for e in manifest["modalities"]:
        features.append(_read_feature_csv(os.path.join(base, e["file"]), int(e["dim"])))
        names.append(str(e["name"]))

    raw_labels, labels_path = _read_csv_column(os.path.join(base, manifest["labels"]), "label")
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for r, cell in enumerate(raw_labels, start=2):
        try:
            labels[r - 2] = int(cell)
        except ValueError:
            raise ParseError(f"{labels_path}: row {r}, column 1: not an integer: {cell!r}") from None
    if labels.size and labels.min() < 0:
        raise DataError(f"{labels_path}: negative class labels")

    raw_splits, splits_path = _read_csv_column(os.path.join(base, manifest["splits"]), "split")
    for r, cell in enumerate(raw_splits, start=2):
        if cell not in _SPLIT_TAGS:
            raise ParseError(f"{splits_path}: row {r}: unknown split tag {cell!r}")
    split_arr = np.array(raw_splits)

    counts = {os.path.join(base, e["file"]): f.shape[0]
              for e, f in zip(manifest["modalities"], features)}
    counts[labels_path] = labels.shape[0]
    counts[splits_path] = split_arr.shape[0]
    if len(set(counts.values())) > 1:
        detail = ", ".join(f"{os.path.basename(p)}={n}" for p, n in sorted(counts.items()))
        raise DataError(f"row counts disagree across files: {detail}")

    return MultimodalDataset(
        features=features, labels=labels, modality_names=names,
        n_classes=int(labels.max()) + 1 if labels.size else 0,
        train_idx=np.flatnonzero(split_arr == "train"),
        val_idx=np.flatnonzero(split_arr == "val"),
        test_idx=np.flatnonzero(split_arr == "test"))
