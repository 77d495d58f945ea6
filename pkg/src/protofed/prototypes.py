"""Class prototypes: per-client means, server-side aggregation, JSON io.

Local prototypes are per-class means of the shared representation r over a
client's full local training split, computed after its local update in eval
mode.  The server averages them unweighted over the clients that actually
report each class; classes nobody reports stay absent.  Unimodal prototype
sets apply the same machinery per modality to the projected tokens z'_m.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError


@dataclass
class LocalPrototypeSet:
    """One client's per-class representation means."""
    client_id: int
    vectors: dict[int, np.ndarray]
    counts: dict[int, int]

    def coverage(self) -> set[int]:
        return set(self.vectors)


@dataclass
class CompletePrototypes:
    """Server-side prototypes: class -> mean over reporting clients."""
    vectors: dict[int, np.ndarray] = field(default_factory=dict)
    contributors: dict[int, int] = field(default_factory=dict)
    round_index: int = -1

    def __bool__(self):
        return bool(self.vectors)


def compute_local_prototypes(reps: np.ndarray, labels, client_id: int = 0) -> LocalPrototypeSet:
    """Per-class means of representation rows.

    Classes with no samples are simply absent from the result.
    """
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels)
    if reps.ndim != 2 or labels.shape != (reps.shape[0],):
        raise ShapeError(f"expected (N, d) reps with N labels, got {reps.shape} and {labels.shape}")
    vectors: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for k in sorted(np.unique(labels)):
        mask = labels == k
        vectors[int(k)] = reps[mask].mean(axis=0)
        counts[int(k)] = int(mask.sum())
    return LocalPrototypeSet(client_id=client_id, vectors=vectors, counts=counts)


def compute_local_unimodal(zprime_by_modality: dict[int, np.ndarray], labels,
                           client_id: int = 0) -> dict[int, LocalPrototypeSet]:
    """Per-modality local prototype sets over the projected tokens."""
    return {m: compute_local_prototypes(z, labels, client_id)
            for m, z in sorted(zprime_by_modality.items())}


def aggregate_complete(local_sets: list[LocalPrototypeSet],
                       round_index: int = -1) -> CompletePrototypes:
    """Unweighted class-wise mean over the clients reporting each class.

    Clients are processed in client-id order, so the result is byte-identical
    no matter how the inputs were collected.
    """
    ordered = sorted(local_sets, key=lambda s: s.client_id)
    by_class: dict[int, list[np.ndarray]] = {}
    for s in ordered:
        for k, v in s.vectors.items():
            by_class.setdefault(int(k), []).append(np.asarray(v, dtype=np.float64))
    vectors = {}
    contributors = {}
    for k in sorted(by_class):
        stack = np.stack(by_class[k])
        if stack.ndim != 2:
            raise ShapeError(f"class {k}: prototype vectors disagree on shape")
        vectors[k] = stack.mean(axis=0)
        contributors[k] = stack.shape[0]
    return CompletePrototypes(vectors=vectors, contributors=contributors,
                              round_index=round_index)


def aggregate_unimodal(local_maps: list[dict[int, LocalPrototypeSet]],
                       round_index: int = -1) -> dict[int, CompletePrototypes]:
    """aggregate_complete applied per modality."""
    modalities = sorted({m for lm in local_maps for m in lm})
    return {m: aggregate_complete([lm[m] for lm in local_maps if m in lm], round_index)
            for m in modalities}


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def complete_to_dict(protos: CompletePrototypes) -> dict:
    return {
        "round": protos.round_index,
        "classes": {str(k): [float(x) for x in v] for k, v in sorted(protos.vectors.items())},
        "contributors": {str(k): n for k, n in sorted(protos.contributors.items())},
    }


def complete_from_dict(payload: dict) -> CompletePrototypes:
    try:
        vectors = {int(k): np.asarray(v, dtype=np.float64)
                   for k, v in payload["classes"].items()}
        contributors = {int(k): int(n) for k, n in payload["contributors"].items()}
        round_index = int(payload["round"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed prototype payload: {exc}") from None
    return CompletePrototypes(vectors=vectors, contributors=contributors,
                              round_index=round_index)


def local_to_dict(s: LocalPrototypeSet) -> dict:
    return {
        "client": s.client_id,
        "classes": {str(k): [float(x) for x in v] for k, v in sorted(s.vectors.items())},
        "counts": {str(k): n for k, n in sorted(s.counts.items())},
    }


def save_prototypes(protos: CompletePrototypes, path) -> None:
    with open(path, "w") as fh:
        json.dump(complete_to_dict(protos), fh, indent=1)


def load_prototypes(path) -> CompletePrototypes:
    with open(path) as fh:
        return complete_from_dict(json.load(fh))


def payload_bytes(s: LocalPrototypeSet) -> int:
    """Serialized size of one client's prototype upload."""
    return len(json.dumps(local_to_dict(s)).encode())
