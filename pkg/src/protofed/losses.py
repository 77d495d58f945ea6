"""Training objective: cross-entropy plus the three prototype alignment terms.

All losses reduce with the per-batch mean and return scalar tensors, tracked
whenever their inputs are tracked.  Prototype vectors arrive as plain arrays
(server-broadcast data, never differentiated).

Classes that have no prototype yet are excluded from the regularization and
contrastive terms; with no prototypes at all (the first round) both terms
contribute an exact zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .autodiff import (
    ParamStore, Tensor, add, constant, exp, l2norm, log, matmul, mean, mul,
    relu, scalar_mul, softmax, sum_,
)
from .errors import ConfigError, ShapeError

CMA_KINDS = ("l2", "l1", "smooth_l1", "kl")

_SMOOTH_L1_DELTA = 1.0


@dataclass(frozen=True)
class LossWeights:
    alpha_reg: float = 1.0
    alpha_con: float = 2.0
    alpha_align: float = 0.1
    tau: float = 0.1


@dataclass(frozen=True)
class LossToggles:
    cmpr: bool = True
    cmpc: bool = True
    cma: bool = True

    @classmethod
    def none(cls) -> "LossToggles":
        return cls(cmpr=False, cmpc=False, cma=False)


def _check_labels(labels, batch, n_classes=None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
    if n_classes is not None and labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ShapeError(f"labels outside [0, {n_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true class under softmax(logits)."""
    B, K = logits.data.shape
    labels = _check_labels(labels, B, K)
    onehot = np.zeros((B, K))
    onehot[np.arange(B), labels] = 1.0
    # shifting by the (detached) row max changes neither value nor gradient
    shifted = add(logits, constant(-logits.data.max(axis=1, keepdims=True)))
    log_z = log(sum_(exp(shifted), axis=1))
    picked = sum_(mul(shifted, constant(onehot)), axis=1)
    return mean(add(log_z, scalar_mul(picked, -1.0)))


def _coverage_mask(labels, prototypes):
    """0/1 row weights for samples whose class has a prototype."""
    w = np.array([1.0 if int(y) in prototypes else 0.0 for y in labels])
    return w, int(w.sum())


def cmpr_loss(r: Tensor, labels, prototypes: dict[int, np.ndarray]) -> Tensor:
    """Mean squared L2 distance from r_i to its class's complete prototype.

    Averaged over the covered samples; exact 0 when no sample is covered.
    """
    B, d = r.data.shape
    labels = _check_labels(labels, B)
    if not prototypes:
        return constant(0.0)
    w, count = _coverage_mask(labels, prototypes)
    if count == 0:
        return constant(0.0)
    targets = np.stack([prototypes[int(y)] if int(y) in prototypes else np.zeros(d)
                        for y in labels])
    diff = add(r, constant(-targets))
    per_sample = sum_(mul(diff, diff), axis=1)
    return scalar_mul(sum_(mul(per_sample, constant(w))), 1.0 / count)


def cmpc_loss(zprime: list[Tensor], present, labels,
              prototypes: dict[int, np.ndarray], tau: float) -> Tensor:
    """Prototype-contrastive term, summed over present modalities.

    Per present modality m and covered sample i:
        -log exp(s(z'_mi, P^{y_i})/tau) / sum_p exp(s(z'_mi, p)/tau)
    with cosine similarity s and the denominator running over the prototypes
    that actually exist.  Mean over covered samples.
    """
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if not prototypes:
        return constant(0.0)
    if len(present) != len(zprime):
        raise ShapeError(f"{len(zprime)} z' tensors but {len(present)} presence flags")
    B = zprime[0].data.shape[0]
    labels = _check_labels(labels, B)
    classes = sorted(prototypes)
    row_of = {k: i for i, k in enumerate(classes)}
    w = np.array([1.0 if int(y) in row_of else 0.0 for y in labels])
    count = int(w.sum())
    if count == 0:
        return constant(0.0)
    onehot = np.zeros((B, len(classes)))
    for i, y in enumerate(labels):
        if w[i]:
            onehot[i, row_of[int(y)]] = 1.0
    proto_mat = l2norm(constant(np.stack([prototypes[k] for k in classes])))

    total = None
    for m, zp in enumerate(zprime):
        if not present[m]:
            continue
        sims = matmul(l2norm(zp), proto_mat, transpose_b=True)   # (B, Kp)
        logits = scalar_mul(sims, 1.0 / tau)
        shifted = add(logits, constant(-logits.data.max(axis=1, keepdims=True)))
        log_z = log(sum_(exp(shifted), axis=1))
        picked = sum_(mul(shifted, constant(onehot)), axis=1)
        per_sample = add(log_z, scalar_mul(picked, -1.0))
        term = scalar_mul(sum_(mul(per_sample, constant(w))), 1.0 / count)
        total = term if total is None else add(total, term)
    return total if total is not None else constant(0.0)


def _abs(x: Tensor) -> Tensor:
    return add(relu(x), relu(scalar_mul(x, -1.0)))


def _log_softmax(x: Tensor) -> Tensor:
    shifted = add(x, constant(-x.data.max(axis=1, keepdims=True)))
    log_z = log(sum_(exp(shifted), axis=1, keepdims=True))
    return add(shifted, scalar_mul(log_z, -1.0))


def _pair_distance(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Per-sample distance between two (B, d) representations -> (B,)."""
    if kind == "l2":
        diff = add(a, scalar_mul(b, -1.0))
        return sum_(mul(diff, diff), axis=1)
    if kind == "l1":
        return sum_(_abs(add(a, scalar_mul(b, -1.0))), axis=1)
    if kind == "smooth_l1":
        diff = add(a, scalar_mul(b, -1.0))
        absd = _abs(diff)
        # quadratic inside delta, linear outside; the branch mask is data,
        # valid because the pieces agree in value and slope at the boundary
        inside = (np.abs(diff.data) < _SMOOTH_L1_DELTA).astype(np.float64)
        quad = scalar_mul(mul(mul(diff, diff), constant(inside)), 0.5 / _SMOOTH_L1_DELTA)
        lin = mul(add(absd, constant(-0.5 * _SMOOTH_L1_DELTA)), constant(1.0 - inside))
        return sum_(add(quad, lin), axis=1)
    if kind == "kl":
        # symmetrized KL between softmax-normalized vectors
        log_p, log_q = _log_softmax(a), _log_softmax(b)
        p, q = exp(log_p), exp(log_q)
        delta = add(log_p, scalar_mul(log_q, -1.0))
        kl_pq = sum_(mul(p, delta), axis=1)
        kl_qp = sum_(mul(q, scalar_mul(delta, -1.0)), axis=1)
        return scalar_mul(add(kl_pq, kl_qp), 0.5)
    raise ConfigError(f"unknown cma kind '{kind}'; valid: {', '.join(CMA_KINDS)}")


def cma_loss(zprime: list[Tensor], present, kind: str = "l2") -> Tensor:
    """Cross-modal alignment: mean over samples of the summed pairwise
    distance between present modalities' projections.  0 with fewer than two
    present modalities."""
    if kind not in CMA_KINDS:
        raise ConfigError(f"unknown cma kind '{kind}'; valid: {', '.join(CMA_KINDS)}")
    if len(present) != len(zprime):
        raise ShapeError(f"{len(zprime)} z' tensors but {len(present)} presence flags")
    idx = [m for m, flag in enumerate(present) if flag]
    if len(idx) < 2:
        return constant(0.0)
    total = None
    for i, j in combinations(idx, 2):
        dist = _pair_distance(zprime[i], zprime[j], kind)
        total = dist if total is None else add(total, dist)
    return mean(total)


def proximal_l2(tracked: dict[str, Tensor], reference: ParamStore) -> Tensor:
    """Sum of squared distances between the live parameters and a snapshot."""
    total = None
    for name in reference.names():
        diff = add(tracked[name], constant(-reference[name]))
        term = sum_(mul(diff, diff))
        total = term if total is None else add(total, term)
    return total


def total_loss(outputs: dict, labels, present, prototypes,
               weights: LossWeights, toggles: LossToggles,
               cma_kind: str = "l2") -> dict[str, Tensor | None]:
    """Assemble the full objective from a forward_full output dict.

    Returns {"total", "ce", "cmpr", "cmpc", "cma"}; disabled terms are None
    and contribute nothing at all, so with everything off the total IS the
    cross-entropy tensor.
    """
    ce = cross_entropy(outputs["logits"], labels)
    parts: dict[str, Tensor | None] = {"ce": ce, "cmpr": None, "cmpc": None, "cma": None}
    total = ce
    proto_vectors = prototypes if prototypes else {}
    if toggles.cmpr:
        parts["cmpr"] = cmpr_loss(outputs["r"], labels, proto_vectors)
        total = add(total, scalar_mul(parts["cmpr"], weights.alpha_reg))
    if toggles.cmpc:
        parts["cmpc"] = cmpc_loss(outputs["zprime"], present, labels,
                                  proto_vectors, weights.tau)
        total = add(total, scalar_mul(parts["cmpc"], weights.alpha_con))
    if toggles.cma:
        parts["cma"] = cma_loss(outputs["zprime"], present, cma_kind)
        total = add(total, scalar_mul(parts["cma"], weights.alpha_align))
    parts["total"] = total
    return parts


def unimodal_total_loss(outputs: dict, labels, present,
                        unimodal: dict[int, dict[int, np.ndarray]],
                        weights: LossWeights, toggles: LossToggles,
                        cma_kind: str = "l2") -> dict[str, Tensor | None]:
    """Ablation objective using per-modality prototype sets.

    Each client calibrates only against the prototype sets of its own present
    modalities: the regularizer averages the r-to-U_m distances over present
    modalities, and the contrastive term matches z'_m against U_m.
    """
    ce = cross_entropy(outputs["logits"], labels)
    parts: dict[str, Tensor | None] = {"ce": ce, "cmpr": None, "cmpc": None, "cma": None}
    total = ce
    present_idx = [m for m, flag in enumerate(present) if flag]
    if toggles.cmpr and present_idx:
        acc = None
        for m in present_idx:
            term = cmpr_loss(outputs["r"], labels, unimodal.get(m, {}))
            acc = term if acc is None else add(acc, term)
        parts["cmpr"] = scalar_mul(acc, 1.0 / len(present_idx))
        total = add(total, scalar_mul(parts["cmpr"], weights.alpha_reg))
    if toggles.cmpc and present_idx:
        acc = None
        for m in present_idx:
            term = cmpc_loss([outputs["zprime"][m]], [True], labels,
                             unimodal.get(m, {}), weights.tau)
            acc = term if acc is None else add(acc, term)
        parts["cmpc"] = acc
        total = add(total, scalar_mul(parts["cmpc"], weights.alpha_con))
    if toggles.cma:
        parts["cma"] = cma_loss(outputs["zprime"], present, cma_kind)
        total = add(total, scalar_mul(parts["cma"], weights.alpha_align))
    parts["total"] = total
    return parts
