"""Shared test oracles: finite differences and small loop re-implementations."""

from __future__ import annotations

import numpy as np

from protofed.autodiff import Tape, Tensor, constant

FD_EPS = 1e-5
FD_TOL = 1e-4


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error with the denominator floored at 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))


def fd_max_rel_err(make_loss, arrays, eps: float = FD_EPS) -> float:
    """Compare tape gradients of a scalar loss against central differences.

    make_loss maps one Tensor per entry of `arrays` to a scalar Tensor.  Every
    array is treated as a parameter; returns the worst relative error across
    all of them.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def value_at():
        out = make_loss(*[constant(a) for a in arrays])
        return float(out.data)

    tape = Tape()
    leaves = [tape.leaf(a, param=True) for a in arrays]
    grads = tape.backward(make_loss(*leaves))

    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        analytic = grads[leaf.grad_id]
        fd = np.zeros_like(arr)
        flat, fd_flat = arr.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = value_at()
            flat[i] = orig - eps
            lo = value_at()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * eps)
        worst = max(worst, rel_err(analytic, fd))
    return worst


def projection_loss(op, arrays, rng):
    """Build a scalar loss sum(op(...) * R) probing every output component.

    R is drawn once from a dry run, so the tracked pass and the perturbed
    re-evaluations see the same constant.
    """
    from protofed.autodiff import mul, sum_

    probe = op(*[constant(np.asarray(a, dtype=np.float64)) for a in arrays])
    r = rng.normal(size=probe.data.shape)

    def make_loss(*tensors):
        return sum_(mul(op(*tensors), constant(r)))

    return make_loss


def conv1d_loop(x, w, b=None, stride=1, padding=0):
    """Quadruple-loop conv1d reference."""
    B, C, L = x.shape
    O, _, K = w.shape
    Lp = L + 2 * padding
    xp = np.zeros((B, C, Lp))
    xp[:, :, padding:padding + L] = x
    Lout = (Lp - K) // stride + 1
    y = np.zeros((B, O, Lout))
    for bi in range(B):
        for o in range(O):
            for lo in range(Lout):
                acc = 0.0 if b is None else float(b[o])
                for c in range(C):
                    for k in range(K):
                        acc += xp[bi, c, lo * stride + k] * w[o, c, k]
                y[bi, o, lo] = acc
    return y


def maxpool1d_loop(x, kernel=2, stride=None):
    stride = kernel if stride is None else stride
    B, C, L = x.shape
    Lout = (L - kernel) // stride + 1
    y = np.zeros((B, C, Lout))
    for bi in range(B):
        for c in range(C):
            for lo in range(Lout):
                y[bi, c, lo] = x[bi, c, lo * stride:lo * stride + kernel].max()
    return y
