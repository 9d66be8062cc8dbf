"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import Tape


def numerical_grad(fn, tensor, h=1e-5, indices=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor``.

    ``indices`` restricts the probe to some flat positions (others stay 0).
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(tensor.shape)


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||), with a floor so all-zero pairs give 0."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(fn, tensors, h=1e-5, max_entries=None, rng=None):
    """Compare tape gradients of ``fn()`` with central differences.

    Returns ``{label: relative_error}`` for every tensor in ``tensors``
    (a dict of label -> Tensor or a list). With ``max_entries`` only that
    many randomly chosen entries per tensor are probed.
    """
    if not isinstance(tensors, dict):
        tensors = {i: t for i, t in enumerate(tensors)}
    for t in tensors.values():
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss, list(tensors.values()))
    rng = rng if rng is not None else np.random.default_rng(0)
    errors = {}
    for label, t in tensors.items():
        analytic = t.grad.copy()
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
            numeric = numerical_grad(fn, t, h, idx).ravel()[idx]
            analytic = analytic.ravel()[idx]
        else:
            numeric = numerical_grad(fn, t, h)
        errors[label] = relative_error(analytic, numeric)
    return errors
