"""Dense tensors and the gradient tape.

A :class:`Tensor` wraps a numpy array. While a :class:`Tape` is active
(``with Tape() as tape:``), every op whose inputs require gradients is
recorded together with a closure computing input gradients from the
output gradient. ``tape.backward(loss)`` replays those records in reverse.
Outside a tape nothing is recorded, which is the inference path.
"""

import threading

import numpy as np

_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    """Return the innermost active tape of this thread, or None."""
    tapes = _stack()
    return tapes[-1] if tapes else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar, defined in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.neg(as_tensor(other, self.dtype)))

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype or np.float32))


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable ops for one forward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        tapes = _stack()
        if tapes and tapes[-1] is self:
            tapes.pop()
        else:
            tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward):
        self.nodes.append(_Node(out, tuple(inputs), backward))

    def backward(self, loss, params=None):
        """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf on the tape.

        ``loss`` must hold a single element. If ``params`` is given, any of
        them that the loss does not reach gets a zero gradient, and a dict
        ``{name or index: grad}`` is returned for them.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        pending = {id(loss): loss}
        for node in reversed(self.nodes):
            key = id(node.out)
            g = grads.pop(key, None)
            if g is None:
                continue
            del pending[key]
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise RuntimeError(f"gradient shape {gi.shape} != tensor shape {t.shape}")
                k = id(t)
                if k in grads:
                    grads[k] = grads[k] + gi
                else:
                    grads[k] = gi
                    pending[k] = t
        # whatever is left was not produced on this tape: leaves
        for k, t in pending.items():
            if t.requires_grad:
                t.grad = grads[k] if t.grad is None else t.grad + grads[k]
        if params is None:
            return None
        out = {}
        for i, p in enumerate(params):
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            out[p.name if p.name is not None else i] = p.grad
        return out


def backward(tape, loss, params=None):
    """Functional form of :meth:`Tape.backward`."""
    return tape.backward(loss, params)


def record(out_data, inputs, backward_fn):
    """Wrap ``out_data`` in a Tensor and record it on the active tape."""
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(out, inputs, backward_fn)
    return out
