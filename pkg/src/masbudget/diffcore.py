"""Minimal reverse-mode differentiation over dense float64 vectors and matrices.

Covers exactly the ops the configurator policy needs (matmul, concat,
means, sigmoid/softmax/relu, safe log, scaled dot-product attention,
scalar combines) plus a finite-difference gradient checker and a plain
SGD step with optional global-norm clipping.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .errors import NumericsError, ShapeError

LOG_FLOOR = 1e-12
GRAD_CLIP_NORM = 5.0

_CKPT_MAGIC = b"MBCKPT01"


class Tensor:
    """A dense array node on the backward tape.

    ``parents``/``backward_fn`` are populated only while a graph is being
    recorded; ``backward`` frees them once gradients have been propagated.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.parents = tuple(parents) if self.requires_grad else ()
        self.backward_fn = backward_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # convenience operators; the functional forms below are the API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """A graph leaf that never receives gradients."""
    return Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unary(x: Tensor, out_data, grad_fn):
    x = as_tensor(x)

    def bw(out):
        _accum(x, grad_fn(out.grad))

    return Tensor(out_data, parents=(x,), backward_fn=bw)


# ---------------------------------------------------------------------------
# forward ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def bw(out):
        _accum(a, out.grad if a.shape == out_data.shape else np.sum(out.grad))
        _accum(b, out.grad if b.shape == out_data.shape else np.sum(out.grad))

    return Tensor(out_data, parents=(a, b), backward_fn=bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    out_data = a.data - b.data

    def bw(out):
        _accum(a, out.grad if a.shape == out_data.shape else np.sum(out.grad))
        _accum(b, -out.grad if b.shape == out_data.shape else -np.sum(out.grad))

    return Tensor(out_data, parents=(a, b), backward_fn=bw)


def mul(a, b):
    """Elementwise product; either side may be a scalar () tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def bw(out):
        ga = out.grad * b.data
        gb = out.grad * a.data
        _accum(a, ga if a.shape == out_data.shape else np.sum(ga))
        _accum(b, gb if b.shape == out_data.shape else np.sum(gb))

    return Tensor(out_data, parents=(a, b), backward_fn=bw)


def div(a, b):
    """a / b with b a scalar () tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if b.shape != ():
        raise ShapeError(f"div: denominator must be scalar, got {b.shape}")
    out_data = a.data / b.data

    def bw(out):
        _accum(a, out.grad / b.data)
        _accum(b, -np.sum(out.grad * a.data) / (b.data * b.data))

    return Tensor(out_data, parents=(a, b), backward_fn=bw)


def scale(x, c: float):
    x = as_tensor(x)
    c = float(c)
    return _unary(x, x.data * c, lambda g: g * c)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(out):
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    return Tensor(out_data, parents=(a, b), backward_fn=bw)


def matvec(a, x):
    a, x = as_tensor(a), as_tensor(x)
    if a.data.ndim != 2 or x.data.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: {a.shape} @ {x.shape}")
    out_data = a.data @ x.data

    def bw(out):
        _accum(a, np.outer(out.grad, x.data))
        _accum(x, a.data.T @ out.grad)

    return Tensor(out_data, parents=(a, x), backward_fn=bw)


def vecmat(x, a):
    """Row vector times matrix: (n,) @ (n,m) -> (m,)."""
    x, a = as_tensor(x), as_tensor(a)
    if x.data.ndim != 1 or a.data.ndim != 2 or x.shape[0] != a.shape[0]:
        raise ShapeError(f"vecmat: {x.shape} @ {a.shape}")
    out_data = x.data @ a.data

    def bw(out):
        _accum(x, a.data @ out.grad)
        _accum(a, np.outer(x.data, out.grad))

    return Tensor(out_data, parents=(x, a), backward_fn=bw)


def dot(x, y):
    x, y = as_tensor(x), as_tensor(y)
    if x.data.ndim != 1 or y.data.ndim != 1 or x.shape != y.shape:
        raise ShapeError(f"dot: {x.shape} . {y.shape}")
    out_data = np.dot(x.data, y.data)

    def bw(out):
        _accum(x, out.grad * y.data)
        _accum(y, out.grad * x.data)

    return Tensor(out_data, parents=(x, y), backward_fn=bw)


def concat(parts):
    """Concatenate scalar () and 1-D tensors into one vector."""
    parts = [as_tensor(p) for p in parts]
    flats = [p.data.reshape(-1) for p in parts]
    out_data = np.concatenate(flats) if flats else np.zeros(0)

    def bw(out):
        off = 0
        for p, f in zip(parts, flats):
            n = f.shape[0]
            _accum(p, out.grad[off : off + n].reshape(p.shape))
            off += n

    return Tensor(out_data, parents=tuple(parts), backward_fn=bw)


def stack_rows(rows):
    """Stack 1-D tensors of equal length into a (k, n) matrix."""
    rows = [as_tensor(r) for r in rows]
    if not rows:
        raise ShapeError("stack_rows: no rows")
    n = rows[0].shape[0]
    for r in rows:
        if r.data.ndim != 1 or r.shape[0] != n:
            raise ShapeError("stack_rows: rows must share length")
    out_data = np.stack([r.data for r in rows])

    def bw(out):
        for i, r in enumerate(rows):
            _accum(r, out.grad[i])

    return Tensor(out_data, parents=tuple(rows), backward_fn=bw)


def row_mean(a):
    """Mean over rows of a (m, n) matrix -> (n,)."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"row_mean: expected matrix, got {a.shape}")
    m = a.shape[0]
    out_data = a.data.mean(axis=0)

    def bw(out):
        _accum(a, np.broadcast_to(out.grad / m, a.shape).copy())

    return Tensor(out_data, parents=(a,), backward_fn=bw)


def tsum(x):
    x = as_tensor(x)
    out_data = np.sum(x.data)

    def bw(out):
        _accum(x, np.full(x.shape, out.grad))

    return Tensor(out_data, parents=(x,), backward_fn=bw)


def sigmoid(x):
    x = as_tensor(x)
    out_data = _sigmoid_stable(x.data)
    return _unary(x, out_data, lambda g: g * out_data * (1.0 - out_data))


_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = float(np.nextafter(1.0, 0.0))


def _sigmoid_stable(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the output in the open interval even when exp saturates
    return np.clip(out, _SIG_LO, _SIG_HI)


def softplus(x):
    x = as_tensor(x)
    out_data = np.logaddexp(0.0, x.data)
    sig = _sigmoid_stable(x.data)
    return _unary(x, out_data, lambda g: g * sig)


def relu(x):
    x = as_tensor(x)
    mask = (x.data > 0).astype(np.float64)
    return _unary(x, x.data * mask, lambda g: g * mask)


def safe_log(x):
    """log with the argument floored at LOG_FLOOR; zero gradient in the floor."""
    x = as_tensor(x)
    clamped = np.maximum(x.data, LOG_FLOOR)
    mask = (x.data > LOG_FLOOR).astype(np.float64)
    return _unary(x, np.log(clamped), lambda g: g * mask / clamped)


def clamp01(x):
    x = as_tensor(x)
    out_data = np.clip(x.data, 0.0, 1.0)
    mask = ((x.data > 0.0) & (x.data < 1.0)).astype(np.float64)
    return _unary(x, out_data, lambda g: g * mask)


def softmax(x):
    """Softmax over a 1-D tensor, computed with max subtraction."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"softmax: expected vector, got {x.shape}")
    z = x.data - np.max(x.data)
    e = np.exp(z)
    out_data = e / e.sum()

    def bw(out):
        g = out.grad
        _accum(x, out_data * (g - np.dot(g, out_data)))

    return Tensor(out_data, parents=(x,), backward_fn=bw)


def cumsum(x):
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"cumsum: expected vector, got {x.shape}")
    return _unary(x, np.cumsum(x.data), lambda g: np.cumsum(g[::-1])[::-1])


def getitem(x, i: int):
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"getitem: expected vector, got {x.shape}")
    i = int(i)
    out_data = x.data[i]

    def bw(out):
        g = np.zeros_like(x.data)
        g[i] = out.grad
        _accum(x, g)

    return Tensor(out_data, parents=(x,), backward_fn=bw)


def slice_rows(a, n: int):
    """First n rows of a matrix."""
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 < n <= a.shape[0]:
        raise ShapeError(f"slice_rows: {n} rows from {a.shape}")
    out_data = a.data[:n].copy()

    def bw(out):
        g = np.zeros_like(a.data)
        g[:n] = out.grad
        _accum(a, g)

    return Tensor(out_data, parents=(a,), backward_fn=bw)


def attention(q, k, v):
    """Scaled dot-product attention: softmax(q Kᵀ / sqrt(d)) V.

    q: (d,), k: (rows, d), v: (rows, dv) -> (dv,).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.ndim != 1 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention: q must be a vector, k/v matrices")
    if k.shape[1] != q.shape[0] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: q{q.shape} k{k.shape} v{v.shape}")
    scores = scale(matvec(k, q), 1.0 / math.sqrt(q.shape[0]))
    weights = softmax(scores)
    return vecmat(weights, v)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor):
    """Propagate gradients from a scalar loss; frees the graph afterwards."""
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got {loss.data.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is not None:
            node.backward_fn(node)
    for node in order:
        node.backward_fn = None
        node.parents = ()


# ---------------------------------------------------------------------------
# parameters


class ParameterStore:
    """Named, seeded parameter tensors plus per-parameter optimizer state."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self.params: dict[str, Tensor] = {}
        self.opt_state: dict[str, dict] = {}

    def add(self, name: str, shape, fan_in=None) -> Tensor:
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        shape = tuple(shape)
        if fan_in is None:
            fan_in = shape[-1] if shape else 1
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        data = self._rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def add_const(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def clone_data(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_data(self, blobs):
        for k, arr in blobs.items():
            self.params[k].data = np.array(arr, dtype=np.float64)

    # checkpoint: named tensors, shapes, raw little-endian float64
    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<qI", self.seed, len(self.params)))
            for name, t in self.params.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<B", t.data.ndim))
                for d in t.data.shape:
                    fh.write(struct.pack("<Q", d))
                fh.write(t.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, "rb") as fh:
            magic = fh.read(len(_CKPT_MAGIC))
            if magic != _CKPT_MAGIC:
                raise ValueError(f"not a checkpoint file: {path}")
            seed, count = struct.unpack("<qI", fh.read(12))
            store = cls(seed=seed)
            for _ in range(count):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode("utf-8")
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
                n = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
                t = Tensor(data, requires_grad=True)
                store.params[name] = t
        return store


def sgd_step(store: ParameterStore, lr: float, clip_norm: float | None = GRAD_CLIP_NORM):
    """W <- W - lr * grad, with optional global-norm clipping; zeroes grads."""
    sq = 0.0
    for t in store.params.values():
        if t.grad is not None:
            sq += float(np.sum(t.grad * t.grad))
    norm = math.sqrt(sq)
    factor = 1.0
    if clip_norm is not None and norm > clip_norm:
        factor = clip_norm / norm
    for t in store.params.values():
        if t.grad is not None:
            t.data = t.data - lr * factor * t.grad
    store.zero_grad()
    return norm


# ---------------------------------------------------------------------------
# finite differences


_STEP_REFINEMENTS = (1.0, 32.0, 1024.0)


def grad_check(f, store: ParameterStore, step: float = 1e-5, tol: float = 1e-4,
               seed: int = 0, sample_frac: float = 0.1):
    """Central-difference check of d f / d params on a seeded coordinate subsample.

    f is a zero-argument callable returning a scalar Tensor built from the
    store's parameters. Relative error uses max(|analytic|, |numeric|, 1e-8)
    as the denominator. Coordinates with near-zero derivatives sit below the
    cancellation noise floor of the base step, so failing coordinates are
    re-probed at larger steps and keep their best estimate; a genuinely wrong
    gradient mismatches at every step and still fails.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    store.zero_grad()
    loss = f()
    if not np.isfinite(loss.data):
        raise NumericsError("f returned a non-finite value")
    backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in store.params.items()}
    store.zero_grad()

    def central(flat, idx, h):
        orig = flat[idx]
        flat[idx] = orig + h
        hi = float(f().data)
        flat[idx] = orig - h
        lo = float(f().data)
        flat[idx] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericsError("f returned a non-finite value during probing")
        return (hi - lo) / (2.0 * h)

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    worst = None
    for name, t in store.params.items():
        size = t.data.size
        n_pick = max(1, int(math.ceil(sample_frac * size)))
        picks = rng.choice(size, size=min(n_pick, size), replace=False)
        flat = t.data.reshape(-1)
        for idx in picks:
            a = float(analytic[name].reshape(-1)[idx])
            rel = None
            for mult in _STEP_REFINEMENTS:
                numeric = central(flat, idx, step * mult)
                cand = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                rel = cand if rel is None else min(rel, cand)
                if rel < tol:
                    break
            if rel > max_rel:
                max_rel = rel
                worst = (name, int(idx))
    return {"max_rel_err": max_rel, "worst_param": worst, "passed": max_rel < tol}
