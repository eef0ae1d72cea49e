"""Minimal differentiable computation core on float64 numpy arrays.

A small reverse-mode tape supports exactly the operations the detector
needs: affine layers, ReLU/sigmoid, elementwise arithmetic, reductions,
axis max-pooling (ties routed to the lowest index), concatenation, and L2
normalization. Everything is 64-bit so central finite differences verify
each backward pass tightly.
"""

from __future__ import annotations

import struct

import numpy as np

from .pointops import ball_query, farthest_point_sampling

NORM_EPS = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                # free intermediate grads; leaves keep theirs
                if node is not self:
                    node.grad = None

    # -- arithmetic --------------------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._make(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, a=self):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._make(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return self._coerce(other) * self ** -1.0

    def __pow__(self, exponent: float):
        def bwd(g, a=self, e=exponent):
            if a.requires_grad:
                a._accumulate(g * e * a.data ** (e - 1.0))

        return Tensor._make(self.data ** exponent, (self,), bwd)

    def __matmul__(self, other):
        other = self._coerce(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor._make(self.data @ other.data, (self, other), bwd)

    def __getitem__(self, key):
        def bwd(g, a=self, k=key):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, k, g)
                a._accumulate(full)

        return Tensor._make(self.data[key], (self,), bwd)

    # -- elementwise nonlinearities ---------------------------------------

    def relu(self):
        mask = self.data > 0.0

        def bwd(g, a=self, m=mask):
            if a.requires_grad:
                a._accumulate(g * m)

        return Tensor._make(self.data * mask, (self,), bwd)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bwd(g, a=self, s=out_data):
            if a.requires_grad:
                a._accumulate(g * s * (1.0 - s))

        return Tensor._make(out_data, (self,), bwd)

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g, a=self, e=out_data):
            if a.requires_grad:
                a._accumulate(g * e)

        return Tensor._make(out_data, (self,), bwd)

    def log(self):
        def bwd(g, a=self):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._make(np.log(self.data), (self,), bwd)

    # -- reductions and shape ops -----------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def bwd(g, a=self, ax=axis, kd=keepdims):
            if a.requires_grad:
                if ax is not None and not kd:
                    g = np.expand_dims(g, ax)
                a._accumulate(np.broadcast_to(g, a.shape).copy())

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int):
        """Max along an axis; gradient routes to the lowest tied index."""
        idx = np.argmax(self.data, axis=axis)

        def bwd(g, a=self, ax=axis, ix=idx):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.put_along_axis(full, np.expand_dims(ix, ax), np.expand_dims(g, ax), ax)
                a._accumulate(full)

        return Tensor._make(np.max(self.data, axis=axis), (self,), bwd)

    def transpose(self):
        def bwd(g, a=self):
            if a.requires_grad:
                a._accumulate(g.T)

        return Tensor._make(self.data.T, (self,), bwd)

    def reshape(self, *shape):
        def bwd(g, a=self):
            if a.requires_grad:
                a._accumulate(g.reshape(a.shape))

        return Tensor._make(self.data.reshape(*shape), (self,), bwd)

    def where(self, mask, other):
        """Select self where mask else other; mask is a constant array."""
        other = self._coerce(other)
        mask = np.asarray(mask, dtype=bool)

        def bwd(g, a=self, b=other, m=mask):
            if a.requires_grad:
                a._accumulate(_unbroadcast(np.where(m, g, 0.0), a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.where(m, 0.0, g), b.shape))

        return Tensor._make(np.where(mask, self.data, other.data), (self, other), bwd)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, ts=tensors, off=offsets, ax=axis):
        for k, t in enumerate(ts):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(off[k], off[k + 1])
                t._accumulate(g[tuple(sl)])

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ W + b with backward through all three inputs."""
    if x.data.shape[-1] != weights.data.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {x.data.shape} vs weights {weights.data.shape}"
        )
    return x @ weights + bias


def l2_normalize(v: Tensor) -> Tensor:
    """v / ||v|| along the last axis; raises on a near-zero vector."""
    norms = np.sqrt(np.sum(v.data * v.data, axis=-1))
    if np.any(norms <= NORM_EPS):
        raise ValueError("cannot normalize a near-zero vector")
    sq = (v * v).sum(axis=-1, keepdims=True)
    return v * sq ** -0.5


# -- parameters ------------------------------------------------------------


class ParamStore:
    """Named trainable tensors with gradient buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for k, t in self._params.items():
            if k not in state:
                raise KeyError(f"checkpoint missing parameter {k!r}")
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class MLP:
    """Stack of dense layers with ReLU between (and optionally after) them."""

    def __init__(self, store: ParamStore, prefix: str, sizes: list[int],
                 rng: np.random.Generator, relu_last: bool = False):
        self.layers = []
        self.relu_last = relu_last
        for i in range(len(sizes) - 1):
            w = store.add(f"{prefix}.w{i}", glorot_init(rng, sizes[i], sizes[i + 1],
                                                        (sizes[i], sizes[i + 1])))
            b = store.add(f"{prefix}.b{i}", np.zeros(sizes[i + 1]))
            self.layers.append((w, b))

    def __call__(self, x: Tensor) -> Tensor:
        for i, (w, b) in enumerate(self.layers):
            x = dense(x, w, b)
            if i < len(self.layers) - 1 or self.relu_last:
                x = x.relu()
        return x


class Adam:
    """Adam over a ParamStore; state is keyed by parameter name."""

    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in store.items()}

    def step(self):
        self.t += 1
        for k, p in self.store.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            mhat = self.m[k] / (1.0 - self.b1 ** self.t)
            vhat = self.v[k] / (1.0 - self.b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- set abstraction and the intrinsic-feature extractor -------------------


def group_indices(points: np.ndarray, centers: np.ndarray, radius: float,
                  k_max: int) -> np.ndarray:
    """(m, k_max) grouping index matrix; short groups repeat their first index."""
    rows = np.empty((len(centers), k_max), dtype=int)
    for i, c in enumerate(centers):
        idx = ball_query(points, c, radius, k_max)
        if len(idx) < k_max:
            idx = np.concatenate([idx, np.full(k_max - len(idx), idx[0])])
        rows[i] = idx
    return rows


def set_abstraction(points: np.ndarray, centers: np.ndarray, radius: float,
                    k_max: int, shared_mlp: MLP) -> Tensor:
    """Per-center local features: shared MLP on center offsets, max-pooled.

    Returns an (m, C) tensor. The max routes gradient only to the argmax
    contributor per channel, so duplicated group members are harmless.
    """
    idx = group_indices(points, centers, radius, k_max)
    offsets = points[idx] - centers[:, None, :]  # (m, k_max, 3)
    m = len(centers)
    feats = shared_mlp(Tensor(offsets.reshape(m * k_max, 3)))
    c_dim = feats.data.shape[-1]
    return feats.reshape(m, k_max, c_dim).max(axis=1)


class FeatureExtractorConfig:
    """Hyperparameters of the two-scale intrinsic-feature extractor."""

    def __init__(self, m: int = 128, radii: tuple[float, float] = (0.2, 0.4),
                 group_sizes: tuple[int, int] = (16, 32), local_dim: int = 32,
                 out_dim: int = 16, fc_sizes: tuple[int, ...] = (256, 64)):
        if min(m, local_dim, out_dim, *group_sizes) < 1 or min(radii) <= 0:
            raise ValueError("all extractor sizes must be positive")
        self.m = m
        self.radii = radii
        self.group_sizes = group_sizes
        self.local_dim = local_dim
        self.out_dim = out_dim
        self.fc_sizes = tuple(fc_sizes)


class IntrinsicFeatureExtractor:
    """FPS + two-radius local pooling + FC stack -> global feature vector."""

    def __init__(self, store: ParamStore, cfg: FeatureExtractorConfig,
                 rng: np.random.Generator, prefix: str = "intrinsic"):
        self.cfg = cfg
        self.mlp1 = MLP(store, f"{prefix}.local1", [3, 32, cfg.local_dim], rng,
                        relu_last=True)
        self.mlp2 = MLP(store, f"{prefix}.local2", [3, 32, cfg.local_dim], rng,
                        relu_last=True)
        flat = cfg.m * 2 * cfg.local_dim
        self.fc = MLP(store, f"{prefix}.fc", [flat, *cfg.fc_sizes, cfg.out_dim], rng)

    def __call__(self, points: np.ndarray) -> Tensor:
        cfg = self.cfg
        points = np.asarray(points, dtype=np.float64)
        if len(points) < cfg.m:
            raise ValueError(f"need at least {cfg.m} points, got {len(points)}")
        centers = points[farthest_point_sampling(points, cfg.m)]
        f1 = set_abstraction(points, centers, cfg.radii[0], cfg.group_sizes[0], self.mlp1)
        f2 = set_abstraction(points, centers, cfg.radii[1], cfg.group_sizes[1], self.mlp2)
        flat = concat([f1, f2], axis=1).reshape(1, cfg.m * 2 * cfg.local_dim)
        return self.fc(flat).reshape(cfg.out_dim)


# -- gradient checking -----------------------------------------------------


def grad_check(fn, tensors: list[Tensor], step: float = 1e-5,
               tolerance: float = 1e-4) -> dict:
    """Compare analytic gradients of a scalar-valued fn against central differences.

    fn is re-evaluated after each perturbation of the given tensors' data.
    Returns a report with the max relative error and the worst offenders.
    """
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]

    worst = []
    max_rel = 0.0
    for t, ag in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn().data)
            flat[i] = orig - step
            down = float(fn().data)
            flat[i] = orig
            num[i] = (up - down) / (2.0 * step)
        num = num.reshape(t.data.shape)
        denom = np.maximum(np.abs(ag) + np.abs(num), 1e-8)
        rel = np.abs(ag - num) / denom
        idx = int(np.argmax(rel))
        max_rel = max(max_rel, float(rel.reshape(-1)[idx]))
        worst.append({
            "max_rel_error": float(rel.reshape(-1)[idx]),
            "analytic": float(ag.reshape(-1)[idx]),
            "numeric": float(num.reshape(-1)[idx]),
        })
    return {"max_rel_error": max_rel, "passed": max_rel < tolerance,
            "per_tensor": worst}


# -- checkpoint I/O --------------------------------------------------------

_MAGIC = b"IFGK"
_VERSION = 1


def save_checkpoint(path, named_arrays: dict[str, np.ndarray]):
    """Flat little-endian binary: magic, version, count, then named tensors."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(named_arrays)))
        for name, arr in named_arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("bad checkpoint magic")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            payload = f.read(8 * n)
            if len(payload) != 8 * n:
                raise ValueError(f"truncated checkpoint payload for {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return out
