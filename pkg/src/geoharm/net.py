"""Linear, FcNet and SirenNet heads on a flat parameter vector.

Weights are stored input-major, so a dense layer computes ``x @ W + b``.
Gradients are hand-written reverse mode over the fixed layer graph.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses
from .dfs import parse_kv, scale_factors_rad, EmbeddingSpec

NET_KINDS = ("linear", "fcnet", "siren")
N_RES_BLOCKS = 4
MAGIC = b"GEOH1"


class NumericFailure(ArithmeticError):
    """Raised when a non-finite value appears in a forward or backward pass."""


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    in_dim: int
    out_dim: int
    hidden: int = 256
    layers: int = 2
    dropout: float = 0.0
    omega0: float = 30.0

    def __post_init__(self):
        kind = {"sirennet": "siren", "lin": "linear"}.get(self.kind.lower(), self.kind.lower())
        if kind not in NET_KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if min(self.in_dim, self.out_dim, self.hidden, self.layers) < 1:
            raise ValueError("dimensions and layer count must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")

    @classmethod
    def parse(cls, text: str, in_dim: int, out_dim: int) -> "NetworkSpec":
        """Parse ``kind[:H=..,N=..,dropout=..,omega0=..]``; FcNet defaults to H=256, dropout=0.5."""
        kind, _, rest = text.strip().partition(":")
        kind = {"sirennet": "siren", "lin": "linear"}.get(kind.lower(), kind.lower())
        if kind not in NET_KINDS:
            raise ValueError(f"unknown network kind {kind!r}")
        keys = {
            "linear": {},
            "fcnet": {"H": ("hidden", int), "dropout": ("dropout", float)},
            "siren": {"H": ("hidden", int), "N": ("layers", int), "dropout": ("dropout", float),
                      "omega0": ("omega0", float)},
        }[kind]
        kwargs = {"dropout": 0.5} if kind == "fcnet" else {}
        for key, val in parse_kv(rest).items():
            if key not in keys:
                raise ValueError(f"network {kind!r} does not accept key {key!r}")
            name, typ = keys[key]
            kwargs[name] = typ(val)
        return cls(kind, in_dim, out_dim, **kwargs)

    def short(self):
        if self.kind == "linear":
            return "linear"
        if self.kind == "fcnet":
            return f"fcnet:H={self.hidden},dropout={self.dropout:g}"
        return f"siren:H={self.hidden},N={self.layers},dropout={self.dropout:g},omega0={self.omega0:g}"


def layer_shapes(spec: NetworkSpec):
    """Ordered (name, shape) for every parameter tensor."""
    i, h, o = spec.in_dim, spec.hidden, spec.out_dim
    if spec.kind == "linear":
        dense = [("out", i, o)]
    elif spec.kind == "fcnet":
        dense = [("in", i, h)]
        for k in range(N_RES_BLOCKS):
            dense += [(f"res{k}a", h, h), (f"res{k}b", h, h)]
        dense.append(("out", h, o))
    else:
        dense = [("sin0", i, h)] + [(f"sin{k}", h, h) for k in range(1, spec.layers)] + [("out", h, o)]
    shapes = []
    for name, fan_in, fan_out in dense:
        shapes.append((name + ".W", (fan_in, fan_out)))
        shapes.append((name + ".b", (fan_out,)))
    return shapes


def build_layout(spec: NetworkSpec):
    layout, offset = {}, 0
    for name, shape in layer_shapes(spec):
        size = int(np.prod(shape))
        layout[name] = (slice(offset, offset + size), shape)
        offset += size
    return layout, offset


@dataclass
class Model:
    spec: NetworkSpec
    params: np.ndarray
    layout: dict = field(default=None, repr=False)

    def __post_init__(self):
        layout, count = build_layout(self.spec)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (count,):
            raise ValueError(f"expected {count} parameters, got {self.params.shape}")
        self.layout = layout

    def get(self, name):
        sl, shape = self.layout[name]
        return self.params[sl].reshape(shape)

    def copy(self):
        return Model(self.spec, self.params.copy())

    @property
    def num_params(self):
        return self.params.size


def param_count(spec: NetworkSpec) -> int:
    return build_layout(spec)[1]


def init(spec: NetworkSpec, seed) -> Model:
    rng = np.random.default_rng(seed)
    layout, count = build_layout(spec)
    params = np.zeros(count)
    for name, (sl, shape) in layout.items():
        if spec.kind == "siren":
            fan_in = shape[0] if name.endswith(".W") else layout[name[:-2] + ".W"][1][0]
            if name == "sin0.W":
                bound = 1.0 / fan_in
            elif name.endswith(".W"):
                bound = np.sqrt(6.0 / fan_in) / spec.omega0
            else:
                bound = 1.0 / np.sqrt(fan_in)
            params[sl] = rng.uniform(-bound, bound, sl.stop - sl.start)
        elif name.endswith(".W"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[sl] = rng.uniform(-bound, bound, sl.stop - sl.start)
    return Model(spec, params)


def _check(x, where):
    if not np.all(np.isfinite(x)):
        raise NumericFailure(f"non-finite values in {where}")


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x[None, :] if single else x
    if x.shape[1] != model.spec.in_dim:
        raise ValueError(f"input has {x.shape[1]} features, model expects {model.spec.in_dim}")
    return x, single


def _forward(model, x, train_mode, rng):
    """Forward pass keeping the intermediates needed by :func:`_backward`."""
    spec = model.spec
    drop = spec.dropout if train_mode else 0.0
    cache = {"x": x}
    if spec.kind == "linear":
        out = x @ model.get("out.W") + model.get("out.b")
    elif spec.kind == "fcnet":
        h = np.maximum(x @ model.get("in.W") + model.get("in.b"), 0.0)
        cache["h0"] = h
        for k in range(N_RES_BLOCKS):
            a = np.maximum(h @ model.get(f"res{k}a.W") + model.get(f"res{k}a.b"), 0.0)
            mask = _dropout_mask(rng, a.shape, drop) if drop > 0 else None
            ad = a * mask if mask is not None else a
            r = np.maximum(ad @ model.get(f"res{k}b.W") + model.get(f"res{k}b.b"), 0.0)
            cache[f"res{k}"] = (a, mask, ad, r)
            h = h + r
            cache[f"h{k + 1}"] = h
        out = h @ model.get("out.W") + model.get("out.b")
    else:
        h = x
        for k in range(spec.layers):
            z = h @ model.get(f"sin{k}.W") + model.get(f"sin{k}.b")
            mask = _dropout_mask(rng, z.shape, drop) if drop > 0 else None
            zd = z * mask if mask is not None else z
            w0 = spec.omega0 if k == 0 else 1.0
            cache[f"sin{k}"] = (h, mask, zd, w0)
            h = np.sin(w0 * zd)
            _check(h, f"sin{k}")
        cache["hL"] = h
        out = h @ model.get("out.W") + model.get("out.b")
    _check(out, "output")
    return out, cache


def _backward(model, cache, g_out):
    """Gradients of a scalar with respect to params and input, given dL/dout."""
    spec = model.spec
    grad = np.zeros_like(model.params)

    def put(name, value):
        sl, _ = model.layout[name]
        grad[sl] += value.ravel()

    def dense(name, inp, g):
        put(name + ".W", inp.T @ g)
        put(name + ".b", g.sum(axis=0))
        return g @ model.get(name + ".W").T

    if spec.kind == "linear":
        g_x = dense("out", cache["x"], g_out)
    elif spec.kind == "fcnet":
        g_h = dense("out", cache[f"h{N_RES_BLOCKS}"], g_out)
        for k in reversed(range(N_RES_BLOCKS)):
            a, mask, ad, r = cache[f"res{k}"]
            g_r = g_h * (r > 0)
            g_ad = dense(f"res{k}b", ad, g_r)
            g_a = g_ad * mask if mask is not None else g_ad
            g_a = g_a * (a > 0)
            g_h = g_h + dense(f"res{k}a", cache[f"h{k}"], g_a)
            _check(g_h, f"res{k}")
        g_pre = g_h * (cache["h0"] > 0)
        g_x = dense("in", cache["x"], g_pre)
    else:
        g_h = dense("out", cache["hL"], g_out)
        for k in reversed(range(spec.layers)):
            h_in, mask, zd, w0 = cache[f"sin{k}"]
            g_z = g_h * w0 * np.cos(w0 * zd)
            if mask is not None:
                g_z = g_z * mask
            g_h = dense(f"sin{k}", h_in, g_z)
            _check(g_h, f"sin{k}")
        g_x = g_h
    _check(grad, "parameter gradient")
    return grad, g_x


def forward(model: Model, x, train_mode=False, seed=None):
    """Network output for one embedding vector or a batch of them."""
    x, single = _as_batch(model, x)
    rng = np.random.default_rng(seed) if train_mode else None
    out, _ = _forward(model, x, train_mode, rng)
    return out[0] if single else out


def backward(model: Model, x, targets, loss_kind, train_mode=False, seed=None, rng=None):
    """Mean batch loss and its gradient with respect to ``model.params``."""
    x, _ = _as_batch(model, x)
    if rng is None:
        rng = np.random.default_rng(seed)
    out, cache = _forward(model, x, train_mode, rng)
    loss, g_out = losses.loss_grad(loss_kind, out, targets)
    if not np.isfinite(loss):
        raise NumericFailure("non-finite loss")
    grad, _ = _backward(model, cache, g_out)
    return loss, grad


def backward_assume_negative(model, x, labels, x_rand, lambda_pos, train_mode=False, rng=None):
    """Assume-negative loss on sigmoid outputs at observed and random locations."""
    x, _ = _as_batch(model, x)
    x_rand, _ = _as_batch(model, x_rand)
    rng = rng if rng is not None else np.random.default_rng()
    out, cache = _forward(model, x, train_mode, rng)
    out_r, cache_r = _forward(model, x_rand, train_mode, rng)
    loss, g, g_r = losses.assume_negative_grad(out, labels, out_r, lambda_pos)
    grad = _backward(model, cache, g)[0] + _backward(model, cache_r, g_r)[0]
    return loss, grad


def input_jacobian(model: Model, x) -> np.ndarray:
    """d output / d input for a single eval-mode input, shape (out_dim, in_dim)."""
    x, _ = _as_batch(model, x)
    out, cache = _forward(model, x, False, None)
    rows = []
    for j in range(out.shape[1]):
        g = np.zeros_like(out)
        g[0, j] = 1.0
        rows.append(_backward(model, cache, g)[1][0])
    return np.array(rows)


def grid_siren(S: int, r_min: float, r_max: float) -> Model:
    """One-layer SirenNet on (lon, lat) whose output equals the Grid embedding.

    Block s of the hidden layer holds sin(lon/a + pi/2), sin(lon/a),
    sin(lat/a + pi/2), sin(lat/a) with a = alpha_s; the output layer is the
    identity.
    """
    alpha = scale_factors_rad(EmbeddingSpec("grid", S=S, r_min=r_min, r_max=r_max))
    H = 4 * S
    spec = NetworkSpec("siren", in_dim=2, out_dim=H, hidden=H, layers=1, dropout=0.0, omega0=1.0)
    model = Model(spec, np.zeros(param_count(spec)))
    W = np.zeros((2, H))
    b = np.zeros(H)
    for s, a in enumerate(alpha):
        h = 4 * s
        W[0, h] = W[0, h + 1] = 1.0 / a
        W[1, h + 2] = W[1, h + 3] = 1.0 / a
        b[h] = b[h + 2] = np.pi / 2
    model.params[model.layout["sin0.W"][0]] = W.ravel()
    model.params[model.layout["sin0.b"][0]] = b
    model.params[model.layout["out.W"][0]] = np.eye(H).ravel()
    return model


# checkpoint header: magic, kind, in_dim, out_dim, hidden, layers, dropout, omega0, n_params
_HEADER = struct.Struct("<5s6i2dq")


def save_checkpoint(model: Model, path):
    s = model.spec
    header = _HEADER.pack(MAGIC, 1, NET_KINDS.index(s.kind), s.in_dim, s.out_dim, s.hidden,
                          s.layers, s.dropout, s.omega0, model.params.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.params.astype("<f8").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, kind, i, o, h, n, drop, omega, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    spec = NetworkSpec(NET_KINDS[kind], i, o, hidden=h, layers=n, dropout=drop, omega0=omega)
    params = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if params.size != count:
        raise ValueError(f"{path}: expected {count} parameters, found {params.size}")
    return Model(spec, params.astype(float))


def with_dims(spec: NetworkSpec, in_dim: int, out_dim: int) -> NetworkSpec:
    return replace(spec, in_dim=in_dim, out_dim=out_dim)
