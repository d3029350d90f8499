"""Scalar residual network and its flat parameter vector.

    h_0 = V x,   h_l = h_{l-1} + sigma(W_l h_{l-1} + b_l),   phi(x) = a^T h_L

with sigma(t) = max(t, 0)^2. Parameters are stored flat in the order
V (row-major), W_1, b_1, ..., W_L, b_L, a.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .diffengine import Dual, matmul, stacked_affine, stacked_sq_relu, value_of
from .errors import ConfigError

CKPT_MAGIC = "varsolve-ckpt v1"
EVAL_CHUNK = 8192


@dataclass(frozen=True)
class ResNetConfig:
    input_dim: int
    width: int = 50
    depth: int = 6

    def __post_init__(self):
        for name in ("input_dim", "width", "depth"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}", key=name)


class ParamCount(NamedTuple):
    total: int
    excluding_input_map: int


class ResNetParams(NamedTuple):
    V: object
    W: list
    b: list
    a: object


def layout(cfg: ResNetConfig):
    """(name, shape, fan_in) for every block of the flat vector, in order."""
    d, n = cfg.input_dim, cfg.width
    blocks = [("V", (n, d), d)]
    for layer in range(1, cfg.depth + 1):
        blocks.append((f"W{layer}", (n, n), n))
        blocks.append((f"b{layer}", (n,), n))
    blocks.append(("a", (n,), n))
    return blocks


def param_count(cfg: ResNetConfig) -> ParamCount:
    d, n, depth = cfg.input_dim, cfg.width, cfg.depth
    without_v = depth * (n * n + n) + n
    return ParamCount(n * d + without_v, without_v)


def unflatten(cfg: ResNetConfig, flat) -> ResNetParams:
    """Split a flat vector (ndarray or taped Var) into its blocks."""
    size = int(np.shape(value_of(flat))[0])
    if size != param_count(cfg).total:
        raise ConfigError(
            f"parameter vector has length {size}, expected {param_count(cfg).total}")
    pieces = {}
    offset = 0
    for name, shape, _ in layout(cfg):
        count = int(np.prod(shape))
        pieces[name] = flat[offset:offset + count].reshape(shape)
        offset += count
    depth = cfg.depth
    return ResNetParams(
        pieces["V"],
        [pieces[f"W{i}"] for i in range(1, depth + 1)],
        [pieces[f"b{i}"] for i in range(1, depth + 1)],
        pieces["a"],
    )


def flatten(parts: ResNetParams) -> np.ndarray:
    blocks = [parts.V]
    for W, b in zip(parts.W, parts.b):
        blocks += [W, b]
    blocks.append(parts.a)
    return np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in blocks])


def init_params(cfg: ResNetConfig, seed) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every entry.

    ``seed`` is an integer or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    blocks = []
    for _, shape, fan_in in layout(cfg):
        bound = 1.0 / np.sqrt(fan_in)
        blocks.append(rng.uniform(-bound, bound, size=shape).reshape(-1))
    return np.concatenate(blocks)


def zero_params(cfg: ResNetConfig) -> np.ndarray:
    return np.zeros(param_count(cfg).total)


def _check_points(cfg, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cfg.input_dim:
        raise ConfigError(
            f"network expects input dimension {cfg.input_dim}, got {x.shape[-1]}")
    return x


def forward_stacked(cfg: ResNetConfig, params, S):
    """Propagate a (1 + k, n, d) stack of inputs and tangents; returns (1 + k, n)."""
    p = unflatten(cfg, params)
    h = stacked_affine(S, p.V)
    for W, b in zip(p.W, p.b):
        h = h + stacked_sq_relu(stacked_affine(h, W, b))
    return matmul(h, p.a)


def forward_dual(cfg: ResNetConfig, params, x: Dual) -> Dual:
    S = np.concatenate([np.asarray(x.value)[None], np.asarray(x.tangent)])
    out = forward_stacked(cfg, params, S)
    return Dual(out[0], out[1:])


def forward(cfg: ResNetConfig, params, x):
    """Network output at one point (float) or at a batch of points, shape (n,)."""
    x = _check_points(cfg, x)
    single = x.ndim == 1
    X = x[None, :] if single else x
    out = forward_stacked(cfg, params, X[None])[0]
    if single:
        return float(value_of(out)[0])
    return out


class ResNet:
    """Evaluator bound to one configuration.

    Calling it with ``(params, Dual)`` returns a Dual, which is the
    network-evaluator protocol used by :mod:`varsolve.diffengine`.
    """

    def __init__(self, cfg: ResNetConfig):
        self.cfg = cfg

    @property
    def input_dim(self):
        return self.cfg.input_dim

    def __call__(self, params, x: Dual) -> Dual:
        return forward_dual(self.cfg, params, x)

    def init(self, seed):
        return init_params(self.cfg, seed)

    def value(self, params, X):
        X = _check_points(self.cfg, X)
        if isinstance(params, np.ndarray) and len(X) > EVAL_CHUNK:
            return np.concatenate([forward(self.cfg, params, X[i:i + EVAL_CHUNK])
                                   for i in range(0, len(X), EVAL_CHUNK)])
        return forward(self.cfg, params, X)

    def value_and_grad(self, params, X):
        """Values (n,) and input gradients laid out as (d, n)."""
        X = _check_points(self.cfg, X)
        if isinstance(params, np.ndarray) and len(X) > EVAL_CHUNK:
            parts = [self.value_and_grad(params, X[i:i + EVAL_CHUNK])
                     for i in range(0, len(X), EVAL_CHUNK)]
            return (np.concatenate([v for v, _ in parts]),
                    np.concatenate([g for _, g in parts], axis=1))
        out = self(params, Dual.seed(X))
        return out.value, out.tangent


def boundary_factor(x: Dual) -> Dual:
    """prod_i x_i (1 - x_i) as a Dual; vanishes on the boundary of the unit cube."""
    d = np.shape(value_of(x.value))[-1]
    ell = None
    for i in range(d):
        xi = x.component(i)
        term = xi * (1.0 - xi)
        ell = term if ell is None else ell * term
    return ell


class ExactBCNetwork(ResNet):
    """x -> l(x) psi(x), exactly zero on the boundary of (0,1)^d."""

    def __call__(self, params, x: Dual) -> Dual:
        return boundary_factor(x) * forward_dual(self.cfg, params, x)

    def value(self, params, X):
        X = _check_points(self.cfg, X)
        ell = np.prod(X * (1.0 - X), axis=-1)
        return ell * super().value(params, X)


def exact_bc_network(cfg: ResNetConfig, params, x):
    """l(x) psi(x; params) at a point (float) or a batch of points."""
    x = np.asarray(x, dtype=np.float64)
    values = ExactBCNetwork(cfg).value(params, np.atleast_2d(x))
    return float(values[0]) if x.ndim == 1 else values


# -- checkpoints ----------------------------------------------------------------

def _header(cfg, role, seed):
    return (f"{CKPT_MAGIC}; d={cfg.input_dim}; N={cfg.width}; L={cfg.depth}; "
            f"role={role}; seed={seed}")


def _parse_header(line):
    fields = [f.strip() for f in line.split(";")]
    if not fields or fields[0] != CKPT_MAGIC:
        raise ConfigError(f"not a checkpoint file (header {line[:40]!r})")
    meta = {}
    for item in fields[1:]:
        key, _, value = item.partition("=")
        meta[key.strip()] = value.strip()
    try:
        cfg = ResNetConfig(int(meta["d"]), int(meta["N"]), int(meta["L"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed checkpoint header: {line!r}") from exc
    return cfg, meta


def save_checkpoint(path, cfg: ResNetConfig, params, role="primal", seed=0, text=False):
    params = np.asarray(params, dtype=np.float64)
    if params.size != param_count(cfg).total:
        raise ConfigError("parameter vector does not match the configuration")
    header = _header(cfg, role, seed)
    path = Path(path)
    if text:
        body = "\n".join(f"{v:.17g}" for v in params)
        path.write_text(header + "\n" + body + "\n")
        return path
    payload = params.astype("<f8").tobytes()
    crc = np.uint32(zlib.crc32(payload)).astype("<u4").tobytes()
    path.write_bytes(header.encode("ascii") + b"\n" + payload + crc)
    return path


def load_checkpoint(path):
    """Return (cfg, params, meta) from a binary or text checkpoint."""
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ConfigError(f"{path}: missing checkpoint header")
    cfg, meta = _parse_header(raw[:newline].decode("ascii", errors="replace"))
    body = raw[newline + 1:]
    count = param_count(cfg).total
    if len(body) == 8 * count + 4:
        payload, crc = body[:-4], body[-4:]
        if zlib.crc32(payload) != int(np.frombuffer(crc, dtype="<u4")[0]):
            raise ConfigError(f"{path}: checkpoint CRC mismatch")
        params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    else:
        try:
            params = np.array([float(t) for t in body.decode("ascii").split()])
        except (UnicodeDecodeError, ValueError) as exc:
            raise ConfigError(f"{path}: unreadable checkpoint body") from exc
        if params.size != count:
            raise ConfigError(f"{path}: expected {count} values, found {params.size}")
    return cfg, params, meta
