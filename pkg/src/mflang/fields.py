"""Potential fields: batched scalar fields, vector fields, k-body interactions.

Scalar fields evaluate value/gradient/hessian on point batches of shape (N, d).
The built-in catalog (quadratic, quartic, cosine, gaussian-well) applies the 1D
profile coordinate-wise (gaussian-well is radial), which keeps gradients and
hessians closed-form in any dimension.

Convolutions against a weighted support, (W * mu)(x) = sum_j w_j W(x - y_j),
default to a chunked pairwise sum; quadratic and cosine profiles carry exact
separable fast paths (moment resp. angle-addition identities) used by the
particle integrators. A property test pins the fast paths to the pairwise sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Batch = np.ndarray  # (N, d)

# target element count for one pairwise chunk
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class ScalarField:
    """Smooth scalar field on R^d with batched value, gradient and hessian.

    value: (N, d) -> (N,); gradient: (N, d) -> (N, d); hessian: (N, d) -> (N, d, d).
    Optional conv_value / conv_gradient are separable fast paths with signature
    (x: (N, d), pts: (m, d), w: (m,), cache: dict | None) returning the
    convolution value/gradient; the cache memoizes measure moments.
    """

    value: Callable[[Batch], np.ndarray]
    gradient: Callable[[Batch], np.ndarray]
    hessian: Callable[[Batch], np.ndarray]
    name: str = "field"
    conv_value: Optional[Callable] = None
    conv_gradient: Optional[Callable] = None
    meta: Optional[tuple] = None  # structured catalog tag, e.g. ("quadratic", a, b, c)


@dataclass(frozen=True)
class VectorField:
    """Vector field on R^d, batched: apply: (N, d) -> (N, d)."""

    apply: Callable[[Batch], np.ndarray]
    name: str = "vfield"
    meta: Optional[tuple] = None

    def __call__(self, v: Batch) -> np.ndarray:
        return self.apply(v)


@dataclass(frozen=True)
class KBodyField:
    """Symmetric k-body interaction on (R^d)^k.

    value: (N, k, d) -> (N,); grad1 differentiates in the first slot,
    hess12 is the mixed second derivative in the first two slots.
    """

    k: int
    value: Callable[[np.ndarray], np.ndarray]
    grad1: Callable[[np.ndarray], np.ndarray]
    hess12: Callable[[np.ndarray], np.ndarray]
    name: str = "kbody"


# ---------------------------------------------------------------------------
# convolution against a weighted support
# ---------------------------------------------------------------------------

def convolve_value(field: ScalarField, x: Batch, pts: Batch, w: np.ndarray,
                   cache: Optional[dict] = None) -> np.ndarray:
    """(W * mu)(x_i) = sum_j w_j W(x_i - y_j), vectorized over the batch x.

    cache, when given, memoizes the measure moments of separable fast paths
    for the lifetime of the (pts, w) support.
    """
    if field.conv_value is not None:
        return field.conv_value(x, pts, w, cache)
    return _pairwise(field.value, x, pts, w, out_shape=())


def convolve_gradient(field: ScalarField, x: Batch, pts: Batch, w: np.ndarray,
                      cache: Optional[dict] = None) -> np.ndarray:
    """(grad W * mu)(x_i), vectorized over the batch x."""
    if field.conv_gradient is not None:
        return field.conv_gradient(x, pts, w, cache)
    return _pairwise(field.gradient, x, pts, w, out_shape=(x.shape[1],))


def _pairwise(fn, x, pts, w, out_shape):
    n, d = x.shape
    m = pts.shape[0]
    out = np.zeros((n,) + out_shape)
    rows = max(1, _CHUNK_ELEMS // max(m * d, 1))
    for lo in range(0, n, rows):
        xc = x[lo : lo + rows]
        diff = (xc[:, None, :] - pts[None, :, :]).reshape(-1, d)
        vals = fn(diff).reshape((xc.shape[0], m) + out_shape)
        out[lo : lo + rows] = np.tensordot(vals, w, axes=([1], [0]))
    return out


# ---------------------------------------------------------------------------
# scalar catalog
# ---------------------------------------------------------------------------

def quadratic(a: float, b: float = 0.0, c: float = 0.0) -> ScalarField:
    """sum_i (a x_i^2 + b x_i) + c, with an exact separable convolution."""

    def value(x):
        return a * np.sum(x * x, axis=1) + b * np.sum(x, axis=1) + c

    def gradient(x):
        return 2.0 * a * x + b

    def hessian(x):
        n, d = x.shape
        return np.broadcast_to(2.0 * a * np.eye(d), (n, d, d)).copy()

    def moments(pts, w, cache):
        if cache is not None and "quad" in cache:
            return cache["quad"]
        out = (w @ pts, float(w @ np.sum(pts * pts, axis=1)), float(np.sum(w)))
        if cache is not None:
            cache["quad"] = out
        return out

    def conv_value(x, pts, w, cache=None):
        mean, s2, mass = moments(pts, w, cache)
        return (
            a * (mass * np.sum(x * x, axis=1) - 2.0 * x @ mean + s2)
            + b * (mass * np.sum(x, axis=1) - float(np.sum(mean)))
            + c * mass
        )

    def conv_gradient(x, pts, w, cache=None):
        mean, _, mass = moments(pts, w, cache)
        return 2.0 * a * (mass * x - mean) + b * mass

    return ScalarField(value, gradient, hessian, f"quadratic({a},{b},{c})",
                       conv_value, conv_gradient, meta=("quadratic", a, b, c))


def quartic(a: float, b: float = 0.0, c: float = 0.0, d: float = 0.0, e: float = 0.0) -> ScalarField:
    """sum_i (a x_i^4 + b x_i^3 + c x_i^2 + d x_i) + e."""

    def value(x):
        return (a * np.sum(x**4, axis=1) + b * np.sum(x**3, axis=1)
                + c * np.sum(x * x, axis=1) + d * np.sum(x, axis=1) + e)

    def gradient(x):
        return 4.0 * a * x**3 + 3.0 * b * x * x + 2.0 * c * x + d

    def hessian(x):
        n, dim = x.shape
        out = np.zeros((n, dim, dim))
        idx = np.arange(dim)
        out[:, idx, idx] = 12.0 * a * x * x + 6.0 * b * x + 2.0 * c
        return out

    return ScalarField(value, gradient, hessian, f"quartic({a},{b},{c},{d},{e})")


def cosine(eps: float, freq: float = 1.0) -> ScalarField:
    """eps * sum_i cos(freq x_i), with an exact angle-addition convolution."""

    def value(x):
        return eps * np.sum(np.cos(freq * x), axis=1)

    def gradient(x):
        return -eps * freq * np.sin(freq * x)

    def hessian(x):
        n, d = x.shape
        out = np.zeros((n, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = -eps * freq * freq * np.cos(freq * x)
        return out

    # cos(f(x-y)) = cos(fx)cos(fy) + sin(fx)sin(fy); precompute measure moments
    key = f"cos:{freq}"

    def moments(pts, w, cache):
        if cache is not None and key in cache:
            return cache[key]
        cp, sp = np.cos(freq * pts), np.sin(freq * pts)
        out = (cp, sp, w @ cp, w @ sp)
        if cache is not None:
            cache[key] = out
        return out

    def conv_value(x, pts, w, cache=None):
        cp, sp, cm, sm = moments(pts, w, cache)
        cx, sx = (cp, sp) if x is pts else (np.cos(freq * x), np.sin(freq * x))
        return eps * np.sum(cx * cm + sx * sm, axis=1)

    def conv_gradient(x, pts, w, cache=None):
        cp, sp, cm, sm = moments(pts, w, cache)
        cx, sx = (cp, sp) if x is pts else (np.cos(freq * x), np.sin(freq * x))
        return -eps * freq * (sx * cm - cx * sm)

    return ScalarField(value, gradient, hessian, f"cosine({eps},{freq})",
                       conv_value, conv_gradient, meta=("cosine", eps, freq))


def gaussian_well(depth: float, width: float = 1.0) -> ScalarField:
    """-depth * exp(-||x||^2 / (2 width^2)), a smooth radial well."""
    w2 = width * width

    def value(x):
        return -depth * np.exp(-np.sum(x * x, axis=1) / (2.0 * w2))

    def gradient(x):
        g = np.exp(-np.sum(x * x, axis=1) / (2.0 * w2))
        return depth * x * (g / w2)[:, None]

    def hessian(x):
        n, d = x.shape
        g = np.exp(-np.sum(x * x, axis=1) / (2.0 * w2))
        eye = np.broadcast_to(np.eye(d), (n, d, d))
        outer = x[:, :, None] * x[:, None, :]
        return depth * g[:, None, None] * (eye / w2 - outer / (w2 * w2))

    return ScalarField(value, gradient, hessian, f"gaussian-well({depth},{width})")


def zero_field(name: str = "zero") -> ScalarField:
    def value(x):
        return np.zeros(x.shape[0])

    def gradient(x):
        return np.zeros_like(x)

    def hessian(x):
        n, d = x.shape
        return np.zeros((n, d, d))

    def conv_value(x, pts, w, cache=None):
        return np.zeros(x.shape[0])

    def conv_gradient(x, pts, w, cache=None):
        return np.zeros_like(x)

    # the zero field is the degenerate quadratic; lets closed-form flows apply
    return ScalarField(value, gradient, hessian, name, conv_value, conv_gradient,
                       meta=("quadratic", 0.0, 0.0, 0.0))


# ---------------------------------------------------------------------------
# vector catalog (kinetic friction / bounded confinement parts)
# ---------------------------------------------------------------------------

def linear_vector(coeff: float) -> VectorField:
    """v -> coeff * v (Lipschitz |coeff|, monotone coeff)."""
    return VectorField(lambda v: coeff * v, f"linear({coeff})", meta=("linear", coeff))


def sine_vector(amp: float, freq: float = 1.0) -> VectorField:
    """v -> amp * sin(freq v) coordinate-wise (Lipschitz |amp*freq|, bounded)."""
    return VectorField(lambda v: amp * np.sin(freq * v), f"sine({amp},{freq})",
                       meta=("sine", amp, freq))


def zero_vector() -> VectorField:
    return VectorField(np.zeros_like, "zero", meta=("linear", 0.0))


# ---------------------------------------------------------------------------
# k-body constructors
# ---------------------------------------------------------------------------

def pair_interaction(w_field: ScalarField) -> KBodyField:
    """The 2-body field (x, y) -> W(x - y)/2 (granular-media pairing)."""

    def value(xs):
        return 0.5 * w_field.value(xs[:, 0, :] - xs[:, 1, :])

    def grad1(xs):
        return 0.5 * w_field.gradient(xs[:, 0, :] - xs[:, 1, :])

    def hess12(xs):
        return -0.5 * w_field.hessian(xs[:, 0, :] - xs[:, 1, :])

    return KBodyField(2, value, grad1, hess12, f"pair[{w_field.name}]")


def product_interaction(g: ScalarField, k: int) -> KBodyField:
    """The symmetric k-body field (x_1..x_k) -> prod_j g(x_j)."""
    if k < 2:
        raise ValueError(f"k-body interaction needs k >= 2, got {k}")

    def _slot_values(xs):
        n, kk, d = xs.shape
        return g.value(xs.reshape(-1, d)).reshape(n, kk)

    def value(xs):
        return np.prod(_slot_values(xs), axis=1)

    def grad1(xs):
        rest = np.prod(_slot_values(xs)[:, 1:], axis=1)
        return g.gradient(xs[:, 0, :]) * rest[:, None]

    def hess12(xs):
        rest = np.prod(_slot_values(xs)[:, 2:], axis=1) if k > 2 else np.ones(xs.shape[0])
        g1 = g.gradient(xs[:, 0, :])
        g2 = g.gradient(xs[:, 1, :])
        return rest[:, None, None] * (g1[:, :, None] * g2[:, None, :])

    return KBodyField(k, value, grad1, hess12, f"product[{g.name}]^{k}")


# ---------------------------------------------------------------------------
# scalar reshaping helpers
# ---------------------------------------------------------------------------

def probe_points(d: int, count: int = 64, scale: float = 3.0, seed: int = 12345) -> np.ndarray:
    """Deterministic sample points used by construction-time invariant checks."""
    g = np.random.Generator(np.random.Philox(key=[seed, d]))
    return scale * g.standard_normal((count, d))


def as_batch(x, d: int) -> tuple[np.ndarray, bool]:
    """Coerce a single point or a batch to (N, d); returns (batch, was_single).

    For d == 1 a 1D array is read as N scalar points; for d > 1 it must be a
    single length-d vector.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if d != 1:
            raise ValueError(f"scalar point given but the measure lives in d={d}")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if d == 1:
            return arr[:, None], arr.shape[0] == 1
        if arr.shape[0] != d:
            raise ValueError(f"point has length {arr.shape[0]}, expected d={d}")
        return arr[None, :], True
    if arr.shape[1] != d:
        raise ValueError(f"batch has width {arr.shape[1]}, expected d={d}")
    return arr, False
