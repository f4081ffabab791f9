"""Homogeneous manifolds: the sphere, the Poincare disk and SPD matrices.

Points are plain numpy values and every operation broadcasts over leading
batch dimensions:

* ``Sphere(d)``: real arrays of shape ``(..., d)`` with unit norm.
* ``PoincareDisk()``: complex arrays of shape ``(...)`` with modulus < 1.
  The metric is ``4|dz|^2 / (1 - |z|^2)^2`` (curvature -1).
* ``SPD(d)``: real arrays of shape ``(..., d, d)``, affine-invariant metric
  ``tr[(y^{-1} dy)^2]``.

Tangent vectors use the ambient coordinates of the point (Euclidean vectors
for the sphere, complex numbers for the disk, symmetric matrices for SPD).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rhmm.errors import ManifoldMismatchError

_UNIT_TOL = 1e-12
_SYM_TOL = 1e-12


# -- symmetric matrix functions ---------------------------------------------

def _sym_fn(m, fn):
    w, v = np.linalg.eigh(m)
    return (v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def sym_sqrt(m):
    return _sym_fn(m, np.sqrt)


def sym_invsqrt(m):
    return _sym_fn(m, lambda w: 1.0 / np.sqrt(w))


def sym_logm(m):
    return _sym_fn(m, np.log)


def sym_expm(m):
    return _sym_fn(m, np.exp)


def _symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


# -- isometries -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Orthogonal:
    """Element of O(d) acting on the sphere by ``y -> Q y``."""

    matrix: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.matrix, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ManifoldMismatchError("orthogonal element must be a square matrix")
        if not np.allclose(q.T @ q, np.eye(q.shape[0]), atol=1e-10):
            raise ValueError("matrix is not orthogonal")
        object.__setattr__(self, "matrix", q)

    def apply(self, y):
        return np.asarray(y, dtype=float) @ self.matrix.T

    def inverse(self) -> Orthogonal:
        return Orthogonal(self.matrix.T)


@dataclass(frozen=True)
class Mobius:
    """Disk automorphism ``z -> (a z + b) / (conj(b) z + conj(a))``, |a|^2 - |b|^2 = 1."""

    a: complex
    b: complex

    def __post_init__(self):
        a, b = complex(self.a), complex(self.b)
        if abs(abs(a) ** 2 - abs(b) ** 2 - 1.0) > 1e-10:
            raise ValueError("Mobius parameters must satisfy |a|^2 - |b|^2 = 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def apply(self, z):
        z = np.asarray(z, dtype=complex)
        return (self.a * z + self.b) / (np.conj(self.b) * z + np.conj(self.a))

    def inverse(self) -> Mobius:
        return Mobius(np.conj(self.a), -self.b)


@dataclass(frozen=True, eq=False)
class Congruence:
    """Element of GL(d) acting on SPD matrices by ``y -> g y g^T``."""

    matrix: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.matrix, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ManifoldMismatchError("congruence element must be a square matrix")
        if np.linalg.cond(g) > 1e14:
            raise ValueError("matrix is not invertible")
        object.__setattr__(self, "matrix", g)

    def apply(self, y):
        g = self.matrix
        return _symmetrize(g @ np.asarray(y, dtype=float) @ g.T)

    def inverse(self) -> Congruence:
        return Congruence(np.linalg.inv(self.matrix))


def apply_isometry(g, y):
    """Apply an isometry element to a point (or a batch of points)."""
    return g.apply(y)


# -- manifolds --------------------------------------------------------------

class Manifold:
    kind: str = ""

    # subclasses implement: dist, exp, log, norm, validate, base_point,
    # isometry_to, random_point, random_isometry, random_tangent

    def dist2(self, y, z):
        return self.dist(y, z) ** 2

    def check_same(self, other: Manifold):
        if other != self:
            raise ManifoldMismatchError(f"expected points on {self}, got {other}")


@dataclass(frozen=True)
class Sphere(Manifold):
    d: int = 3
    kind: str = field(default="sphere", init=False, repr=False)

    @property
    def point_shape(self):
        return (self.d,)

    @property
    def dim(self):
        return self.d - 1

    def validate(self, y, batch=False):
        y = np.asarray(y, dtype=float)
        if y.ndim < 1 or y.shape[-1] != self.d or (not batch and y.ndim != 1):
            raise ManifoldMismatchError(f"expected {self.d}-vector(s) on {self}, got shape {y.shape}")
        if np.any(np.abs(np.linalg.norm(y, axis=-1) - 1.0) > _UNIT_TOL):
            raise ManifoldMismatchError("sphere points must have unit norm")
        return y

    def base_point(self):
        e = np.zeros(self.d)
        e[0] = 1.0
        return e

    def dist(self, y, z):
        y, z = np.asarray(y, float), np.asarray(z, float)
        return 2.0 * np.arctan2(np.linalg.norm(y - z, axis=-1), np.linalg.norm(y + z, axis=-1))

    def exp(self, y, v):
        v = np.asarray(v, float)
        theta = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(theta > 0, theta, 1.0)
        out = np.cos(theta) * y + np.sin(theta) * v / safe
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def log(self, y, x):
        y, x = np.asarray(y, float), np.asarray(x, float)
        proj = x - np.sum(x * y, axis=-1, keepdims=True) * y
        pn = np.linalg.norm(proj, axis=-1, keepdims=True)
        theta = self.dist(y, x)[..., None]
        return np.where(pn > 0, theta * proj / np.where(pn > 0, pn, 1.0), 0.0)

    def norm(self, y, v):
        return np.linalg.norm(v, axis=-1)

    def isometry_to(self, target) -> Orthogonal:
        """Rotation in the plane of ``e1`` and ``target`` taking ``e1`` to ``target``."""
        t = self.validate(target)
        u = self.base_point()
        c = float(np.clip(t[0], -1.0, 1.0))
        w = t - c * u
        wn = np.linalg.norm(w)
        if wn < 1e-15:
            if c > 0:
                return Orthogonal(np.eye(self.d))
            w = np.zeros(self.d)
            w[1] = 1.0
        else:
            w = w / wn
        s = np.sqrt(max(0.0, 1.0 - c * c)) if wn >= 1e-15 else 0.0
        r = (np.eye(self.d) + s * (np.outer(w, u) - np.outer(u, w))
             + (c - 1.0) * (np.outer(u, u) + np.outer(w, w)))
        return Orthogonal(r)

    def random_point(self, rng, size=None):
        shape = (() if size is None else np.atleast_1d(size).tolist())
        x = rng.standard_normal(tuple(shape) + (self.d,))
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def random_isometry(self, rng) -> Orthogonal:
        q, r = np.linalg.qr(rng.standard_normal((self.d, self.d)))
        return Orthogonal(q * np.sign(np.diag(r)))

    def random_tangent(self, rng, y):
        v = rng.standard_normal(np.shape(y))
        return v - np.sum(v * y, axis=-1, keepdims=True) * y

    # serialization
    def to_json(self, y):
        return [float(c) for c in np.asarray(y, float)]

    def from_json(self, obj):
        return self.validate(np.asarray(obj, dtype=float))

    def coord_names(self):
        return [f"x{i}" for i in range(self.d)]

    def to_coords(self, y):
        return np.asarray(y, float).reshape(*np.shape(y)[:-1], self.d)

    def from_coords(self, c):
        return np.asarray(c, float)


@dataclass(frozen=True)
class PoincareDisk(Manifold):
    kind: str = field(default="disk", init=False, repr=False)

    point_shape = ()
    dim = 2

    def validate(self, y, batch=False):
        y = np.asarray(y)
        if y.dtype.kind not in "iufc":
            raise ManifoldMismatchError("disk points must be complex numbers")
        if not batch and y.ndim != 0:
            raise ManifoldMismatchError(f"expected a single complex number, got shape {y.shape}")
        y = y.astype(complex)
        if np.any(np.abs(y) >= 1.0):
            raise ManifoldMismatchError("disk points must satisfy |z| < 1")
        return y

    def base_point(self):
        return np.complex128(0.0)

    @staticmethod
    def to_origin(y, x):
        """Mobius map sending ``y`` to 0, applied to ``x``."""
        return (x - y) / (1.0 - np.conj(y) * x)

    @staticmethod
    def from_origin(y, u):
        """Mobius map sending 0 to ``y``, applied to ``u``."""
        return (u + y) / (np.conj(y) * u + 1.0)

    def dist(self, y, z):
        u = np.abs(self.to_origin(np.asarray(y, complex), np.asarray(z, complex)))
        return 2.0 * np.arctanh(np.minimum(u, 1.0))

    def exp(self, y, v):
        y = np.asarray(y, complex)
        v0 = np.asarray(v, complex) / (1.0 - np.abs(y) ** 2)
        r = np.abs(v0)
        u = np.where(r > 0, np.tanh(r) * v0 / np.where(r > 0, r, 1.0), 0.0)
        return self.from_origin(y, u)

    def log(self, y, x):
        y = np.asarray(y, complex)
        u = self.to_origin(y, np.asarray(x, complex))
        r = np.abs(u)
        v0 = np.where(r > 0, np.arctanh(r) * u / np.where(r > 0, r, 1.0), 0.0)
        return (1.0 - np.abs(y) ** 2) * v0

    def norm(self, y, v):
        return 2.0 * np.abs(v) / (1.0 - np.abs(y) ** 2)

    def isometry_to(self, target) -> Mobius:
        w = complex(self.validate(target))
        s = 1.0 / np.sqrt(1.0 - abs(w) ** 2)
        return Mobius(s, w * s)

    def random_point(self, rng, size=None, rmax=0.95):
        r = rmax * np.sqrt(rng.uniform(size=size))
        return r * np.exp(2j * np.pi * rng.uniform(size=size))

    def random_isometry(self, rng) -> Mobius:
        b = complex(*rng.normal(scale=1.5, size=2))
        a = np.exp(1j * rng.uniform(0, 2 * np.pi)) * np.sqrt(1.0 + abs(b) ** 2)
        return Mobius(a, b)

    def random_tangent(self, rng, y):
        shape = np.shape(y)
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    def to_json(self, y):
        y = complex(y)
        return {"re": y.real, "im": y.imag}

    def from_json(self, obj):
        try:
            z = complex(float(obj["re"]), float(obj["im"]))
        except (KeyError, TypeError) as exc:
            raise ManifoldMismatchError(f"disk point must be {{'re', 'im'}}, got {obj!r}") from exc
        return self.validate(z)

    def coord_names(self):
        return ["re", "im"]

    def to_coords(self, y):
        y = np.asarray(y, complex)
        return np.stack([y.real, y.imag], axis=-1)

    def from_coords(self, c):
        c = np.asarray(c, float)
        return c[..., 0] + 1j * c[..., 1]


@dataclass(frozen=True)
class SPD(Manifold):
    d: int = 2
    kind: str = field(default="spd", init=False, repr=False)

    @property
    def point_shape(self):
        return (self.d, self.d)

    @property
    def dim(self):
        return self.d * (self.d + 1) // 2

    def validate(self, y, batch=False):
        y = np.asarray(y, dtype=float)
        if y.ndim < 2 or y.shape[-2:] != (self.d, self.d) or (not batch and y.ndim != 2):
            raise ManifoldMismatchError(f"expected {self.d}x{self.d} matrices, got shape {y.shape}")
        scale = max(1.0, float(np.max(np.abs(y))))
        if np.max(np.abs(y - np.swapaxes(y, -1, -2))) > _SYM_TOL * scale:
            raise ManifoldMismatchError("SPD points must be symmetric")
        if np.any(np.linalg.eigvalsh(y) <= 0):
            raise ManifoldMismatchError("SPD points must be positive definite")
        return y

    def base_point(self):
        return np.eye(self.d)

    def dist(self, y, z):
        a = sym_invsqrt(np.asarray(y, float))
        w = np.linalg.eigvalsh(_symmetrize(a @ np.asarray(z, float) @ a))
        return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))

    def exp(self, y, v):
        s, si = sym_sqrt(y), sym_invsqrt(y)
        return _symmetrize(s @ sym_expm(_symmetrize(si @ v @ si)) @ s)

    def log(self, y, x):
        s, si = sym_sqrt(y), sym_invsqrt(y)
        return _symmetrize(s @ sym_logm(_symmetrize(si @ x @ si)) @ s)

    def norm(self, y, v):
        si = sym_invsqrt(y)
        return np.linalg.norm(si @ v @ si, axis=(-2, -1))

    def isometry_to(self, target) -> Congruence:
        return Congruence(sym_sqrt(self.validate(target)))

    def random_point(self, rng, size=None, scale=1.0):
        shape = () if size is None else tuple(np.atleast_1d(size).tolist())
        a = rng.normal(scale=scale, size=shape + (self.d, self.d))
        return sym_expm(_symmetrize(a))

    def random_isometry(self, rng) -> Congruence:
        return Congruence(rng.standard_normal((self.d, self.d)) + 0.5 * np.eye(self.d))

    def random_tangent(self, rng, y):
        return _symmetrize(rng.standard_normal(np.shape(y)))

    def to_json(self, y):
        return np.asarray(y, float).tolist()

    def from_json(self, obj):
        return self.validate(np.asarray(obj, dtype=float))

    def coord_names(self):
        return [f"y{i}{j}" for i in range(self.d) for j in range(self.d)]

    def to_coords(self, y):
        y = np.asarray(y, float)
        return y.reshape(*y.shape[:-2], self.d * self.d)

    def from_coords(self, c):
        c = np.asarray(c, float)
        return c.reshape(*c.shape[:-1], self.d, self.d)


def riemannian_distance(manifold: Manifold, y, z):
    """Geodesic distance between (batches of) points on ``manifold``."""
    return manifold.dist(y, z)


def isometry_to(manifold: Manifold, target):
    """Isometry taking the manifold's base point to ``target``."""
    return manifold.isometry_to(target)


def disk_to_unit_spd(z):
    """Map Poincare-disk points to 2x2 unit-determinant SPD matrices.

    Goes through the upper half-plane ``tau = i (1 + z) / (1 - z)``; the image
    of 0 is the identity. Distances scale by sqrt(2): d_spd = sqrt(2) d_disk.
    """
    z = np.asarray(z, complex)
    tau = 1j * (1.0 + z) / (1.0 - z)
    x, h = tau.real, tau.imag
    out = np.empty(z.shape + (2, 2))
    out[..., 0, 0] = (x * x + h * h) / h
    out[..., 0, 1] = out[..., 1, 0] = x / h
    out[..., 1, 1] = 1.0 / h
    return out
