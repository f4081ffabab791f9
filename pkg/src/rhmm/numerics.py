"""Scalar root solving for (psi')^{-1}, weighted Frechet means, quadrature oracles."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from rhmm.errors import BoundaryClampWarning, ConvergenceWarning, DegenerateMeanError
from rhmm.geometry.families import LocationScaleFamily, SpdGaussian, VonMisesFisher
from rhmm.geometry.manifolds import Manifold, PoincareDisk, Sphere


@dataclass(frozen=True)
class RootSolveConfig:
    tol: float = 1e-10
    max_iter: int = 100
    bracket: tuple[float, float] | None = None  # eta interval; defaults to the family's

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class FrechetConfig:
    tol: float = 1e-9
    max_iter: int = 200
    step: float = 1.0  # multiplies the weight-normalized mean tangent vector

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


# -- (psi')^{-1} ------------------------------------------------------------

def _eta_guess(family: LocationScaleFamily, target: float) -> float:
    if isinstance(family, VonMisesFisher):
        r = min(max(-target, 1e-8), 1 - 1e-8)
        kappa = r * (family.d - r * r) / (1 - r * r)
        return -kappa
    # small-sigma regime: E[d^2] ~ dim * sigma^2
    return -family.manifold.dim / (2.0 * max(target, 1e-300))


def inverse_psi_prime(family: LocationScaleFamily, target: float,
                      cfg: RootSolveConfig | None = None) -> float:
    """Solve ``psi'(eta) = target`` for eta in the admissible interval.

    Safeguarded Newton iteration in ``u = log(-eta)`` with a bisection
    fallback. Targets outside the attainable range are clamped to the
    nearest interval end and a :class:`BoundaryClampWarning` is issued.
    """
    cfg = cfg or RootSolveConfig()
    lo_eta, hi_eta = cfg.bracket or family.eta_bounds
    target = float(target)
    f_lo, f_hi = family.psi_prime(lo_eta), family.psi_prime(hi_eta)
    if not target > f_lo:
        if target < f_lo:
            warnings.warn(f"target {target:g} below psi' range; clamped to eta={lo_eta:g}",
                          BoundaryClampWarning, stacklevel=2)
        return float(lo_eta)
    if not target < f_hi:
        if target > f_hi:
            warnings.warn(f"target {target:g} above psi' range; clamped to eta={hi_eta:g}",
                          BoundaryClampWarning, stacklevel=2)
        return float(hi_eta)

    # g(u) = psi'(-e^u) - target is decreasing in u
    ua, ub = math.log(-hi_eta), math.log(-lo_eta)
    u = min(max(math.log(-_eta_guess(family, target)), ua), ub)
    best_u, best_r = u, math.inf
    for _ in range(cfg.max_iter):
        eta = -math.exp(u)
        r = family.psi_prime(eta) - target
        if abs(r) < best_r:
            best_u, best_r = u, abs(r)
        if abs(r) < cfg.tol:
            return eta
        if r > 0:
            ua = u
        else:
            ub = u
        if ub - ua <= 4e-16 * max(1.0, abs(ua), abs(ub)):
            break
        slope = family.psi_second(eta) * eta
        u_new = u - r / slope if slope != 0 else math.nan
        if not (ua < u_new < ub):
            u_new = 0.5 * (ua + ub)
        u = u_new
    return -math.exp(best_u)


@lru_cache(maxsize=32)
def _psi_prime_table(family: LocationScaleFamily, size: int, lo: float, hi: float):
    etas = np.linspace(lo, hi, size)
    return etas, np.asarray(family.psi_prime(etas), dtype=float)


def table_inverse_psi_prime(family: LocationScaleFamily, target: float, table_size: int = 10_000,
                            eta_range: tuple[float, float] = (-50.0, -1e-2)) -> float:
    """(psi')^{-1} by binary search in a precomputed table of psi' values.

    The located cell is refined by linear interpolation, so the answer is
    always within one cell width of the exact root.
    """
    etas, vals = _psi_prime_table(family, int(table_size), float(eta_range[0]), float(eta_range[1]))
    if target <= vals[0]:
        return float(etas[0])
    if target >= vals[-1]:
        return float(etas[-1])
    i = int(np.searchsorted(vals, target))
    w = (target - vals[i - 1]) / (vals[i] - vals[i - 1])
    return float(etas[i - 1] + w * (etas[i] - etas[i - 1]))


# -- weighted Frechet means -------------------------------------------------

def _normalized_weights(weights, n):
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise DegenerateMeanError("total weight is zero")
    return w / total


def _wsum(w, x):
    return np.tensordot(w, x, axes=(0, 0))


def frechet_objective(manifold: Manifold, points, weights, y) -> float:
    """Weight-normalized objective: sum_t w_t D(points_t, y) / sum w."""
    w = _normalized_weights(weights, len(points))
    if isinstance(manifold, Sphere):
        return float(-_wsum(w, points) @ y)
    return float(w @ manifold.dist(y, points) ** 2)


def frechet_gradient_norm(manifold: Manifold, points, weights, y) -> float:
    """Riemannian gradient norm of the weight-normalized squared-distance objective."""
    w = _normalized_weights(weights, len(points))
    m = _wsum(w, manifold.log(y, points))
    return float(2.0 * manifold.norm(y, m))


def weighted_frechet_mean(manifold: Manifold, points, weights, cfg: FrechetConfig | None = None,
                          init=None):
    """Minimize ``sum_t w_t D(points_t, y)`` over the manifold.

    On the sphere ``D = -<y_t, y>`` (von Mises-Fisher) and the minimizer is
    the normalized weighted resultant. On the disk and SPD matrices ``D`` is
    the squared distance and the weighted Riemannian centre of mass is found
    by gradient descent, ``y <- exp_y(step * sum_t w_t log_y(y_t))``, with the
    step halved whenever the objective would increase.
    """
    cfg = cfg or FrechetConfig()
    points = np.asarray(points)
    w = _normalized_weights(weights, len(points))

    if isinstance(manifold, Sphere):
        r = _wsum(w, points)
        n = np.linalg.norm(r)
        if n < 1e-12:
            raise DegenerateMeanError("weighted resultant vanishes (antipodal cancellation)")
        return r / n

    keep = w > 0
    pts, w = points[keep], w[keep]
    if len(pts) == 1:
        return pts[0].copy()
    y = np.asarray(init) if init is not None else _wsum(w, pts)
    f0 = float(w @ manifold.dist(y, pts) ** 2)
    m = _wsum(w, manifold.log(y, pts))
    for _ in range(cfg.max_iter):
        mn = float(manifold.norm(y, m))
        if 2.0 * mn < cfg.tol:
            return y
        step = cfg.step
        while True:
            y_new = manifold.exp(y, step * m)
            f1 = float(w @ manifold.dist(y_new, pts) ** 2)
            m_new = _wsum(w, manifold.log(y_new, pts))
            if abs(f0 - f1) > 1e-13 * max(1.0, f0):
                # sufficient decrease: half the first-order prediction 2 step |m|^2
                ok = f0 - f1 >= step * mn ** 2
            else:
                # objective differences are round-off; require the gradient to shrink
                ok = float(manifold.norm(y_new, m_new)) <= 0.75 * mn
            if ok or step < 1e-8:
                break
            step *= 0.5
        y, f0, m = y_new, f1, m_new
    gnorm = 2.0 * float(manifold.norm(y, _wsum(w, manifold.log(y, pts))))
    if gnorm >= cfg.tol:
        warnings.warn(f"Frechet mean stopped after {cfg.max_iter} iterations "
                      f"with gradient norm {gnorm:.3g}", ConvergenceWarning, stacklevel=2)
    return y


# -- quadrature oracles -----------------------------------------------------

def quadrature_normalizer(family: LocationScaleFamily, sigma: float, resolution: int = 512) -> float:
    """Numerical integral of ``exp[eta(sigma) D(y, base)]`` over the manifold.

    Disk: tensor grid in (geodesic radius, angle) with the area element
    ``4 rho / (1 - rho^2)^2 d rho d theta`` pulled back to the radius.
    Sphere (d = 3): Gauss-Legendre in the polar angle, uniform in azimuth.
    SPD (d = 2): the spectral integral
    ``sqrt(2) pi * int exp(-|r|^2 / 2 sigma^2) sinh(|r1 - r2| / 2) dr``.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    eta = family.eta(sigma)
    m = family.manifold
    nodes, weights = np.polynomial.legendre.leggauss(resolution)
    theta = 2 * np.pi * np.arange(resolution) / resolution
    dtheta = 2 * np.pi / resolution

    if isinstance(m, PoincareDisk):
        rmax = 12.0 * sigma + sigma ** 2
        r = 0.5 * rmax * (nodes + 1)
        wr = 0.5 * rmax * weights
        rho = np.tanh(r / 2)
        one_minus_rho2 = 1.0 / np.cosh(r / 2) ** 2  # rho -> 1 loses 1 - rho^2 in floating point
        drho_dr = 0.5 * one_minus_rho2
        jac = 4 * rho / one_minus_rho2 ** 2 * drho_dr
        # D(z, 0) = r^2 on the circle |z| = tanh(r / 2); the angular grid is kept
        # so the rule stays a genuine 2-D one
        vals = np.exp(eta * r ** 2)[:, None] * np.ones_like(theta)[None, :]
        return float(np.sum(wr[:, None] * jac[:, None] * vals) * dtheta)

    if isinstance(m, Sphere):
        if m.d != 3:
            raise NotImplementedError("sphere quadrature is implemented for d = 3")
        th = 0.5 * np.pi * (nodes + 1)
        wth = 0.5 * np.pi * weights
        y = np.stack([np.cos(th)[:, None] * np.ones_like(theta)[None, :],
                      np.sin(th)[:, None] * np.cos(theta)[None, :],
                      np.sin(th)[:, None] * np.sin(theta)[None, :]], axis=-1)
        vals = np.exp(eta * family.statistic(y, m.base_point()))
        return float(np.sum(wth[:, None] * np.sin(th)[:, None] * vals) * dtheta)

    if isinstance(family, SpdGaussian):
        # rotate to a = (r1 + r2)/sqrt2, b = (r1 - r2)/sqrt2 and fold b > 0
        amax = 12.0 * sigma
        bmax = 12.0 * sigma + sigma ** 2
        a = amax * nodes
        wa = amax * weights
        b = 0.5 * bmax * (nodes + 1)
        wb = 0.5 * bmax * weights
        inner = np.sum(wb * np.exp(-b ** 2 / (2 * sigma ** 2)) * np.sinh(b / np.sqrt(2)))
        outer = np.sum(wa * np.exp(-a ** 2 / (2 * sigma ** 2)))
        return float(np.sqrt(2) * np.pi * 2 * inner * outer)

    raise NotImplementedError(f"no quadrature for {family}")
