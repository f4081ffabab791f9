"""Exponential-family location-scale emission densities.

Each family has the form ``f(y | ybar, sigma) = exp[eta(sigma) D(y, ybar) - psi(eta(sigma))]``
with respect to Riemannian volume. All families keep ``eta < 0``; for the
von Mises-Fisher family the sign is absorbed into the statistic, so
``D(y, ybar) = -<y, ybar>`` and ``eta = -kappa`` where the public scale
``sigma`` is the usual concentration ``kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from rhmm.errors import DomainError
from rhmm.geometry.manifolds import SPD, Manifold, PoincareDisk, Sphere

SIGMA_MIN = 1e-4
SIGMA_MAX = 1e4


class LocationScaleFamily:
    """Base class; subclasses define the statistic and the log-partition."""

    name: str = ""
    manifold: Manifold
    sigma_bounds = (SIGMA_MIN, SIGMA_MAX)

    # statistic and natural parameter

    def statistic(self, y, ybar):
        raise NotImplementedError

    def eta(self, sigma):
        raise NotImplementedError

    def sigma_from_eta(self, eta):
        raise NotImplementedError

    @property
    def eta_bounds(self) -> tuple[float, float]:
        a, b = self.eta(self.sigma_bounds[0]), self.eta(self.sigma_bounds[1])
        return (min(a, b), max(a, b))

    # log-partition and derivatives (functions of eta < 0)

    def log_partition(self, eta):
        raise NotImplementedError

    def psi_prime(self, eta):
        raise NotImplementedError

    def psi_second(self, eta):
        raise NotImplementedError

    def _check_eta(self, eta):
        eta = np.asarray(eta, dtype=float)
        if np.any(~(eta < 0)):
            raise DomainError(f"{self.name}: natural parameter must be negative, got {eta}")
        return eta

    def check_sigma(self, sigma):
        lo, hi = self.sigma_bounds
        s = np.asarray(sigma, dtype=float)
        if np.any(~((s >= lo) & (s <= hi))):
            raise DomainError(f"{self.name}: sigma={sigma} outside admissible [{lo:g}, {hi:g}]")
        return s

    def log_density(self, y, ybar, sigma):
        sigma = self.check_sigma(sigma)
        eta = self.eta(sigma)
        return eta * self.statistic(y, ybar) - self.log_partition(eta)


@dataclass(frozen=True)
class VonMisesFisher(LocationScaleFamily):
    d: int = 3
    name = "vmf"

    @property
    def manifold(self):
        return Sphere(self.d)

    @property
    def nu(self):
        return self.d / 2.0

    def statistic(self, y, ybar):
        return -np.sum(np.asarray(y, float) * np.asarray(ybar, float), axis=-1)

    def eta(self, sigma):
        return -np.asarray(sigma, dtype=float) if np.ndim(sigma) else -float(sigma)

    def sigma_from_eta(self, eta):
        return -eta

    def log_partition(self, eta):
        k = -self._check_eta(eta)
        nu = self.nu
        out = (nu * math.log(2 * math.pi) + (1 - nu) * np.log(k)
               + np.log(special.ive(nu - 1, k)) + k)
        return out if np.ndim(out) else float(out)

    def mean_resultant(self, kappa):
        """A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa)."""
        return special.ive(self.nu, kappa) / special.ive(self.nu - 1, kappa)

    def psi_prime(self, eta):
        out = -self.mean_resultant(-self._check_eta(eta))
        return out if np.ndim(out) else float(out)

    def psi_second(self, eta):
        k = -self._check_eta(eta)
        a = self.mean_resultant(k)
        out = 1.0 - a * a - (self.d - 1) * a / k
        return out if np.ndim(out) else float(out)


class _RiemannianGaussian(LocationScaleFamily):
    """``eta = -1 / (2 sigma^2)``, statistic = squared distance.

    ``log Z(sigma) = c0 + p log(sigma) + sigma^2 / q + log erf(sigma / r)``;
    subclasses give the constants.
    """

    _log_c0: float
    _p: float
    _q: float
    _r: float

    def statistic(self, y, ybar):
        return self.manifold.dist(y, ybar) ** 2

    def eta(self, sigma):
        return -0.5 / np.asarray(sigma, dtype=float) ** 2 if np.ndim(sigma) else -0.5 / float(sigma) ** 2

    def sigma_from_eta(self, eta):
        return (-2.0 * eta) ** -0.5

    def log_normalizer(self, sigma):
        """log Z(sigma) = psi(eta(sigma))."""
        s = np.asarray(sigma, dtype=float)
        out = self._log_c0 + self._p * np.log(s) + s * s / self._q + np.log(special.erf(s / self._r))
        return out if np.ndim(out) else float(out)

    def _g(self, s):
        # d/ds log erf(s / r)
        return (2.0 / (math.sqrt(math.pi) * self._r)) * np.exp(-(s / self._r) ** 2) / special.erf(s / self._r)

    def _h(self, s):
        # d/ds log Z
        return self._p / s + 2.0 * s / self._q + self._g(s)

    def log_partition(self, eta):
        return self.log_normalizer(self.sigma_from_eta(self._check_eta(eta)))

    def psi_prime(self, eta):
        s = self.sigma_from_eta(self._check_eta(eta))
        out = s ** 3 * self._h(s)
        return out if np.ndim(out) else float(out)

    def psi_second(self, eta):
        s = self.sigma_from_eta(self._check_eta(eta))
        g = self._g(s)
        dg = -(2.0 * s / self._r ** 2) * g - g * g
        dh = -self._p / s ** 2 + 2.0 / self._q + dg
        out = s ** 3 * (3.0 * s ** 2 * self._h(s) + s ** 3 * dh)
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class DiskGaussian(_RiemannianGaussian):
    """Riemannian Gaussian on the Poincare disk (curvature -1).

    ``Z(sigma) = pi sqrt(2 pi) sigma exp(sigma^2 / 2) erf(sigma / sqrt 2)``,
    i.e. ``2 pi * int_0^inf exp(-r^2 / 2 sigma^2) sinh(r) dr``.
    """

    name = "disk_gaussian"
    _log_c0 = math.log(math.pi * math.sqrt(2 * math.pi))
    _p = 1.0
    _q = 2.0
    _r = math.sqrt(2.0)

    @property
    def manifold(self):
        return PoincareDisk()


@dataclass(frozen=True)
class SpdGaussian(_RiemannianGaussian):
    """Riemannian Gaussian on 2x2 SPD matrices.

    ``P_2`` splits isometrically as a line times a hyperbolic plane of
    curvature -1/2, which gives
    ``Z(sigma) = 2 sqrt(2) pi^2 sigma^2 exp(sigma^2 / 4) erf(sigma / 2)``.
    """

    d: int = 2
    name = "spd_gaussian"
    _log_c0 = math.log(2 * math.sqrt(2) * math.pi ** 2)
    _p = 2.0
    _q = 4.0
    _r = 2.0

    def __post_init__(self):
        if self.d != 2:
            raise NotImplementedError("the SPD Gaussian normalizer is only available for d = 2")

    @property
    def manifold(self):
        return SPD(self.d)


FAMILIES = {"vmf": VonMisesFisher, "disk_gaussian": DiskGaussian, "spd_gaussian": SpdGaussian}


def family_from_name(name: str, dim: int | None = None) -> LocationScaleFamily:
    if name not in FAMILIES:
        raise ValueError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}")
    if name == "disk_gaussian":
        return DiskGaussian()
    return FAMILIES[name](dim) if dim is not None else FAMILIES[name]()


def statistic(family: LocationScaleFamily, y, ybar):
    """D(y, ybar) with manifold checks on both arguments."""
    m = family.manifold
    y = m.validate(y, batch=True)
    ybar = m.validate(ybar, batch=True)
    out = family.statistic(y, ybar)
    return out if np.ndim(out) else float(out)


def log_density(family: LocationScaleFamily, y, ybar, sigma):
    out = family.log_density(y, ybar, sigma)
    return out if np.ndim(out) else float(out)


def log_partition(family: LocationScaleFamily, eta):
    return family.log_partition(eta)


def psi_prime(family: LocationScaleFamily, eta):
    return family.psi_prime(eta)
