"""Seeded simulation of hidden chains, manifold-valued emissions and tiny fields.

Randomness comes from numpy's counter-based Philox bit generator. Independent
streams for parallel runs are derived with :func:`spawn_rngs`, which uses
``SeedSequence.spawn`` so child streams never overlap.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from rhmm.geometry.families import DiskGaussian, LocationScaleFamily, SpdGaussian, VonMisesFisher
from rhmm.geometry.manifolds import disk_to_unit_spd
from rhmm.hmm import HmmParams

RADIAL_GRID_NODES = 2 ** 14


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an int seed; Generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


# -- hidden chain -----------------------------------------------------------

def sample_chain(params: HmmParams, T: int, seed) -> np.ndarray:
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = make_rng(seed)
    S = params.n_states
    cdf = np.cumsum(params.P, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(T)
    q = np.empty(T, dtype=int)
    q[0] = min(int(np.searchsorted(np.cumsum(params.pi1), u[0], side="right")), S - 1)
    for t in range(1, T):
        q[t] = int(np.searchsorted(cdf[q[t - 1]], u[t], side="right"))
    return q


# -- emissions at the base point ---------------------------------------------

@lru_cache(maxsize=64)
def _disk_radial_grid(sigma: float):
    # density of the geodesic radius: exp(-d^2 / 2 sigma^2) sinh(d)
    dmax = 12.0 * sigma + sigma ** 2
    d = np.linspace(0.0, dmax, RADIAL_GRID_NODES)
    with np.errstate(divide="ignore"):
        logp = -d ** 2 / (2 * sigma ** 2) + d + np.log1p(-np.exp(-2 * d))
    p = np.exp(logp - logp.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(d))])
    return d, cdf / cdf[-1]


def disk_radius_cdf(sigma: float, r):
    """CDF of the geodesic radius of a disk Gaussian centred at 0 (grid-based)."""
    d, cdf = _disk_radial_grid(float(sigma))
    return np.interp(r, d, cdf)


def _disk_at_origin(sigma, size, rng):
    d, cdf = _disk_radial_grid(float(sigma))
    r = np.interp(rng.random(size), cdf, d)
    return np.tanh(r / 2) * np.exp(2j * np.pi * rng.random(size))


def _vmf_at_pole(kappa, d, size, rng):
    # Wood (1994): sample w = <y, e1>, then a uniform direction orthogonal to e1
    b = (d - 1) / (2 * kappa + math.sqrt(4 * kappa ** 2 + (d - 1) ** 2))
    x0 = (1 - b) / (1 + b)
    c = kappa * x0 + (d - 1) * math.log(1 - x0 ** 2)
    w = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        z = rng.beta((d - 1) / 2, (d - 1) / 2, todo.size)
        ww = (1 - (1 + b) * z) / (1 - (1 - b) * z)
        u = rng.random(todo.size)
        ok = kappa * ww + (d - 1) * np.log(1 - x0 * ww) - c >= np.log(u)
        w[todo[ok]] = ww[ok]
        todo = todo[~ok]
    v = rng.standard_normal((size, d - 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    y = np.concatenate([w[:, None], np.sqrt(np.clip(1 - w * w, 0, None))[:, None] * v], axis=1)
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def _spd2_at_identity(sigma, size, rng):
    # P_2 = (det part, line) x (unit-det part, hyperbolic plane with d_spd = sqrt2 d_disk)
    a = rng.normal(scale=sigma, size=size)
    u = disk_to_unit_spd(_disk_at_origin(sigma / math.sqrt(2), size, rng))
    return np.exp(a / math.sqrt(2))[:, None, None] * u


def sample_at_base(family: LocationScaleFamily, sigma: float, size: int, seed):
    """Draws from ``f(. | base point, sigma)``."""
    rng = make_rng(seed)
    family.check_sigma(sigma)
    if isinstance(family, DiskGaussian):
        return _disk_at_origin(sigma, size, rng)
    if isinstance(family, VonMisesFisher):
        return _vmf_at_pole(float(sigma), family.d, size, rng)
    if isinstance(family, SpdGaussian):
        return _spd2_at_identity(sigma, size, rng)
    raise NotImplementedError(f"no sampler for {family}")


def sample_emission(family: LocationScaleFamily, ybar, sigma: float, seed, size: int | None = None):
    """Draw(s) from ``f(. | ybar, sigma)``: sample at the base point, then move by an isometry."""
    n = 1 if size is None else size
    g = family.manifold.isometry_to(ybar)
    y = g.apply(sample_at_base(family, sigma, n, seed))
    return y[0] if size is None else y


def simulate_hmm(params: HmmParams, T: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Hidden path and conditionally independent emissions."""
    rng = make_rng(seed)
    q = sample_chain(params, T, rng)
    m = params.family.manifold
    dtype = complex if m.kind == "disk" else float
    obs = np.empty((T,) + tuple(m.point_shape), dtype=dtype)
    for a in range(params.n_states):
        idx = np.flatnonzero(q == a)
        if idx.size:
            obs[idx] = sample_emission(params.family, params.locations[a], params.sigmas[a],
                                       rng, size=idx.size)
    return q, obs


# -- fields ------------------------------------------------------------------

def sample_field_exact(field, grid, seed, size: int | None = None) -> np.ndarray:
    """Exact draws of a Gibbs field by enumeration and inverse-CDF sampling.

    Returns configurations of shape ``(height, width)`` (or ``(size, height, width)``).
    """
    from rhmm.mrf import configuration_log_probs, enumerate_configurations

    rng = make_rng(seed)
    configs = enumerate_configurations(field.n_states, grid.n_sites)
    p = np.exp(configuration_log_probs(field, grid, configs))
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    n = 1 if size is None else size
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    out = configs[idx].reshape(n, grid.height, grid.width)
    return out[0] if size is None else out


def simulate_field(field, grid, seed) -> tuple[np.ndarray, np.ndarray]:
    """Exact hidden configuration plus emissions, flattened in row-major site order."""
    rng = make_rng(seed)
    q = sample_field_exact(field, grid, rng).ravel()
    m = field.family.manifold
    dtype = complex if m.kind == "disk" else float
    obs = np.empty((len(q),) + tuple(m.point_shape), dtype=dtype)
    for a in range(field.n_states):
        idx = np.flatnonzero(q == a)
        if idx.size:
            obs[idx] = sample_emission(field.family, field.locations[a], field.sigmas[a],
                                       rng, size=idx.size)
    return q, obs
