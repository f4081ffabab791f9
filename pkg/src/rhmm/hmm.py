"""Hidden Markov chains with manifold-valued emissions.

The E-step uses Levinson's normalized forward-backward recursions: ``phi[t]``
is the filtering distribution ``P(q_t | y_1..y_t)``, ``B[t]`` the rescaled
backward variable, and ``log_norm[t]`` the log of the normalizer that turns
the predicted-times-emission vector at time ``t`` into ``phi[t]`` (with
``log_norm[0]`` the normalizer of the initial step). Summing ``log_norm``
gives the observed-data log-likelihood.
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from rhmm.errors import (
    BoundaryClampWarning,
    DomainError,
    EnumerationLimitError,
    NumericalDegeneracyError,
)
from rhmm.geometry.families import LocationScaleFamily
from rhmm.numerics import (
    FrechetConfig,
    RootSolveConfig,
    inverse_psi_prime,
    weighted_frechet_mean,
)

ENUMERATION_LIMIT = 10 ** 6


@dataclass(frozen=True, eq=False)
class HmmParams:
    P: np.ndarray
    pi1: np.ndarray
    locations: np.ndarray  # (S, *point_shape)
    sigmas: np.ndarray
    family: LocationScaleFamily

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        pi1 = np.array(self.pi1, dtype=float)
        sig = np.array(self.sigmas, dtype=float)
        S = len(pi1)
        if P.shape != (S, S) or sig.shape != (S,):
            raise ValueError(f"inconsistent shapes: P {P.shape}, pi1 {pi1.shape}, sigmas {sig.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("rows of P must be probability vectors")
        if np.any(pi1 < 0) or abs(pi1.sum() - 1.0) > 1e-12:
            raise ValueError("pi1 must be a probability vector")
        self.family.check_sigma(sig)
        m = self.family.manifold
        locs = m.validate(self.locations, batch=True)
        if len(locs) != S:
            raise ValueError(f"expected {S} locations, got {len(locs)}")
        for name, val in (("P", P), ("pi1", pi1), ("locations", locs), ("sigmas", sig)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n_states(self) -> int:
        return len(self.pi1)

    def replace(self, **changes) -> HmmParams:
        return dataclasses.replace(self, **changes)

    def permute(self, perm) -> HmmParams:
        perm = np.asarray(perm)
        return self.replace(P=self.P[np.ix_(perm, perm)], pi1=self.pi1[perm],
                            locations=self.locations[perm], sigmas=self.sigmas[perm])

    def emission_logpdf(self, obs) -> np.ndarray:
        """``(T, S)`` matrix of ``log f(y_t | ybar_a, sigma_a)``."""
        fam = self.family
        return np.stack([fam.log_density(obs, self.locations[a], self.sigmas[a])
                         for a in range(self.n_states)], axis=-1)


@dataclass
class FbCache:
    phi: np.ndarray       # (T, S) filtering distributions
    log_norm: np.ndarray  # (T,) log normalizers, index 0 is the initial one
    loglik: float
    backward: np.ndarray | None = None  # (T, S)


@dataclass
class Posteriors:
    omega: np.ndarray  # (T, S) smoothed state probabilities
    nu: np.ndarray     # (S, S) expected transition counts
    loglik: float


@dataclass
class CompleteData:
    states: np.ndarray
    obs: np.ndarray

    def transition_counts(self, n_states: int) -> np.ndarray:
        q = np.asarray(self.states)
        N = np.zeros((n_states, n_states))
        np.add.at(N, (q[:-1], q[1:]), 1.0)
        return N


# -- forward-backward -------------------------------------------------------

def forward_pass(params: HmmParams, obs, logf=None) -> FbCache:
    logf = params.emission_logpdf(obs) if logf is None else logf
    T, S = logf.shape
    shift = np.max(logf, axis=1)
    if not np.all(np.isfinite(shift)):
        t = int(np.argmin(np.isfinite(shift)))
        raise NumericalDegeneracyError(f"all emission densities vanish at t={t}", t=t)
    F = np.exp(logf - shift[:, None])
    P = params.P
    phi = np.empty((T, S))
    log_norm = np.empty(T)

    a = params.pi1 * F[0]
    for t in range(T):
        if t > 0:
            a = (phi[t - 1] @ P) * F[t]
        c = a.sum()
        if not (c > 0 and np.isfinite(c)):
            raise NumericalDegeneracyError(f"forward normalizer vanished at t={t}", t=t)
        phi[t] = a / c
        log_norm[t] = np.log(c) + shift[t]
    return FbCache(phi=phi, log_norm=log_norm, loglik=float(log_norm.sum()))


def backward_pass(params: HmmParams, obs, log_norm, logf=None) -> np.ndarray:
    logf = params.emission_logpdf(obs) if logf is None else logf
    T, S = logf.shape
    log_norm = np.asarray(log_norm)
    if log_norm.shape != (T,):
        raise ValueError(f"expected {T} normalizers, got {log_norm.shape}")
    G = np.exp(logf - log_norm[:, None])
    P = params.P
    B = np.empty((T, S))
    B[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        B[t] = P @ (B[t + 1] * G[t + 1])
    return B


def forward_backward(params: HmmParams, obs, logf=None) -> FbCache:
    logf = params.emission_logpdf(obs) if logf is None else logf
    fb = forward_pass(params, obs, logf)
    fb.backward = backward_pass(params, obs, fb.log_norm, logf)
    return fb


def posteriors(params: HmmParams, obs, logf=None) -> Posteriors:
    logf = params.emission_logpdf(obs) if logf is None else logf
    fb = forward_backward(params, obs, logf)
    phi, B = fb.phi, fb.backward
    omega = phi * B
    if len(phi) > 1:
        G = np.exp(logf[1:] - fb.log_norm[1:, None])
        nu = params.P * (phi[:-1].T @ (G * B[1:]))
    else:
        nu = np.zeros_like(params.P)
    return Posteriors(omega=omega, nu=nu, loglik=fb.loglik)


# -- M-step -----------------------------------------------------------------

def q_function(params: HmmParams, obs, omega, nu, logf=None) -> float:
    """Expected complete-data log-likelihood (initial-state term excluded)."""
    logf = params.emission_logpdf(obs) if logf is None else logf
    with np.errstate(divide="ignore"):
        logP = np.log(params.P)
    mask = nu > 0
    trans = np.sum(nu[mask] * logP[mask])
    return float(trans + np.sum(omega * logf))


def fit_scale(family: LocationScaleFamily, obs, weights, location,
              root_cfg: RootSolveConfig | None = None) -> tuple[float, bool]:
    """Scale maximizing the weighted log-likelihood at a fixed location.

    Returns ``(sigma, clamped)``.
    """
    w = np.asarray(weights, dtype=float)
    target = float(w @ family.statistic(obs, location) / w.sum())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BoundaryClampWarning)
        eta = inverse_psi_prime(family, target, root_cfg)
    clamped = any(issubclass(c.category, BoundaryClampWarning) for c in caught)
    lo, hi = family.sigma_bounds
    return float(np.clip(family.sigma_from_eta(eta), lo, hi)), clamped


def emission_m_step(obs, omega, family: LocationScaleFamily,
                    frechet_cfg: FrechetConfig | None = None,
                    root_cfg: RootSolveConfig | None = None,
                    previous: tuple[np.ndarray, np.ndarray] | None = None):
    """Per-state weighted Frechet mean and scale; ``omega`` is ``(n_obs, S)``.

    ``previous = (locations, sigmas)`` is the fallback for states with no
    weight and the warm start for the Frechet iterations.
    Returns ``(locations, sigmas, flags)``.
    """
    S = omega.shape[1]
    flags: list[str] = []
    locs, sigmas = [], []
    for a in range(S):
        w = omega[:, a]
        if w.sum() < 1e-12:
            if previous is None:
                raise DomainError(f"state {a} has no posterior weight and no previous value")
            locs.append(previous[0][a])
            sigmas.append(previous[1][a])
            flags.append(f"empty state {a}: kept previous location and scale")
            continue
        init = previous[0][a] if previous is not None else None
        ybar = weighted_frechet_mean(family.manifold, obs, w, frechet_cfg, init=init)
        sigma, clamped = fit_scale(family, obs, w, ybar, root_cfg)
        if clamped:
            flags.append(f"state {a}: scale clamped to admissible boundary")
        locs.append(ybar)
        sigmas.append(sigma)
    return np.stack(locs), np.array(sigmas), flags


def m_step(obs, post: Posteriors, family: LocationScaleFamily,
           frechet_cfg: FrechetConfig | None = None, root_cfg: RootSolveConfig | None = None,
           previous: HmmParams | None = None) -> tuple[HmmParams, list[str]]:
    """Closed-form transition update, weighted Frechet means, scale root-solve.

    ``previous`` supplies fallbacks for states without posterior weight and
    for all-zero rows of ``nu``, and warm-starts the Frechet iterations.
    Returns the new parameters and a list of human-readable flags.
    """
    omega, nu = post.omega, post.nu
    S = omega.shape[1]
    flags: list[str] = []

    rows = nu.sum(axis=1)
    P = np.empty((S, S))
    for a in range(S):
        if rows[a] > 0:
            P[a] = nu[a] / rows[a]
        else:
            P[a] = previous.P[a] if previous is not None else np.full(S, 1.0 / S)
            flags.append(f"empty transition row {a}: kept previous")
    pi1 = omega[0] / omega[0].sum()

    prev = (previous.locations, previous.sigmas) if previous is not None else None
    locs, sigmas, fl = emission_m_step(obs, omega, family, frechet_cfg, root_cfg, prev)
    return HmmParams(P, pi1, locs, sigmas, family), flags + fl


# -- EM driver --------------------------------------------------------------

@dataclass
class EMResult:
    params: HmmParams
    loglik_trace: list[float]
    iterations: int
    converged: bool
    flags: list[str] = field(default_factory=list)


def param_change(old: HmmParams, new: HmmParams) -> float:
    """Max over blocks: transition entries, location distances, scales."""
    m = old.family.manifold
    return float(max(np.max(np.abs(old.P - new.P)),
                     np.max(m.dist(old.locations, new.locations)),
                     np.max(np.abs(old.sigmas - new.sigmas))))


def em_fit(params0: HmmParams, obs, max_iter: int = 300, tol: float = 1e-6,
           frechet_cfg: FrechetConfig | None = None,
           root_cfg: RootSolveConfig | None = None) -> EMResult:
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    params = params0
    trace: list[float] = []
    flags: list[str] = []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        try:
            post = posteriors(params, obs)
        except NumericalDegeneracyError as exc:
            raise NumericalDegeneracyError(f"iteration {k}: {exc}", t=exc.t, iteration=k) from exc
        trace.append(post.loglik)
        new, fl = m_step(obs, post, params.family, frechet_cfg, root_cfg, previous=params)
        flags.extend(f"iteration {k}: {f}" for f in fl)
        change = param_change(params, new)
        params = new
        if change < tol:
            converged = True
            break
    trace.append(forward_pass(params, obs).loglik)
    return EMResult(params, trace, k, converged, flags)


def default_init(family: LocationScaleFamily, obs, n_states: int, seed=0,
                 frechet_cfg: FrechetConfig | None = None) -> HmmParams:
    """Uniform P and pi1; locations and scales fitted to a random partition."""
    rng = np.random.default_rng(seed)
    T = len(obs)
    labels = rng.permutation(np.arange(T) % n_states)
    locs, sigmas = [], []
    for a in range(n_states):
        w = (labels == a).astype(float)
        ybar = weighted_frechet_mean(family.manifold, obs, w, frechet_cfg)
        sigma, _ = fit_scale(family, obs, w, ybar)
        locs.append(ybar)
        sigmas.append(sigma)
    S = n_states
    return HmmParams(np.full((S, S), 1.0 / S), np.full(S, 1.0 / S),
                     np.stack(locs), np.array(sigmas), family)


def screened_init(family: LocationScaleFamily, obs, n_states: int, seed=0, n_candidates: int = 8,
                  n_screen: int = 20, frechet_cfg: FrechetConfig | None = None) -> HmmParams:
    """Best of several :func:`default_init` candidates.

    Candidate ``k`` uses seed ``seed + k``; each is run for ``n_screen`` EM
    iterations on ``obs`` and the candidate (not the EM result) whose run
    reached the highest log-likelihood is returned.
    """
    best, best_ll = None, -np.inf
    for k in range(n_candidates):
        cand = default_init(family, obs, n_states, seed=seed + k, frechet_cfg=frechet_cfg)
        try:
            ll = em_fit(cand, obs, max_iter=n_screen, tol=0.0, frechet_cfg=frechet_cfg).loglik_trace[-1]
        except NumericalDegeneracyError:
            continue
        if ll > best_ll:
            best, best_ll = cand, ll
    if best is None:
        raise NumericalDegeneracyError("every initial candidate degenerated during screening")
    return best


def align_labels(params: HmmParams, reference_locations) -> tuple[HmmParams, np.ndarray]:
    """Relabel states to minimize total distance to reference locations.

    Returns the permuted parameters and ``perm`` with
    ``aligned.locations[i] = params.locations[perm[i]]``.
    """
    m = params.family.manifold
    ref = np.asarray(reference_locations)
    cost = np.array([[float(m.dist(r, l)) for l in params.locations] for r in ref])
    _, perm = linear_sum_assignment(cost)
    return params.permute(perm), perm


# -- oracles ----------------------------------------------------------------

def _enumerate_paths(S: int, T: int) -> np.ndarray:
    if S ** T > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"{S}^{T} paths exceed the enumeration limit {ENUMERATION_LIMIT}")
    return np.array(list(itertools.product(range(S), repeat=T)), dtype=int).reshape(-1, T)


def _path_logjoint(params: HmmParams, logf, paths):
    T = paths.shape[1]
    with np.errstate(divide="ignore"):
        logP, logpi = np.log(params.P), np.log(params.pi1)
    lj = logpi[paths[:, 0]] + logf[np.arange(T), paths].sum(axis=1)
    if T > 1:
        lj = lj + logP[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    return lj


def bruteforce_loglik(params: HmmParams, obs) -> float:
    """Observed-data log-likelihood by summing over every hidden path."""
    logf = params.emission_logpdf(obs)
    paths = _enumerate_paths(params.n_states, len(logf))
    return float(logsumexp(_path_logjoint(params, logf, paths)))


def bruteforce_posteriors(params: HmmParams, obs) -> Posteriors:
    logf = params.emission_logpdf(obs)
    T, S = logf.shape
    paths = _enumerate_paths(S, T)
    lj = _path_logjoint(params, logf, paths)
    ll = float(logsumexp(lj))
    p = np.exp(lj - ll)
    omega = np.zeros((T, S))
    for t in range(T):
        np.add.at(omega[t], paths[:, t], p)
    nu = np.zeros((S, S))
    for t in range(T - 1):
        np.add.at(nu, (paths[:, t], paths[:, t + 1]), p)
    return Posteriors(omega=omega, nu=nu, loglik=ll)


def complete_loglik(params: HmmParams, data: CompleteData) -> float:
    """Complete-data log-likelihood without the initial-state term.

    A zero transition probability on an observed transition gives ``-inf``.
    """
    q = np.asarray(data.states)
    N = data.transition_counts(params.n_states)
    with np.errstate(divide="ignore"):
        logP = np.log(params.P)
    mask = N > 0
    trans = float(np.sum(N[mask] * logP[mask]))
    logf = params.emission_logpdf(data.obs)
    return trans + float(logf[np.arange(len(q)), q].sum())
