"""Hidden Markov fields on small square grids, solved by exact enumeration.

The hidden configuration ``q`` has Gibbs law
``p(q) = exp[sum_z V(q_z) + 1/2 sum_z sum_{w~z} J(q_z, q_w)] / W(V, J)``.
Everything here enumerates all ``|S|^{|Z|}`` configurations, so grids are
limited by :data:`ENUMERATION_LIMIT`.

Gauge. Adding a constant to every ``V_a`` or to every ``J_ab`` leaves the
Gibbs law unchanged, and on grids where every site has the same degree
(1x2, 2x2) shifts ``J_ab -> J_ab + c_a + c_b`` with ``V_a -> V_a - deg c_a``
do too. The M-step pins ``V_1 = 0`` and ``J_11 = 0``, then pins ``J_1b = 0``
for whichever ``b`` the graph makes redundant; the remaining coordinates
identify the law uniquely.
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from rhmm.errors import ConvergenceError, ConvergenceWarning, EnumerationLimitError
from rhmm.geometry.families import LocationScaleFamily
from rhmm.hmm import emission_m_step
from rhmm.numerics import FrechetConfig, RootSolveConfig

ENUMERATION_LIMIT = 10 ** 6


@dataclass(frozen=True)
class GridGraph:
    """``width x height`` grid with 4-neighbour adjacency, sites in row-major order."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one site")

    @property
    def n_sites(self) -> int:
        return self.width * self.height

    def site(self, x: int, y: int) -> int:
        return y * self.width + x

    def coords(self, z: int) -> tuple[int, int]:
        return z % self.width, z // self.width

    @cached_property
    def edges(self) -> np.ndarray:
        """Unordered edges ``(z, w)`` with ``z < w``."""
        out = []
        for y in range(self.height):
            for x in range(self.width):
                z = self.site(x, y)
                if x + 1 < self.width:
                    out.append((z, self.site(x + 1, y)))
                if y + 1 < self.height:
                    out.append((z, self.site(x, y + 1)))
        return np.array(out, dtype=int).reshape(-1, 2)

    @cached_property
    def ordered_pairs(self) -> np.ndarray:
        e = self.edges
        return np.concatenate([e, e[:, ::-1]]).reshape(-1, 2)

    def neighbors(self, z: int) -> list[int]:
        e = self.edges
        return sorted(set(e[e[:, 0] == z, 1]) | set(e[e[:, 1] == z, 0]))


@dataclass(frozen=True, eq=False)
class FieldParams:
    V: np.ndarray          # (S,)
    J: np.ndarray          # (S, S), symmetric
    locations: np.ndarray  # (S, *point_shape)
    sigmas: np.ndarray
    family: LocationScaleFamily

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        J = np.array(self.J, dtype=float)
        sig = np.array(self.sigmas, dtype=float)
        S = len(V)
        if J.shape != (S, S) or sig.shape != (S,):
            raise ValueError(f"inconsistent shapes: V {V.shape}, J {J.shape}, sigmas {sig.shape}")
        if np.max(np.abs(J - J.T), initial=0.0) > 1e-12:
            raise ValueError("J must be symmetric")
        self.family.check_sigma(sig)
        locs = self.family.manifold.validate(self.locations, batch=True)
        if len(locs) != S:
            raise ValueError(f"expected {S} locations, got {len(locs)}")
        for name, val in (("V", V), ("J", J), ("locations", locs), ("sigmas", sig)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n_states(self) -> int:
        return len(self.V)

    def replace(self, **changes) -> FieldParams:
        return dataclasses.replace(self, **changes)

    def emission_logpdf(self, obs) -> np.ndarray:
        fam = self.family
        return np.stack([fam.log_density(obs, self.locations[a], self.sigmas[a])
                         for a in range(self.n_states)], axis=-1)


@dataclass
class FieldPosteriors:
    site: np.ndarray   # (n_sites, S): P(q_z = a | y)
    omega: np.ndarray  # (S,): sum over sites
    nu: np.ndarray     # (S, S): sum over ordered adjacent pairs of P(q_z = a, q_w = b | y)
    loglik: float


# -- enumeration ------------------------------------------------------------

def enumerate_configurations(n_states: int, n_sites: int) -> np.ndarray:
    if n_states ** n_sites > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"{n_states}^{n_sites} configurations exceed the limit {ENUMERATION_LIMIT}; "
            "use a smaller grid")
    return np.array(list(itertools.product(range(n_states), repeat=n_sites)),
                    dtype=np.int8 if n_states < 128 else int).reshape(-1, n_sites)


def site_counts(configs, n_states: int) -> np.ndarray:
    """``(N, S)`` number of sites in each state."""
    return np.stack([(configs == a).sum(axis=1) for a in range(n_states)], axis=1).astype(float)


def pair_counts(configs, grid: GridGraph, n_states: int) -> np.ndarray:
    """``(N, S, S)`` counts over ordered adjacent pairs ``(z, w)`` of ``(q_z, q_w)``."""
    N = len(configs)
    out = np.zeros((N, n_states * n_states))
    pairs = grid.ordered_pairs
    if len(pairs):
        idx = configs[:, pairs[:, 0]].astype(int) * n_states + configs[:, pairs[:, 1]]
        rows = np.repeat(np.arange(N), idx.shape[1])
        np.add.at(out, (rows, idx.ravel()), 1.0)
    return out.reshape(N, n_states, n_states)


def gibbs_energy(V, J, configs, grid: GridGraph) -> np.ndarray:
    V, J = np.asarray(V, float), np.asarray(J, float)
    S = len(V)
    return site_counts(configs, S) @ V + 0.5 * np.einsum("nab,ab->n", pair_counts(configs, grid, S), J)


def log_partition_exact(field: FieldParams, grid: GridGraph) -> float:
    """log W(V, J) summed over every configuration."""
    configs = enumerate_configurations(field.n_states, grid.n_sites)
    return float(logsumexp(gibbs_energy(field.V, field.J, configs, grid)))


def configuration_log_probs(field: FieldParams, grid: GridGraph, configs=None) -> np.ndarray:
    if configs is None:
        configs = enumerate_configurations(field.n_states, grid.n_sites)
    e = gibbs_energy(field.V, field.J, configs, grid)
    return e - logsumexp(e)


def _site_emissions(field: FieldParams, configs, logf) -> np.ndarray:
    n = configs.shape[1]
    return logf[np.arange(n), configs.astype(int)].sum(axis=1)


def field_loglik(field: FieldParams, grid: GridGraph, obs) -> float:
    """Exact observed-data log-likelihood ``log sum_q p(q) prod_z f(y_z | q_z)``."""
    configs = enumerate_configurations(field.n_states, grid.n_sites)
    e = gibbs_energy(field.V, field.J, configs, grid)
    emis = _site_emissions(field, configs, field.emission_logpdf(obs))
    return float(logsumexp(e + emis) - logsumexp(e))


def field_posteriors_exact(field: FieldParams, grid: GridGraph, obs) -> FieldPosteriors:
    S, n = field.n_states, grid.n_sites
    if len(obs) != n:
        raise ValueError(f"expected {n} observations, got {len(obs)}")
    configs = enumerate_configurations(S, n)
    e = gibbs_energy(field.V, field.J, configs, grid)
    joint = e + _site_emissions(field, configs, field.emission_logpdf(obs))
    lse = logsumexp(joint)
    p = np.exp(joint - lse)
    site = np.stack([p @ (configs == a) for a in range(S)], axis=1)
    nu = np.einsum("n,nab->ab", p, pair_counts(configs, grid, S))
    return FieldPosteriors(site=site, omega=site.sum(axis=0), nu=nu,
                           loglik=float(lse - logsumexp(e)))


# -- conditionals (Markov property checks) ----------------------------------

def conditional_given_rest(field: FieldParams, grid: GridGraph, config, z: int) -> np.ndarray:
    """``P(q_z = . | q_w, w != z)`` from the joint law."""
    cfg = np.array(config, dtype=int).ravel()
    trial = np.repeat(cfg[None, :], field.n_states, axis=0)
    trial[:, z] = np.arange(field.n_states)
    e = gibbs_energy(field.V, field.J, trial, grid)
    return np.exp(e - logsumexp(e))


def conditional_given_neighbors(field: FieldParams, grid: GridGraph, config, z: int,
                                configs=None, log_probs=None) -> np.ndarray:
    """``P(q_z = . | q_w, w ~ z)`` by marginalizing the joint over all other sites."""
    cfg = np.array(config, dtype=int).ravel()
    if configs is None:
        configs = enumerate_configurations(field.n_states, grid.n_sites)
    if log_probs is None:
        log_probs = configuration_log_probs(field, grid, configs)
    nb = grid.neighbors(z)
    match = np.all(configs[:, nb] == cfg[nb], axis=1) if nb else np.ones(len(configs), bool)
    out = np.array([logsumexp(log_probs[match & (configs[:, z] == a)])
                    for a in range(field.n_states)])
    return np.exp(out - logsumexp(out))


# -- M-step for (V, J) --------------------------------------------------------

def _coordinates(S: int) -> list[tuple]:
    """All (V, J) coordinates in pinning-preference order (last = pinned first)."""
    keep = [("V", a) for a in range(1, S)]
    keep += [("J", a, b) for a in range(1, S) for b in range(a, S)]
    keep += [("J", 0, b) for b in range(1, S)]
    return keep + [("J", 0, 0), ("V", 0)]


def _features(coords, n_counts, m_counts) -> np.ndarray:
    cols = []
    for c in coords:
        if c[0] == "V":
            cols.append(n_counts[..., c[1]])
        elif c[1] == c[2]:
            cols.append(0.5 * m_counts[..., c[1], c[1]])
        else:
            cols.append(m_counts[..., c[1], c[2]])
    return np.stack(cols, axis=-1)


def free_coordinates(grid: GridGraph, n_states: int, freeze_J: bool = False) -> list[tuple]:
    """Coordinates of (V, J) left free by the gauge (see module docstring)."""
    configs = enumerate_configurations(n_states, grid.n_sites)
    coords = _coordinates(n_states)
    if freeze_J:
        coords = [c for c in coords if c[0] == "V"]
    X = _features(coords, site_counts(configs, n_states), pair_counts(configs, grid, n_states))
    X = X - X.mean(axis=0)
    chosen: list[int] = []
    for k in range(len(coords)):
        trial = X[:, chosen + [k]]
        sv = np.linalg.svd(trial, compute_uv=False)
        if sv[-1] > 1e-9 * max(1.0, sv[0]):
            chosen.append(k)
    return [coords[k] for k in chosen]


def _theta_to_VJ(coords, theta, S):
    V = np.zeros(S)
    J = np.zeros((S, S))
    for c, v in zip(coords, theta):
        if c[0] == "V":
            V[c[1]] = v
        else:
            J[c[1], c[2]] = J[c[2], c[1]] = v
    return V, J


def canonical_gauge(V, J, grid: GridGraph, freeze_J: bool = False):
    """Equivalent ``(V, J)`` with the pinned coordinates set to zero."""
    S = len(V)
    coords = free_coordinates(grid, S, freeze_J)
    configs = enumerate_configurations(S, grid.n_sites)
    e = gibbs_energy(V, J, configs, grid)
    X = _features(coords, site_counts(configs, S), pair_counts(configs, grid, S))
    A = np.column_stack([X, np.ones(len(X))])
    theta = np.linalg.lstsq(A, e, rcond=None)[0][:-1]
    return _theta_to_VJ(coords, theta, S)


def gibbs_objective(V, J, omega, nu, grid: GridGraph) -> float:
    """``<omega, V> + 1/2 sum nu_ab J_ab - log W(V, J)``."""
    V, J = np.asarray(V, float), np.asarray(J, float)
    configs = enumerate_configurations(len(V), grid.n_sites)
    return float(omega @ V + 0.5 * np.sum(nu * J)
                 - logsumexp(gibbs_energy(V, J, configs, grid)))


def fit_potentials(omega, nu, grid: GridGraph, V0=None, J0=None, freeze_J: bool = False,
                   tol: float = 1e-8, max_iter: int = 200, boundary_tol: float = 1e-6):
    """Maximize the concave potential objective over the gauge-free coordinates.

    Newton ascent: the gradient is data statistics minus model expectations
    and the Hessian is minus the model covariance, both by enumeration.
    Returns gauge-fixed ``(V, J)``. When no finite maximizer exists and the
    ascent stalls in floating point with gradient norm below ``boundary_tol``,
    the last iterate is returned with a :class:`ConvergenceWarning`.
    """
    omega, nu = np.asarray(omega, float), np.asarray(nu, float)
    S = len(omega)
    coords = free_coordinates(grid, S, freeze_J)
    if not coords:
        # a single state: every configuration has the same energy
        return np.zeros(S), np.zeros((S, S))
    configs = enumerate_configurations(S, grid.n_sites)
    X = _features(coords, site_counts(configs, S), pair_counts(configs, grid, S))
    data = _features(coords, omega, nu)

    if V0 is not None and J0 is not None:
        Vg, Jg = canonical_gauge(V0, J0 if not freeze_J else np.zeros((S, S)), grid, freeze_J)
        theta = np.array([Vg[c[1]] if c[0] == "V" else Jg[c[1], c[2]] for c in coords])
    else:
        theta = np.zeros(len(coords))

    def evaluate(th):
        e = X @ th
        lse = logsumexp(e)
        p = np.exp(e - lse)
        mean = p @ X
        return th @ data - lse, data - mean, p, mean

    f, grad, p, mean = evaluate(theta)
    for _ in range(max_iter):
        if np.linalg.norm(grad) < tol:
            return _theta_to_VJ(coords, theta, S)
        Xc = X - mean
        cov = (Xc * p[:, None]).T @ Xc
        step = np.linalg.solve(cov + 1e-14 * np.eye(len(theta)), grad)
        gnorm = np.linalg.norm(grad)
        t = 1.0
        while True:
            cand = evaluate(theta + t * step)
            if abs(cand[0] - f) > 1e-13 * max(1.0, abs(f)):
                ok = cand[0] > f
            else:
                # objective differences are round-off; require the gradient to shrink
                ok = np.linalg.norm(cand[1]) < gnorm
            if ok or t < 1e-10:
                break
            t *= 0.5
        if not ok:
            break  # no further progress is representable
        theta = theta + t * step
        f, grad, p, mean = cand
    gnorm = float(np.linalg.norm(grad))
    if gnorm < tol:
        return _theta_to_VJ(coords, theta, S)
    if gnorm < boundary_tol:
        # statistics on the edge of the attainable set: the supremum sits at
        # infinite potentials and the objective is flat to round-off here
        warnings.warn(f"potential fit stopped near the boundary with gradient norm {gnorm:.3g}",
                      ConvergenceWarning, stacklevel=2)
        return _theta_to_VJ(coords, theta, S)
    raise ConvergenceError(f"potential fit did not converge: gradient norm {gnorm:.3g}")


def field_m_step(obs, post: FieldPosteriors, grid: GridGraph, family: LocationScaleFamily,
                 frechet_cfg: FrechetConfig | None = None, root_cfg: RootSolveConfig | None = None,
                 previous: FieldParams | None = None, freeze_J: bool = False):
    """Returns ``(FieldParams, flags)``."""
    V0 = previous.V if previous is not None else None
    J0 = previous.J if previous is not None else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        V, J = fit_potentials(post.omega, post.nu, grid, V0, J0, freeze_J=freeze_J)
    boundary = [str(c.message) for c in caught if issubclass(c.category, ConvergenceWarning)]
    prev = (previous.locations, previous.sigmas) if previous is not None else None
    locs, sigmas, flags = emission_m_step(obs, post.site, family, frechet_cfg, root_cfg, prev)
    return FieldParams(V, J, locs, sigmas, family), boundary + flags


@dataclass
class FieldEMResult:
    field: FieldParams
    loglik_trace: list[float]
    iterations: int
    converged: bool
    flags: list[str] = dataclasses.field(default_factory=list)


def field_param_change(old: FieldParams, new: FieldParams) -> float:
    m = old.family.manifold
    return float(max(np.max(np.abs(old.V - new.V)), np.max(np.abs(old.J - new.J)),
                     np.max(m.dist(old.locations, new.locations)),
                     np.max(np.abs(old.sigmas - new.sigmas))))


def field_em_fit(field0: FieldParams, grid: GridGraph, obs, max_iter: int = 100, tol: float = 1e-6,
                 freeze_J: bool = False, frechet_cfg: FrechetConfig | None = None,
                 root_cfg: RootSolveConfig | None = None) -> FieldEMResult:
    """EM for the hidden field with exact E-step and M-step.

    With ``freeze_J`` the pair potentials stay at zero and the model is an
    i.i.d. mixture with weights ``softmax(V)``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    field = field0
    if freeze_J:
        field = field.replace(J=np.zeros_like(field.J))
    trace: list[float] = []
    flags: list[str] = []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        post = field_posteriors_exact(field, grid, obs)
        trace.append(post.loglik)
        new, fl = field_m_step(obs, post, grid, field.family, frechet_cfg, root_cfg,
                               previous=field, freeze_J=freeze_J)
        flags.extend(f"iteration {k}: {f}" for f in fl)
        change = field_param_change(field, new)
        field = new
        if change < tol:
            converged = True
            break
    trace.append(field_loglik(field, grid, obs))
    return FieldEMResult(field, trace, k, converged, flags)
