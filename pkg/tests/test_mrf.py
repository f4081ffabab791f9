import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from rhmm.errors import ConvergenceError, ConvergenceWarning, EnumerationLimitError
from rhmm.geometry import DiskGaussian, VonMisesFisher
from rhmm.hmm import emission_m_step
from rhmm.mrf import (
    FieldParams,
    GridGraph,
    canonical_gauge,
    conditional_given_neighbors,
    conditional_given_rest,
    configuration_log_probs,
    enumerate_configurations,
    field_em_fit,
    field_loglik,
    field_m_step,
    field_posteriors_exact,
    fit_potentials,
    free_coordinates,
    gibbs_objective,
    log_partition_exact,
    pair_counts,
    site_counts,
)
from rhmm.oracles import mixture_em
from rhmm.sampling import simulate_field

DISK = DiskGaussian()
seeds = st.integers(0, 2**32 - 1)


def _random_field(rng, S=2, family=DISK):
    J = rng.normal(scale=0.7, size=(S, S))
    locs = family.manifold.random_point(rng, S, rmax=0.7) if family is DISK else family.manifold.random_point(rng, S)
    return FieldParams(rng.normal(size=S), J + J.T, locs, rng.uniform(0.2, 0.6, S), family)


def _moments(field, grid):
    configs = enumerate_configurations(field.n_states, grid.n_sites)
    p = np.exp(configuration_log_probs(field, grid, configs))
    return (p @ site_counts(configs, field.n_states),
            np.einsum("n,nab->ab", p, pair_counts(configs, grid, field.n_states)))


# -- grid -----------------------------------------------------------------------

@pytest.mark.parametrize("w, h", [(1, 1), (1, 4), (2, 2), (3, 3), (4, 2)])
def test_grid_structure(w, h):
    g = GridGraph(w, h)
    assert len(g.edges) == (w - 1) * h + w * (h - 1)
    assert np.all(g.edges[:, 0] < g.edges[:, 1])
    assert len(g.ordered_pairs) == 2 * len(g.edges)
    degrees = [len(g.neighbors(z)) for z in range(g.n_sites)]
    if g.n_sites > 2 and w > 1 and h > 1:
        assert min(degrees) == 2 and max(degrees) <= 4
    for z in range(g.n_sites):
        x, y = g.coords(z)
        assert g.site(x, y) == z
        assert z not in g.neighbors(z)


def test_grid_rejects_empty():
    with pytest.raises(ValueError):
        GridGraph(0, 3)


def test_field_params_validation():
    with pytest.raises(ValueError):
        FieldParams([0, 0], [[0, 1], [0, 0]], np.array([0j, 0.1j]), [0.3, 0.3], DISK)
    with pytest.raises(ValueError):
        FieldParams([0, 0, 0], np.zeros((2, 2)), np.array([0j, 0.1j]), [0.3, 0.3], DISK)


def test_enumeration_guard():
    with pytest.raises(EnumerationLimitError):
        enumerate_configurations(3, 13)
    assert enumerate_configurations(2, 3).shape == (8, 3)


# -- partition function -----------------------------------------------------------

def test_partition_factorizes_without_coupling():
    V = np.array([0.3, -0.2, 1.1])
    f = FieldParams(V, np.zeros((3, 3)), np.array([0j, 0.1j, 0.2j]), [0.3] * 3, DISK)
    g = GridGraph(2, 3)
    assert log_partition_exact(f, g) == pytest.approx(6 * logsumexp(V), abs=1e-12)
    assert log_partition_exact(f, GridGraph(1, 1)) == pytest.approx(logsumexp(V), abs=1e-14)


def test_partition_two_sites_by_hand():
    j = 0.7
    f = FieldParams([0, 0], [[j, 0], [0, j]], np.array([0j, 0.1j]), [0.3, 0.3], DISK)
    # W = 2 e^j + 2
    assert log_partition_exact(f, GridGraph(1, 2)) == pytest.approx(1.7963332294454032026, abs=1e-14)


def test_gauge_shift_of_v(rng):
    f = _random_field(rng, S=3)
    g = GridGraph(2, 2)
    c = 0.8
    shifted = f.replace(V=f.V + c)
    assert log_partition_exact(shifted, g) == pytest.approx(log_partition_exact(f, g) + 4 * c, abs=1e-12)
    np.testing.assert_allclose(configuration_log_probs(shifted, g), configuration_log_probs(f, g), atol=1e-12)


def test_positivity(rng):
    f = _random_field(rng, S=3)
    assert np.all(np.isfinite(configuration_log_probs(f, GridGraph(2, 2))))


# -- posteriors -------------------------------------------------------------------

def _loop_posteriors(field, grid, obs):
    """Second enumeration written with explicit loops over edges."""
    S, n = field.n_states, grid.n_sites
    logf = field.emission_logpdf(obs)
    site = np.zeros((n, S))
    nu = np.zeros((S, S))
    energies, weights = [], []
    for q in itertools.product(range(S), repeat=n):
        e = sum(field.V[a] for a in q)
        for z, w in grid.edges:
            e += field.J[q[z], q[w]]  # 1/2 * (J(q_z, q_w) + J(q_w, q_z))
        energies.append(e)
        weights.append(e + sum(logf[z, q[z]] for z in range(n)))
    lse = logsumexp(weights)
    for q, lw in zip(itertools.product(range(S), repeat=n), weights):
        p = math.exp(lw - lse)
        for z in range(n):
            site[z, q[z]] += p
        for z, w in grid.edges:
            nu[q[z], q[w]] += p
            nu[q[w], q[z]] += p
    return site, nu, lse - logsumexp(energies)


@given(seed=seeds)
def test_posteriors_match_loop_enumeration(seed):
    rng = np.random.default_rng(seed)
    f = _random_field(rng, S=int(rng.integers(2, 4)))
    g = GridGraph(2, 2)
    obs = DISK.manifold.random_point(rng, 4, rmax=0.8)
    post = field_posteriors_exact(f, g, obs)
    site, nu, ll = _loop_posteriors(f, g, obs)
    np.testing.assert_allclose(post.site, site, atol=1e-12)
    np.testing.assert_allclose(post.nu, nu, atol=1e-12)
    assert post.loglik == pytest.approx(ll, abs=1e-12)
    np.testing.assert_allclose(post.site.sum(axis=1), 1.0, atol=1e-12)
    assert post.nu.sum() == pytest.approx(2 * len(g.edges), abs=1e-8)
    assert field_loglik(f, g, obs) == pytest.approx(ll, abs=1e-12)


def test_posteriors_factorize_without_coupling(rng):
    f = _random_field(rng, S=3).replace(J=np.zeros((3, 3)))
    g = GridGraph(3, 2)
    obs = DISK.manifold.random_point(rng, 6, rmax=0.8)
    w = f.V + f.emission_logpdf(obs)
    np.testing.assert_allclose(field_posteriors_exact(f, g, obs).site,
                               np.exp(w - logsumexp(w, axis=1, keepdims=True)), atol=1e-12)


def test_symmetric_observation_gives_half():
    f = FieldParams([0, 0], [[0.5, -0.2], [-0.2, 0.5]], np.array([-0.4 + 0j, 0.4 + 0j]), [0.3, 0.3], DISK)
    obs = np.array([0.3j, -0.2j, 0j, 0.5j])
    np.testing.assert_allclose(field_posteriors_exact(f, GridGraph(2, 2), obs).site, 0.5, atol=1e-12)


def test_posteriors_length_check():
    f = FieldParams([0, 0], np.zeros((2, 2)), np.array([0j, 0.1j]), [0.3, 0.3], DISK)
    with pytest.raises(ValueError):
        field_posteriors_exact(f, GridGraph(2, 2), np.zeros(3, complex))


# -- Markov property ------------------------------------------------------------------

def test_markov_property_2x3(rng):
    f = _random_field(rng, S=3)
    g = GridGraph(2, 3)
    configs = enumerate_configurations(3, 6)
    logp = configuration_log_probs(f, g, configs)
    for idx in rng.integers(len(configs), size=20):
        for z in range(6):
            np.testing.assert_allclose(conditional_given_rest(f, g, configs[idx], z),
                                       conditional_given_neighbors(f, g, configs[idx], z, configs, logp),
                                       atol=1e-12)


# -- potential fit ----------------------------------------------------------------------

def test_gauge_matches_pinned_coordinates_on_regular_grids():
    for g in (GridGraph(1, 2), GridGraph(2, 2)):
        free = free_coordinates(g, 3)
        assert ("V", 0) not in free
        assert not any(c[0] == "J" and c[1] == 0 for c in free)
        assert len(free) == 2 + 3


def test_gauge_keeps_identifiable_coordinates_on_irregular_grids():
    free = free_coordinates(GridGraph(3, 3), 2)
    assert ("J", 0, 1) in free and ("V", 0) not in free


@pytest.mark.parametrize("w, h", [(2, 2), (3, 3)])
def test_uniform_statistics_give_zero_potentials(w, h):
    g = GridGraph(w, h)
    S = 3 if g.n_sites <= 4 else 2
    V, J = fit_potentials(np.full(S, g.n_sites / S), np.full((S, S), 2 * len(g.edges) / S ** 2), g)
    np.testing.assert_allclose(V, 0, atol=1e-10)
    np.testing.assert_allclose(J, 0, atol=1e-10)


@pytest.mark.parametrize("w, h", [(2, 2), (2, 3), (3, 3)])
@given(seed=seeds)
def test_moment_matching(w, h, seed):
    rng = np.random.default_rng(seed)
    g = GridGraph(w, h)
    truth = _random_field(rng, S=2)
    omega, nu = _moments(truth, g)
    V, J = fit_potentials(omega, nu, g)
    o2, n2 = _moments(truth.replace(V=V, J=J), g)
    np.testing.assert_allclose(o2, omega, atol=1e-6)
    np.testing.assert_allclose(n2, nu, atol=1e-6)
    np.testing.assert_allclose(np.exp(configuration_log_probs(truth.replace(V=V, J=J), g)),
                               np.exp(configuration_log_probs(truth, g)), atol=1e-6)


def test_canonical_gauge_preserves_law(rng):
    g = GridGraph(2, 2)
    f = _random_field(rng, S=3)
    V, J = canonical_gauge(f.V, f.J, g)
    assert V[0] == 0 and np.all(J[0] == 0)
    np.testing.assert_allclose(configuration_log_probs(f.replace(V=V, J=J), g),
                               configuration_log_probs(f, g), atol=1e-10)


def test_objective_concave_along_segments(rng):
    g = GridGraph(2, 3)
    truth = _random_field(rng, S=2)
    omega, nu = _moments(truth, g)
    for _ in range(20):
        a, b = rng.normal(size=2), rng.normal(size=2)
        a[0] = b[0] = 0.0
        ja, jb = rng.normal(size=3), rng.normal(size=3)
        Ja = np.array([[0, ja[1]], [ja[1], ja[2]]])
        Jb = np.array([[0, jb[1]], [jb[1], jb[2]]])
        ts = np.linspace(0, 1, 15)
        vals = [gibbs_objective((1 - t) * a + t * b, (1 - t) * Ja + t * Jb, omega, nu, g) for t in ts]
        assert np.max(np.diff(vals, 2)) <= 1e-12


def test_emission_update_shared_with_chain(rng):
    g = GridGraph(2, 2)
    f = _random_field(rng, S=2).replace(J=np.zeros((2, 2)))
    obs = DISK.manifold.random_point(rng, 4, rmax=0.8)
    post = field_posteriors_exact(f, g, obs)
    new, _ = field_m_step(obs, post, g, DISK, previous=f)
    locs, sigmas, _ = emission_m_step(obs, post.site, DISK, previous=(f.locations, f.sigmas))
    np.testing.assert_array_equal(new.locations, locs)
    np.testing.assert_array_equal(new.sigmas, sigmas)


# -- field EM -----------------------------------------------------------------------------

def test_single_state_field_em():
    rng = np.random.default_rng(0)
    g = GridGraph(2, 2)
    obs = DISK.manifold.random_point(rng, 4, rmax=0.6)
    f = FieldParams([0.0], [[0.0]], np.array([0.1j]), [0.5], DISK)
    res = field_em_fit(f, g, obs, max_iter=1)
    locs, sigmas, _ = emission_m_step(obs, np.ones((4, 1)), DISK)
    assert DISK.manifold.dist(res.field.locations[0], locs[0]) < 1e-9
    assert res.field.sigmas[0] == pytest.approx(sigmas[0])


def test_field_em_strictly_increases_from_uniform_init():
    rng = np.random.default_rng(4)
    g = GridGraph(3, 3)
    truth = FieldParams([0.0, 0.3], [[0.8, 0.0], [0.0, 0.8]], np.array([-0.4 + 0j, 0.4 + 0j]), [0.3, 0.3], DISK)
    _, obs = simulate_field(truth, g, rng)
    start = truth.replace(V=np.zeros(2), J=np.zeros((2, 2)), locations=np.array([-0.1 + 0j, 0.1 + 0j]),
                          sigmas=np.array([0.5, 0.5]))
    res = field_em_fit(start, g, obs, max_iter=20, tol=0.0)
    steps = np.diff(res.loglik_trace)
    assert np.all(steps[:5] > 0)
    assert np.min(steps) >= -1e-9


def test_frozen_coupling_reduces_to_mixture():
    fam = VonMisesFisher(3)
    rng = np.random.default_rng(8)
    g = GridGraph(3, 3)
    truth = _random_field(rng, S=2, family=fam)
    _, obs = simulate_field(truth, g, rng)
    start = truth.replace(V=np.zeros(2), J=np.zeros((2, 2)))
    red = field_em_fit(start, g, obs, max_iter=15, tol=0.0, freeze_J=True)
    w, locs, sig, trace = mixture_em(fam, obs, [0.5, 0.5], start.locations, start.sigmas, 15)
    np.testing.assert_allclose(np.exp(red.field.V - logsumexp(red.field.V)), w, atol=1e-8)
    np.testing.assert_allclose(red.field.locations, locs, atol=1e-8)
    np.testing.assert_allclose(red.field.sigmas, sig, rtol=1e-8)
    np.testing.assert_allclose(red.loglik_trace[:-1], trace, atol=1e-8)
    np.testing.assert_array_equal(red.field.J, 0.0)


def test_boundary_statistics():
    # no posterior mass on neighbouring (1, 1) pairs: the supremum needs J_11 -> -inf
    g = GridGraph(3, 3)
    omega = np.array([5.2, 3.8])
    nu = np.array([[1.2, 11.4], [11.4, 0.0]])
    V, J = fit_potentials(omega, nu, g)
    assert J[1, 1] < -10
    o2, n2 = _moments(FieldParams(V, J, np.array([0j, 0.1j]), [0.3, 0.3], DISK), g)
    np.testing.assert_allclose(o2, omega, atol=1e-6)
    np.testing.assert_allclose(n2, nu, atol=1e-6)
    # a tolerance below round-off stops at the boundary with a warning, not an error
    with pytest.warns(ConvergenceWarning):
        fit_potentials(omega, nu, g, tol=1e-15)


def test_unconverged_potential_fit_raises():
    g = GridGraph(2, 2)
    truth = FieldParams([0.0, 1.5], [[1.0, -0.5], [-0.5, 2.0]], np.array([0j, 0.1j]), [0.3, 0.3], DISK)
    omega, nu = _moments(truth, g)
    with pytest.raises(ConvergenceError):
        fit_potentials(omega, nu, g, max_iter=1)


def test_field_em_with_near_degenerate_posteriors():
    g = GridGraph(3, 3)
    truth = FieldParams([0.0, 0.2], [[0.8, 0.0], [0.0, 0.8]], np.array([-0.4 + 0j, 0.4 + 0j]), [0.3, 0.3], DISK)
    _, obs = simulate_field(truth, g, 0)
    start = truth.replace(V=np.zeros(2), J=np.zeros((2, 2)), locations=np.array([-0.1 + 0j, 0.1 + 0j]),
                          sigmas=np.array([0.5, 0.5]))
    res = field_em_fit(start, g, obs, max_iter=50)
    assert res.field.J[1, 1] < -10
    assert np.min(np.diff(res.loglik_trace)) >= -1e-9
