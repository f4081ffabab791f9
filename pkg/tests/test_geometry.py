import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rhmm.errors import DomainError, ManifoldMismatchError
from rhmm.geometry import (
    SPD,
    DiskGaussian,
    PoincareDisk,
    Sphere,
    SpdGaussian,
    VonMisesFisher,
    disk_to_unit_spd,
    family_from_name,
    isometry_to,
    log_density,
    statistic,
)
from rhmm.geometry.families import SIGMA_MAX, SIGMA_MIN

MANIFOLDS = [Sphere(3), Sphere(5), PoincareDisk(), SPD(2), SPD(3)]
seeds = st.integers(0, 2**32 - 1)


def _points(m, rng, n):
    if isinstance(m, SPD):
        return m.random_point(rng, n, scale=0.7)
    if isinstance(m, PoincareDisk):
        return m.random_point(rng, n, rmax=0.9)
    return m.random_point(rng, n)


# -- distances and maps -----------------------------------------------------

def test_disk_distance_frozen():
    # mpmath: acosh(5/3)^2
    assert DiskGaussian().statistic(0.5, 0.0) == pytest.approx(1.2069489608125819778, abs=1e-14)


def test_disk_distance_matches_acosh_formula(rng):
    m = PoincareDisk()
    y, z = _points(m, rng, 50), _points(m, rng, 50)
    ref = np.arccosh(1 + 2 * np.abs(y - z) ** 2 / ((1 - np.abs(y) ** 2) * (1 - np.abs(z) ** 2)))
    np.testing.assert_allclose(m.dist(y, z), ref, rtol=1e-10, atol=1e-12)


def test_spd_distance_diag():
    m = SPD(2)
    assert m.dist(np.eye(2), np.diag([math.e, 1 / math.e])) == pytest.approx(math.sqrt(2), abs=1e-14)


def test_sphere_distance_is_angle():
    m = Sphere(3)
    assert m.dist(np.array([1.0, 0, 0]), np.array([0, 1.0, 0])) == pytest.approx(math.pi / 2)
    assert m.dist(np.array([1.0, 0, 0]), np.array([-1.0, 0, 0])) == pytest.approx(math.pi)


@pytest.mark.parametrize("m", MANIFOLDS, ids=repr)
@given(seed=seeds)
def test_exp_log_roundtrip(m, seed):
    rng = np.random.default_rng(seed)
    y, x = _points(m, rng, 2)
    if isinstance(m, Sphere) and m.dist(y, x) > 3.0:
        return  # log is ill conditioned near the cut locus
    v = m.log(y, x)
    np.testing.assert_allclose(m.exp(y, v), x, atol=1e-9)
    assert m.norm(y, v) == pytest.approx(m.dist(y, x), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("m", MANIFOLDS, ids=repr)
@given(seed=seeds)
def test_random_isometry_preserves_distance(m, seed):
    rng = np.random.default_rng(seed)
    y, z = _points(m, rng, 2)
    g = m.random_isometry(rng)
    assert m.dist(g.apply(y), g.apply(z)) == pytest.approx(m.dist(y, z), rel=1e-8, abs=1e-10)
    np.testing.assert_allclose(g.inverse().apply(g.apply(y)), y, atol=1e-9)


@pytest.mark.parametrize("m", MANIFOLDS, ids=repr)
def test_isometry_to_moves_base_point(m, rng):
    t = _points(m, rng, 1)[0]
    np.testing.assert_allclose(isometry_to(m, t).apply(m.base_point()), t, atol=1e-12)


@given(seed=seeds)
def test_disk_to_spd_scales_distance(seed):
    rng = np.random.default_rng(seed)
    z = PoincareDisk().random_point(rng, 2, rmax=0.9)
    y = disk_to_unit_spd(z)
    np.testing.assert_allclose(np.linalg.det(y), 1.0, rtol=1e-9)
    assert SPD(2).dist(y[0], y[1]) == pytest.approx(math.sqrt(2) * PoincareDisk().dist(z[0], z[1]),
                                                    rel=1e-8)


def test_disk_to_spd_origin_is_identity():
    np.testing.assert_allclose(disk_to_unit_spd(0j), np.eye(2), atol=1e-15)


# -- validation ---------------------------------------------------------------

@pytest.mark.parametrize("m, bad", [
    (Sphere(3), np.array([1.0, 1.0, 0.0])),
    (Sphere(3), np.array([1.0, 0.0])),
    (PoincareDisk(), 1.0 + 0j),
    (PoincareDisk(), "x"),
    (SPD(2), np.array([[1.0, 2.0], [2.0, 1.0]])),
    (SPD(2), np.array([[1.0, 0.1], [0.0, 1.0]])),
])
def test_validate_rejects(m, bad):
    with pytest.raises(ManifoldMismatchError):
        m.validate(bad)


def test_statistic_checks_both_arguments():
    fam = VonMisesFisher(3)
    with pytest.raises(ManifoldMismatchError):
        statistic(fam, np.array([1.0, 0, 0]), np.array([2.0, 0, 0]))
    with pytest.raises(ManifoldMismatchError):
        statistic(fam, np.array([1.0, 0]), np.array([1.0, 0, 0]))


@pytest.mark.parametrize("fam", [VonMisesFisher(3), DiskGaussian(), SpdGaussian(2)], ids=lambda f: f.name)
def test_sigma_bounds(fam):
    fam.check_sigma(SIGMA_MIN)
    fam.check_sigma(SIGMA_MAX)
    for bad in (0.0, -1.0, SIGMA_MIN / 2, SIGMA_MAX * 2, math.nan):
        with pytest.raises(DomainError):
            fam.check_sigma(bad)


@pytest.mark.parametrize("fam", [VonMisesFisher(3), DiskGaussian(), SpdGaussian(2)], ids=lambda f: f.name)
def test_nonnegative_eta_rejected(fam):
    for eta in (0.0, 1.0):
        with pytest.raises(DomainError):
            fam.log_partition(eta)


def test_family_from_name():
    assert family_from_name("vmf", 4) == VonMisesFisher(4)
    assert isinstance(family_from_name("disk_gaussian"), DiskGaussian)
    with pytest.raises(ValueError):
        family_from_name("cauchy")
    with pytest.raises(NotImplementedError):
        SpdGaussian(3)


# -- log partition, frozen against mpmath ----------------------------------------

@pytest.mark.parametrize("fam, sigma, expected", [
    (DiskGaussian(), 0.5, 0.53560490479850528717),
    (DiskGaussian(), 2.0, 4.7102476873216280618),
    (SpdGaussian(2), 0.7, 1.7691191299060301861),
    (VonMisesFisher(3), 2.5, 3.4148255850857018606),
    (VonMisesFisher(5), 1.3, 3.4354015194770163273),
])
def test_log_partition_frozen(fam, sigma, expected):
    assert fam.log_partition(fam.eta(sigma)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("fam, kappa, expected", [
    (VonMisesFisher(3), 2.5, -0.61356730981260846219),
    (VonMisesFisher(5), 1.3, -0.24831796506612117307),
])
def test_vmf_psi_prime_frozen(fam, kappa, expected):
    assert fam.psi_prime(-kappa) == pytest.approx(expected, abs=1e-13)


def test_sphere_psi_closed_form():
    fam = VonMisesFisher(3)
    for k in (0.01, 0.5, 2.0, 30.0):
        assert fam.log_partition(-k) == pytest.approx(math.log(4 * math.pi * math.sinh(k) / k), abs=1e-10)


@pytest.mark.parametrize("fam", [DiskGaussian(), SpdGaussian(2)], ids=lambda f: f.name)
def test_small_sigma_flat_limit(fam):
    dim = fam.manifold.dim
    gaps = [fam.log_partition(fam.eta(s)) - dim / 2 * math.log(2 * math.pi * s * s) for s in (1e-1, 1e-2, 1e-3)]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert gaps[2] < 1e-6


def test_psi_second_matches_finite_difference(family):
    h = 1e-4
    for eta in (-0.3, -2.0, -20.0):
        fd = (family.psi_prime(eta + h) - family.psi_prime(eta - h)) / (2 * h)
        assert family.psi_second(eta) == pytest.approx(fd, rel=1e-5)
        assert family.psi_second(eta) > 0


def test_log_density_integrates_via_partition():
    fam = DiskGaussian()
    # density at the centre is exp(-psi)
    assert log_density(fam, 0j, 0j, 0.5) == pytest.approx(-0.53560490479850528717, abs=1e-12)
