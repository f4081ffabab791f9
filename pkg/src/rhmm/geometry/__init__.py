"""Manifolds, isometries and location-scale families."""

from rhmm.geometry.families import (
    FAMILIES,
    SIGMA_MAX,
    SIGMA_MIN,
    DiskGaussian,
    LocationScaleFamily,
    SpdGaussian,
    VonMisesFisher,
    family_from_name,
    log_density,
    log_partition,
    psi_prime,
    statistic,
)
from rhmm.geometry.manifolds import (
    SPD,
    Congruence,
    Manifold,
    Mobius,
    Orthogonal,
    PoincareDisk,
    Sphere,
    apply_isometry,
    disk_to_unit_spd,
    isometry_to,
    riemannian_distance,
)

__all__ = [
    "FAMILIES", "SIGMA_MAX", "SIGMA_MIN", "SPD", "Congruence", "DiskGaussian",
    "LocationScaleFamily", "Manifold", "Mobius", "Orthogonal", "PoincareDisk",
    "Sphere", "SpdGaussian", "VonMisesFisher", "apply_isometry", "disk_to_unit_spd",
    "family_from_name", "isometry_to", "log_density", "log_partition", "psi_prime",
    "riemannian_distance", "statistic",
]
