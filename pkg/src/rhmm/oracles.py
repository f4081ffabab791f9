"""Self-check suites comparing fast code paths against independent oracles.

Each suite returns an :class:`OracleReport` with the largest deviation seen
and whether it stayed inside the suite's tolerance. The same functions back
``rhmm oracle`` and the acceptance tests.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf, logsumexp

from rhmm.geometry.families import DiskGaussian, SpdGaussian, VonMisesFisher
from rhmm.hmm import (
    HmmParams,
    Posteriors,
    bruteforce_posteriors,
    fit_scale,
    m_step,
    posteriors,
    q_function,
)
from rhmm.mrf import (
    FieldParams,
    GridGraph,
    conditional_given_neighbors,
    conditional_given_rest,
    configuration_log_probs,
    enumerate_configurations,
    field_em_fit,
    fit_potentials,
    pair_counts,
    site_counts,
)
from rhmm.numerics import (
    frechet_gradient_norm,
    inverse_psi_prime,
    quadrature_normalizer,
    table_inverse_psi_prime,
    weighted_frechet_mean,
)
from rhmm.sampling import make_rng, simulate_field

SUITES = ("fb-bruteforce", "normalizers", "mstep-optimality", "mrf-exact")


@dataclass
class OracleReport:
    suite: str
    passed: bool
    checks: dict = field(default_factory=dict)  # name -> {"max_dev", "tol", "passed"}

    def add(self, name: str, max_dev: float, tol: float, passed: bool | None = None):
        ok = bool(max_dev <= tol) if passed is None else bool(passed)
        self.checks[name] = {"max_dev": float(max_dev), "tol": float(tol), "passed": ok}
        self.passed = all(c["passed"] for c in self.checks.values())

    def to_json(self) -> dict:
        return asdict(self)


def random_disk_hmm(rng, n_states: int, sigma_range=(0.2, 1.0)) -> HmmParams:
    fam = DiskGaussian()
    S = n_states
    return HmmParams(rng.dirichlet(np.ones(S), size=S), rng.dirichlet(np.ones(S)),
                     fam.manifold.random_point(rng, S, rmax=0.8),
                     rng.uniform(*sigma_range, size=S), fam)


# -- forward-backward vs enumeration -----------------------------------------

def fb_bruteforce(seed: int = 0, n_instances: int = 100, tol: float = 1e-10) -> OracleReport:
    """Normalized recursions against enumeration over all hidden paths (disk family)."""
    rng = make_rng(seed)
    dev_ll = dev_omega = dev_nu = 0.0
    for _ in range(n_instances):
        S = int(rng.integers(2, 4))
        T = int(rng.integers(3, 8))
        params = random_disk_hmm(rng, S)
        obs = params.family.manifold.random_point(rng, T, rmax=0.9)
        fast = posteriors(params, obs)
        slow = bruteforce_posteriors(params, obs)
        dev_ll = max(dev_ll, abs(fast.loglik - slow.loglik))
        dev_omega = max(dev_omega, float(np.max(np.abs(fast.omega - slow.omega))))
        dev_nu = max(dev_nu, float(np.max(np.abs(fast.nu - slow.nu))))
    rep = OracleReport("fb-bruteforce", True)
    rep.add("loglik", dev_ll, tol)
    rep.add("omega", dev_omega, tol)
    rep.add("nu", dev_nu, tol)
    return rep


# -- normalizers ---------------------------------------------------------------

def disk_normalizer_closed_form(sigma: float) -> float:
    """Disk Gaussian normalizer at curvature -1: pi sqrt(2 pi) sigma e^{sigma^2/2} erf(sigma/sqrt2)."""
    return math.pi * math.sqrt(2 * math.pi) * sigma * math.exp(sigma ** 2 / 2) * erf(sigma / math.sqrt(2))


def psi_prime_fd_deviation(family, etas, h: float = 1e-5) -> float:
    dev = 0.0
    for eta in etas:
        fd = (family.log_partition(eta + h) - family.log_partition(eta - h)) / (2 * h)
        dev = max(dev, abs(fd - family.psi_prime(eta)))
    return dev


def normalizers(sigmas=(0.2, 0.5, 1.0), tol_disk: float = 1e-4, tol_sphere: float = 1e-6,
                tol_fd: float = 1e-6) -> OracleReport:
    rep = OracleReport("normalizers", True)
    disk = DiskGaussian()
    dev = 0.0
    for s in sigmas:
        z_closed = math.exp(disk.log_partition(disk.eta(s)))
        dev = max(dev, abs(z_closed - quadrature_normalizer(disk, s, 512)),
                  abs(z_closed - disk_normalizer_closed_form(s)))
    rep.add("disk Z vs quadrature", dev, tol_disk)

    vmf = VonMisesFisher(3)
    dev = 0.0
    for eta in (-0.05, -0.5, -2.0, -10.0, -50.0):
        k = -eta
        dev = max(dev, abs(vmf.log_partition(eta) - math.log(4 * math.pi * math.sinh(k) / k)))
    rep.add("sphere psi vs 4 pi sinh(k)/k", dev, tol_sphere)

    dev = 0.0
    for fam in (disk, vmf, SpdGaussian(2)):
        dev = max(dev, psi_prime_fd_deviation(fam, (-0.1, -0.5, -2.0, -12.5, -50.0)))
    rep.add("psi' vs finite differences", dev, tol_fd)
    return rep


# -- inverse psi' ----------------------------------------------------------------

def inverse_psi_prime_roundtrip(seed: int = 0, n_targets: int = 100, tol: float = 1e-8,
                                table_size: int = 10_000) -> OracleReport:
    rng = make_rng(seed)
    rep = OracleReport("inverse-psi-prime", True)
    lo, hi = -50.0, -1e-2
    cell = (hi - lo) / (table_size - 1)
    worst_rt = worst_tab = 0.0
    for fam in (VonMisesFisher(3), DiskGaussian(), SpdGaussian(2)):
        etas = -np.exp(rng.uniform(math.log(-hi), math.log(-lo), n_targets))
        for eta in etas:
            x = fam.psi_prime(eta)
            eta_hat = inverse_psi_prime(fam, x)
            worst_rt = max(worst_rt, abs(fam.psi_prime(eta_hat) - x))
            worst_tab = max(worst_tab, abs(table_inverse_psi_prime(fam, x, table_size) - eta_hat))
    rep.add("|psi'(inverse(x)) - x|", worst_rt, tol)
    rep.add("table vs Newton (cells)", worst_tab / cell, 1.0)
    return rep


# -- M-step optimality --------------------------------------------------------------

def _perturbations(rng, params: HmmParams, n: int):
    """Random feasible perturbations, one block at a time."""
    m = params.family.manifold
    S = params.n_states
    for _ in range(n):
        lam = 10 ** rng.uniform(-4, -0.5)
        P = (1 - lam) * params.P + lam * rng.dirichlet(np.ones(S), size=S)
        yield "P", params.replace(P=P)
    for _ in range(n):
        a = int(rng.integers(S))
        v = m.random_tangent(rng, params.locations[a])
        v = v / m.norm(params.locations[a], v) * 10 ** rng.uniform(-4, -0.5)
        locs = params.locations.copy()
        locs[a] = m.exp(params.locations[a], v)
        yield "location", params.replace(locations=locs)
    for _ in range(n):
        a = int(rng.integers(S))
        sig = params.sigmas.copy()
        sig[a] *= math.exp(rng.choice([-1, 1]) * 10 ** rng.uniform(-4, -0.5))
        yield "scale", params.replace(sigmas=sig)


def mstep_optimality(seed: int = 0, n_instances: int = 100, n_perturb: int = 50,
                     grad_tol: float = 1e-8) -> OracleReport:
    rng = make_rng(seed)
    rep = OracleReport("mstep-optimality", True)
    worst = {"P": -math.inf, "location": -math.inf, "scale": -math.inf}
    worst_grad = 0.0
    for _ in range(n_instances):
        S = int(rng.integers(2, 4))
        T = int(rng.integers(20, 60))
        fam = DiskGaussian()
        obs = fam.manifold.random_point(rng, T, rmax=0.9)
        omega = rng.dirichlet(np.ones(S), size=T)
        nu = rng.uniform(0.1, 5.0, size=(S, S))
        post = Posteriors(omega=omega, nu=nu, loglik=0.0)
        est, _ = m_step(obs, post, fam)
        logf = est.emission_logpdf(obs)
        q0 = q_function(est, obs, omega, nu, logf)
        for block, pert in _perturbations(rng, est, n_perturb):
            q1 = q_function(pert, obs, omega, nu)
            # positive = perturbation improved Q
            worst[block] = max(worst[block], (q1 - q0) / max(1.0, abs(q0)))
        for a in range(S):
            worst_grad = max(worst_grad, frechet_gradient_norm(fam.manifold, obs, omega[:, a],
                                                               est.locations[a]))
    for block, w in worst.items():
        rep.add(f"relative Q gain, {block} block", max(w, 0.0), 1e-12, passed=w < 1e-12)
    rep.add("disk mean gradient norm", worst_grad, grad_tol)

    vmf = VonMisesFisher(3)
    worst_vmf = 0.0
    for _ in range(n_instances):
        pts = vmf.manifold.random_point(rng, 30)
        w = rng.random(30)
        r = (w / w.sum()) @ pts
        worst_vmf = max(worst_vmf, float(np.max(np.abs(
            weighted_frechet_mean(vmf.manifold, pts, w) - r / np.linalg.norm(r)))))
    rep.add("vMF mean vs normalized resultant", worst_vmf, 0.0)
    return rep


# -- Markov field ------------------------------------------------------------------

def mixture_em(family, obs, weights0, locations0, sigmas0, n_iter: int):
    """Plain i.i.d. mixture EM, written without any field machinery."""
    w, locs, sig = np.array(weights0, float), np.array(locations0), np.array(sigmas0, float)
    S = len(w)
    trace = []
    for _ in range(n_iter):
        logp = np.log(w) + np.stack([family.log_density(obs, locs[a], sig[a]) for a in range(S)], -1)
        norm = logsumexp(logp, axis=1, keepdims=True)
        trace.append(float(norm.sum()))
        r = np.exp(logp - norm)
        w = r.mean(axis=0)
        new_locs = []
        for a in range(S):
            ybar = weighted_frechet_mean(family.manifold, obs, r[:, a], init=locs[a])
            sig[a] = fit_scale(family, obs, r[:, a], ybar)[0]
            new_locs.append(ybar)
        locs = np.stack(new_locs)
    return w, locs, sig, trace


def _two_state_field(rng, family=None) -> FieldParams:
    fam = family or DiskGaussian()
    V = np.array([0.0, rng.normal(scale=0.5)])
    j = rng.normal(scale=0.5, size=3)
    J = np.array([[j[0], j[1]], [j[1], j[2]]])
    locs = np.array([0.3 * rng.normal() + 0.1j, -0.3 + 0.4j * rng.random()])
    return FieldParams(V, J, locs, rng.uniform(0.2, 0.5, 2), fam)


def mrf_exact(seed: int = 0, grids=((2, 2), (3, 3)), n_em: int = 20) -> OracleReport:
    rng = make_rng(seed)
    rep = OracleReport("mrf-exact", True)
    dev_markov = dev_moment = dev_mix = 0.0
    worst_step = math.inf
    for w, h in grids:
        grid = GridGraph(w, h)
        truth = _two_state_field(rng)
        configs = enumerate_configurations(2, grid.n_sites)
        logp = configuration_log_probs(truth, grid, configs)

        # Markov property at every site, for a handful of configurations
        for idx in rng.integers(len(configs), size=8):
            for z in range(grid.n_sites):
                a = conditional_given_rest(truth, grid, configs[idx], z)
                b = conditional_given_neighbors(truth, grid, configs[idx], z, configs, logp)
                dev_markov = max(dev_markov, float(np.max(np.abs(a - b))))

        # moment matching of the potential fit
        p = np.exp(logp)
        omega = p @ site_counts(configs, 2)
        nu = np.einsum("n,nab->ab", p, pair_counts(configs, grid, 2))
        V, J = fit_potentials(omega, nu, grid)
        q = np.exp(configuration_log_probs(truth.replace(V=V, J=J), grid, configs))
        dev_moment = max(dev_moment, float(np.max(np.abs(q @ site_counts(configs, 2) - omega))),
                         float(np.max(np.abs(np.einsum("n,nab->ab", q, pair_counts(configs, grid, 2)) - nu))))

        # field EM monotonicity from a perturbed start
        _, obs = simulate_field(truth, grid, rng)
        start = truth.replace(V=np.zeros(2), J=np.zeros((2, 2)),
                              locations=np.array([0.05 + 0.0j, -0.05 + 0.0j]),
                              sigmas=np.array([0.6, 0.6]))
        res = field_em_fit(start, grid, obs, max_iter=n_em, tol=0.0)
        worst_step = min(worst_step, float(np.min(np.diff(res.loglik_trace))))

        # J frozen at 0 reduces to an i.i.d. mixture
        red = field_em_fit(start, grid, obs, max_iter=n_em, tol=0.0, freeze_J=True)
        wts, locs, sig, _ = mixture_em(start.family, obs, np.full(2, 0.5), start.locations,
                                       start.sigmas, n_em)
        V_mix = np.exp(red.field.V - logsumexp(red.field.V))
        dev_mix = max(dev_mix, float(np.max(np.abs(V_mix - wts))),
                      float(np.max(np.abs(red.field.locations - locs))),
                      float(np.max(np.abs(red.field.sigmas - sig))))
    rep.add("Markov property", dev_markov, 1e-12)
    rep.add("moment matching", dev_moment, 1e-6)
    rep.add("EM loglik decrease", max(0.0, -worst_step), 1e-9)
    rep.add("J=0 reduction vs mixture EM", dev_mix, 1e-8)
    return rep


def run_suite(name: str, seed: int = 0) -> OracleReport:
    if name == "fb-bruteforce":
        return fb_bruteforce(seed)
    if name == "normalizers":
        return normalizers()
    if name == "mstep-optimality":
        return mstep_optimality(seed)
    if name == "mrf-exact":
        return mrf_exact(seed)
    raise ValueError(f"unknown suite {name!r}; expected one of {', '.join(SUITES)}")
