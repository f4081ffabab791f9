"""Simulate a two-state field on a small grid and refit it by exact EM."""

import argparse

import numpy as np

from rhmm.geometry import DiskGaussian
from rhmm.mrf import FieldParams, GridGraph, canonical_gauge, field_em_fit
from rhmm.sampling import simulate_field


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--n-em", type=int, default=50)
    args = p.parse_args()

    disk = DiskGaussian()
    grid = GridGraph(args.width, args.height)
    truth = FieldParams([0.0, 0.2], [[0.8, 0.0], [0.0, 0.8]],
                        np.array([-0.4 + 0j, 0.4 + 0j]), [0.3, 0.3], disk)
    states, obs = simulate_field(truth, grid, args.seed)
    start = truth.replace(V=np.zeros(2), J=np.zeros((2, 2)),
                          locations=np.array([-0.1 + 0j, 0.1 + 0j]), sigmas=np.array([0.5, 0.5]))
    res = field_em_fit(start, grid, obs, max_iter=args.n_em)

    print("hidden states:\n", states.reshape(grid.height, grid.width))
    print(f"EM: {res.iterations} iterations, converged={res.converged}")
    print("loglik trace:", np.round(res.loglik_trace[:6], 4), "...", round(res.loglik_trace[-1], 4))
    V, J = canonical_gauge(res.field.V, res.field.J, grid)
    print("V =", np.round(V, 3), "\nJ =\n", np.round(J, 3))
    print("locations:", np.round(res.field.locations, 3), "sigmas:", np.round(res.field.sigmas, 3))
    # nine sites is very little data, so the potentials often run off towards the boundary
    for f in res.flags[:3]:
        print("flag:", f)


if __name__ == "__main__":
    main()
