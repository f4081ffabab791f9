"""Scatter data for the face model at its own scales and at 5x the scales.

Writes ``scatter_x1.csv`` and ``scatter_x5.csv`` (columns re, im, state) and
prints the per-state mean distance to the true centre. The growth factor is
compared with the radial law of the disk Gaussian: far from 5 once the scale
is large, because the hyperbolic area element grows like sinh.
"""

import argparse
import csv
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from rhmm.cli import paper_face_preset
from rhmm.sampling import simulate_hmm


def mean_radius(sigma):
    f = lambda r: np.exp(-r * r / (2 * sigma * sigma)) * np.sinh(r)
    top = 12 * sigma + sigma ** 2
    return quad(lambda r: r * f(r), 0, top)[0] / quad(f, 0, top)[0]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    truth = paper_face_preset()
    m = truth.family.manifold
    mean_d = {}
    for factor in (1, 5):
        model = truth.replace(sigmas=truth.sigmas * factor)
        states, obs = simulate_hmm(model, args.T, args.seed)
        with open(args.out / f"scatter_x{factor}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re", "im", "state"])
            w.writerows([repr(y.real), repr(y.imag), int(q) + 1] for y, q in zip(obs, states))
        mean_d[factor] = [float(np.mean(m.dist(truth.locations[a], obs[states == a])))
                          for a in range(truth.n_states)]

    print("state  sigma  mean d (x1)  mean d (x5)  ratio   radial-law ratio")
    for a, s in enumerate(truth.sigmas):
        r = mean_d[5][a] / mean_d[1][a]
        print(f"{a + 1:>5}  {s:.2f}   {mean_d[1][a]:.4f}       {mean_d[5][a]:.4f}       "
              f"{r:.3f}   {mean_radius(5 * s) / mean_radius(s):.3f}")


if __name__ == "__main__":
    main()
