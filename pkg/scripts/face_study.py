"""Monte-Carlo study on the three-state face model.

Desk scale by default (5 runs x 300 iterations). ``--full`` uses 20 runs x
1000 iterations, which takes hours on one core.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from rhmm.cli import mc_study, paper_face_preset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--n-mc", type=int, default=5)
    p.add_argument("--n-em", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--full", action="store_true", help="20 runs x 1000 iterations")
    p.add_argument("--out", type=Path, default=Path("results/face_study.json"))
    args = p.parse_args()
    n_mc, n_em = (20, 1000) if args.full else (args.n_mc, args.n_em)

    truth = paper_face_preset()
    t0 = time.perf_counter()
    s = mc_study(truth, args.T, n_mc, n_em, 1e-6, args.seed, workers=args.workers)
    secs = time.perf_counter() - t0

    print(f"{n_mc} runs, T={args.T}, {secs:.0f} s, {s['n_failed']} failed")
    print("state  truth            E_mc location     dist     sigma  E_mc sigma")
    for a in range(truth.n_states):
        loc = s["E_mc"]["locations"][a]
        print(f"{a + 1:>5}  {truth.locations[a]:<15.3f}  {complex(loc['re'], loc['im']):<15.3f}  "
              f"{s['location_error'][a]:.4f}   {truth.sigmas[a]:.2f}   {s['E_mc']['sigmas'][a]:.4f}")
    print("E_mc(P) =\n", np.round(np.array(s["E_mc"]["P"]), 4))
    print("max V_mc:", s["max_V_mc"])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(s, indent=2) + "\n")


if __name__ == "__main__":
    main()
