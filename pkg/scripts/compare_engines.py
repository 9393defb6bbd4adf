"""Fit the shared-effect model with both samplers and compare posterior means.

    python scripts/compare_engines.py --scenario A.1 --chains 4

Each row is a posterior mean from the Gibbs sampler and from the elliptical
slice sampler, and their difference in units of the combined Monte Carlo
standard error.
"""

import argparse
import math
import time

import numpy as np

from bdlim.model import BdlimData, BdlimSpec
from bdlim.posterior import mcse
from bdlim.samplers import ChainConfig, run_chains
from bdlim.simulation import get_scenario, make_design, simulate_outcome


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", default="A.1")
    ap.add_argument("--chains", type=int, default=4)
    ap.add_argument("--iter", type=int, default=10_000)
    ap.add_argument("--burnin", type=int, default=5_000)
    ap.add_argument("--thin", type=int, default=5)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    sc = get_scenario(args.scenario)
    design = make_design(sc, np.random.default_rng([args.seed, 0]))
    y = simulate_outcome(sc, design.X, design.Z, design.groups,
                         np.random.default_rng([args.seed, 1]))
    data = BdlimData(y, design.scores, design.groups, design.Z, design.basis.column_sums)
    spec = BdlimSpec(pattern="n", n_groups=sc.J, covariate_count=sc.p)
    cfg = ChainConfig(args.iter, args.burnin, args.thin, seed=args.seed, n_chains=args.chains)
    res = {}
    for engine in ("gibbs", "ess"):
        t0 = time.perf_counter()
        chains = run_chains(spec, data, cfg, engine=engine)
        q = {"beta": np.stack([c.beta[:, 0] for c in chains]),
             "sigma2": np.stack([c.sigma2 for c in chains])}
        w = np.stack([c.theta[:, 0] @ design.basis.psi.T for c in chains])
        for t in range(w.shape[2]):
            q[f"w({t + 1})"] = w[:, :, t]
        res[engine] = {k: (v.mean(), mcse(v)) for k, v in q.items()}
        print(f"{engine}: {time.perf_counter() - t0:.1f} s")
    print(f"{'quantity':<10}{'gibbs':>11}{'ess':>11}{'z':>7}")
    for k, (m1, s1) in res["gibbs"].items():
        m2, s2 = res["ess"][k]
        print(f"{k:<10}{m1:>11.5f}{m2:>11.5f}{(m1 - m2) / math.hypot(s1, s2):>7.2f}")


if __name__ == "__main__":
    main()
