"""Compare GIG sample moments with numerically integrated moments.

    python scripts/check_gig.py --draws 100000

Prints the relative error of the sample mean and variance for each
``(lam, chi, psi)`` together with its standard error, so a miss can be read
as noise or bias.
"""

import argparse
import math

import numpy as np
from scipy import stats

from bdlim.gig import sample_gig


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--draws", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    n = args.draws
    print(f"{'lam':>5}{'chi':>5}{'psi':>5}{'mean err':>10}{'SE':>8}{'var err':>10}{'SE':>8}")
    for lam in (-0.5, -2.0, 1.0):
        for chi in (0.5, 4.0):
            for psi in (1.0, 3.0):
                ref = stats.geninvgauss(lam, math.sqrt(chi * psi), scale=math.sqrt(chi / psi))
                mean, var = ref.mean(), ref.var()
                m4 = ref.expect(lambda x: (x - mean) ** 4)
                x = sample_gig(lam, chi, psi, rng, size=n)
                se_mean = math.sqrt(var / n) / mean
                se_var = math.sqrt((m4 / var ** 2 - 1) / n)
                print(f"{lam:>5}{chi:>5}{psi:>5}{x.mean() / mean - 1:>10.4f}{se_mean:>8.4f}"
                      f"{x.var() / var - 1:>10.4f}{se_var:>8.4f}")


if __name__ == "__main__":
    main()
