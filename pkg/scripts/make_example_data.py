"""Write a synthetic cohort as the four CSV inputs of ``bdlim fit``.

    python scripts/make_example_data.py --scenario B.2 --out example-data
    python scripts/make_example_data.py --logit --window 13-21 --out asthma-data
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from bdlim.simulation import (
    generate_covariates,
    generate_exposures,
    get_scenario,
    simulate_binary_outcome,
    simulate_outcome,
    window_weight,
)


def write(path, header, ids, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, r in zip(ids, rows):
            w.writerow([i, *r])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="B.2")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--logit", action="store_true", help="binary outcome with a flat window")
    ap.add_argument("--window", default="13-21", help="weeks carrying the effect (logit only)")
    ap.add_argument("--beta", default="0.3,0.3", help="per-group effects (logit only)")
    ap.add_argument("--out", default="example-data")
    args = ap.parse_args()

    sc = get_scenario(args.scenario)
    rng = np.random.default_rng(args.seed)
    if args.logit:
        # rougher exposures: a sharp window needs many components to resolve
        X = generate_exposures(sc.n, sc.T, rng=rng)
    else:
        X = generate_exposures(sc.n, sc.T, sc.rho, sc.exposure_sd, sc.seasonal_amp, rng, sc.period)
    Z = generate_covariates(sc.n, sc.n_binary, sc.n_continuous, rng)
    groups = np.repeat(np.arange(sc.J), sc.group_sizes)
    if args.logit:
        first, last = (int(v) for v in args.window.split("-"))
        w = window_weight(sc.T, first, last)
        beta = [float(b) for b in args.beta.split(",")]
        y = simulate_binary_outcome(X, Z, groups, beta, np.tile(w, (sc.J, 1)), rng)
    else:
        y = simulate_outcome(sc, X, Z, groups, rng)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = [f"s{i + 1:04d}" for i in range(sc.n)]
    labels = np.array(["female", "male", "g3", "g4"])[groups] if sc.J > 1 else ["all"] * sc.n
    write(out / "exposures.csv", ["id", *[f"t{t + 1}" for t in range(sc.T)]], ids,
          [[f"{v:.6g}" for v in row] for row in X.values])
    write(out / "covariates.csv", ["id", *[f"z{q + 1}" for q in range(Z.shape[1])]], ids,
          [[f"{v:.6g}" for v in row] for row in Z])
    write(out / "outcome.csv", ["id", "y"], ids, [[f"{v:.6g}"] for v in y])
    write(out / "groups.csv", ["id", "group"], ids, [[g] for g in labels])
    print(f"wrote {sc.n} rows to {out}/")


if __name__ == "__main__":
    main()
