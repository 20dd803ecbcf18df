"""Surface-FEM limit spectrum next to the closed form, with the observed h-order."""
import sys

import numpy as np

from openbook.harness import ExperimentConfig, run_limit


def main(E="3"):
    cfg = ExperimentConfig(E=int(E), m=10, surface_h_list=[0.1, 0.05, 0.025])
    run = run_limit(cfg)
    print(f"{'n':>2} " + " ".join(f"{'h=' + format(h, 'g'):>10}" for h in run.h_list) + f" {'extrap':>10} {'oracle':>10} {'order':>6}")
    for n in range(cfg.m):
        vals = " ".join(f"{r.values[n]:10.5f}" for r in run.results)
        noise = abs(run.extrapolated[n]) < 1e-8  # order of a zero eigenvalue is meaningless
        order = "" if noise or run.order is None or not np.isfinite(run.order[n]) else f"{run.order[n]:6.2f}"
        print(f"{n:2d} {vals} {run.extrapolated[n]:10.5f} {run.oracle[n]:10.5f} {order}")
    print("multiplicities:", run.multiplicities())


if __name__ == "__main__":
    main(*sys.argv[1:])
