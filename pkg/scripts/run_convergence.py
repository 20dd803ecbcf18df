"""Full eps-convergence study: limit spectrum, fattened spectra, transfer defects.

    python scripts/run_convergence.py [configs/default.json]
"""
import logging
import sys
import time

import numpy as np

from openbook.harness import ExperimentConfig, run_convergence, write_report


def main(path="configs/default.json"):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig.from_json(path)
    t0 = time.perf_counter()
    rep = run_convergence(cfg)
    paths = write_report(rep, cfg.out)
    np.set_printoptions(precision=4, suppress=True)
    print("limit (reference):", rep.lambda_limit)
    print("limit (surface FEM, extrapolated):", rep.lambda_limit_fem)
    for e, row, gap in zip(rep.eps, rep.lambda_eps, rep.gaps):
        print(f"eps={e:<5g} lambda={row}  gap={gap}")
    print("fitted alpha:", rep.alpha)
    for d in rep.defects:
        print(f"eps={d.eps:<5g} dJ_iso={d.dJ_iso:.3g} dJ_en={d.dJ_en:.3g} dK_iso={d.dK_iso:.3g} dK_en={d.dK_en:.3g}")
    for w in rep.warnings:
        print(w)
    print(f"wrote {', '.join(str(p) for p in paths.values())} in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main(*sys.argv[1:])
