"""How much of the eps-gap is the end-cap lengthening?

The fattened domain reaches ``eps`` past each free page edge. For a page of
length ``ell`` the caps add roughly ``pi eps / 4`` of effective length, which
moves the transverse modes ``((n + 1/2) pi / ell)^2`` down at first order in
eps. This script compares the measured fattened eigenvalues with the star
spectrum at the corrected length.
"""
import math

import numpy as np

from openbook.harness import ExperimentConfig, run_fattened
from openbook.spectra_oracle import book_limit_spectrum


def main():
    cfg = ExperimentConfig(m=6)
    ref = book_limit_spectrum(3, 1.0, 1.0, 6).values()
    for run in run_fattened(cfg):
        eff = book_limit_spectrum(3, 1.0 + math.pi * run.eps / 4, 1.0, 6).values()
        print(f"eps={run.eps:<5g} measured {np.round(run.extrapolated, 3)}")
        print(f"{'':10} limit    {np.round(ref, 3)}")
        print(f"{'':10} capped   {np.round(eff, 3)}")


if __name__ == "__main__":
    main()
