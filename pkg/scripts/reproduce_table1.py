"""Rebuild the desk-reproducible parts of the published calibration table:
Neyman samples from the published strata proportions, standard deviations
from (p, n), and the JSD between the two strata profiles."""
from __future__ import annotations

import argparse

import numpy as np

from quantcal.calibrate import jsd
from quantcal.judgments import standard_error
from quantcal.strata import StrataProfile, neyman_allocate

W_POL = (0.004, 0.007, 0.017, 0.047, 0.145, 0.165, 0.129, 0.116, 0.119, 0.252)
W_NONPOL = (0.148, 0.117, 0.150, 0.199, 0.242, 0.083, 0.026, 0.013, 0.008, 0.012)
N_POL = (50, 50, 50, 107, 346, 394, 295, 241, 204, 263)
N_NONPOL = (615, 797, 1239, 1810, 2296, 788, 237, 107, 61, 50)
P_POL = (0.180, 0.160, 0.240, 0.187, 0.237, 0.475, 0.695, 0.821, 0.917, 0.970)
P_NONPOL = (0.021, 0.024, 0.023, 0.031, 0.057, 0.189, 0.485, 0.757, 0.869, 0.980)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-pol", type=int, default=2000)
    ap.add_argument("--n-nonpol", type=int, default=8000)
    ap.add_argument("--floor", type=int, default=50)
    args = ap.parse_args()

    pol = neyman_allocate(args.n_pol, W_POL, args.floor).n_k
    non = neyman_allocate(args.n_nonpol, W_NONPOL, args.floor).n_k
    print("k   W_pol  n_pol (pub)  s_pol   W_non  n_non (pub)  s_non")
    for k in range(10):
        print(f"{k + 1:<3} {W_POL[k]:.3f}  {pol[k]:>5} ({N_POL[k]:>4})  "
              f"{standard_error(P_POL[k], pol[k]):.3f}   {W_NONPOL[k]:.3f}  {non[k]:>5} ({N_NONPOL[k]:>4})  "
              f"{standard_error(P_NONPOL[k], non[k]):.3f}")
    print(f"political samples exact: {pol.tolist() == list(N_POL)}")
    print(f"non-political max deviation: {int(np.max(np.abs(non - np.array(N_NONPOL))))}")
    d = jsd(StrataProfile.from_weights(W_POL), StrataProfile.from_weights(W_NONPOL))
    print(f"JSD(pol, nonpol) = {d:.4f} bits")


if __name__ == "__main__":
    main()
