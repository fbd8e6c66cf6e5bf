from __future__ import annotations

import numpy as np
import pytest

# Published calibration table: per-stratum population proportion, Neyman
# samples, judged political share and its standard deviation.
W_POL = (0.004, 0.007, 0.017, 0.047, 0.145, 0.165, 0.129, 0.116, 0.119, 0.252)
N_POL = (50, 50, 50, 107, 346, 394, 295, 241, 204, 263)
P_POL = (0.180, 0.160, 0.240, 0.187, 0.237, 0.475, 0.695, 0.821, 0.917, 0.970)
S_POL = (0.054, 0.052, 0.060, 0.038, 0.023, 0.025, 0.027, 0.025, 0.019, 0.011)
W_NONPOL = (0.148, 0.117, 0.150, 0.199, 0.242, 0.083, 0.026, 0.013, 0.008, 0.012)
N_NONPOL = (615, 797, 1239, 1810, 2296, 788, 237, 107, 61, 50)
P_NONPOL = (0.021, 0.024, 0.023, 0.031, 0.057, 0.189, 0.485, 0.757, 0.869, 0.980)
S_NONPOL = (0.006, 0.005, 0.004, 0.004, 0.005, 0.014, 0.032, 0.041, 0.043, 0.020)

# reported split of 0/1/2/3 positive ratings among three raters
AGREEMENT_SPLIT = (0.6685, 0.1459, 0.0775, 0.1081)


def agreement_fixture(n: int = 10000):
    """Rating records whose positive-count split matches AGREEMENT_SPLIT."""
    from quantcal.judgments import RatingRecord

    counts = [round(s * n) for s in AGREEMENT_SPLIT]
    patterns = {0: (0, 0, 0), 1: (1, 0, 0), 2: (1, 1, 0), 3: (1, 1, 1)}
    out = []
    for c, m in enumerate(counts):
        out += [RatingRecord(f"c{c}_{i}", patterns[c]) for i in range(m)]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
