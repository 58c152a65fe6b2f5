"""Small shared fixtures: the separable toy set and a compact network."""

import numpy as np

from seizure_snn.encoding import SpikeRaster
from seizure_snn.network import WaveSenseConfig, build_network

DT = 1 / 256


def toy_trials(n, seed, T=128):
    """Class 0 bursts on signal channel 0, class 1 on signal channel 1."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        y = k % 2
        c = rng.poisson(0.05, (4, T))
        c[2 * y:2 * y + 2] += rng.poisson(0.6, (2, T))
        out.append((SpikeRaster(c, DT), y))
    return out


def toy_net(seed=0):
    return build_network(WaveSenseConfig(n_blocks=2, neurons_per_block=8, readout_hidden=8), seed)
