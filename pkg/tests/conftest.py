import os

import numpy as np
import pytest

import pilotbox as pb

# Backtracking lattices are memoized here so repeated suite runs (and the
# acceptance module's shared fixtures) do not recompute hours of
# trajectories. Delete the directory to force a from-scratch run.
DEFAULT_CACHE = os.path.expanduser("~/.cache/pilotbox")
CACHE_DIR = os.environ.get("PILOTBOX_CACHE", DEFAULT_CACHE)


@pytest.fixture(scope="session")
def cache_dir():
    os.makedirs(CACHE_DIR, exist_ok=True)
    return CACHE_DIR


@pytest.fixture(scope="session")
def state():
    return pb.default_superposition()


@pytest.fixture(scope="session")
def config():
    return pb.IntegratorConfig()


@pytest.fixture(scope="session")
def born_sampler(state):
    """Draw positions distributed as |psi(., 0)|^2 by rejection sampling."""
    peak = 1.05 * float(np.max(pb.born_density(
        state,
        *np.meshgrid(np.linspace(0.01, np.pi - 0.01, 256),
                     np.linspace(0.01, np.pi - 0.01, 256), indexing="ij"),
        0.0)))

    def draw(count, seed):
        rng = np.random.default_rng(seed)
        out = np.empty((count, 2))
        filled = 0
        while filled < count:
            cand = rng.uniform(0.0, np.pi, size=(4 * count, 2))
            accept = rng.uniform(0.0, peak, size=4 * count) < pb.born_density(
                state, cand[:, 0], cand[:, 1], 0.0)
            take = cand[accept][: count - filled]
            out[filled:filled + take.shape[0]] = take
            filled += take.shape[0]
        return out

    return draw
