import math

import numpy as np
import pytest
from hypothesis import strategies as st

from ensemble_memory.detection import DetectorModel
from ensemble_memory.fock import PureState, normalize, photon

R = 1 / math.sqrt(2)

IDEAL_RESOLVING = DetectorModel(number_resolving=True, efficiency=1.0, dark_prob=0.0)
IDEAL_BUCKET = DetectorModel(number_resolving=False, efficiency=1.0, dark_prob=0.0)

QUBITS = [
    (1.0, 0.0),
    (0.0, 1.0),
    (R, R),
    (R, 1j * R),
    (0.6, 0.8 * np.exp(0.7j)),
]

MODES = tuple(photon(n) for n in ("m1", "m2", "m3", "m4"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@st.composite
def sparse_states(draw, modes=MODES, max_photons=3, max_terms=4):
    """Random normalized state with at most ``max_photons`` photons per term."""
    n_terms = draw(st.integers(1, max_terms))
    amps = {}
    for _ in range(n_terms):
        total = draw(st.integers(0, max_photons))
        counts = {}
        for _ in range(total):
            m = draw(st.sampled_from(modes))
            counts[m] = counts.get(m, 0) + 1
        re = draw(st.floats(-1, 1, allow_nan=False))
        im = draw(st.floats(-1, 1, allow_nan=False))
        amps[tuple(sorted(counts.items()))] = complex(re, im)
    state = PureState.from_amplitudes(amps)
    if state.norm_squared() < 1e-6:
        state = PureState.vacuum()
    return normalize(state)[0]
