"""Preparation, storage and readout stages of the ensemble photon memory.

Mode conventions
----------------
* ``S_A1, S_A2, S_B1, S_B2``: collective excitation modes of the four ensembles.
* ``stokes.M1/stokes.M2`` and detectors ``D1/D2``: the heralding interferometer
  of one ensemble pair (``M`` is ``A`` or ``B``).
* ``as.h/as.v``: the anti-Stokes channel carrying the photons retrieved from
  A1 (rotated to vertical) and B1 (horizontal) into the Bell analyzer.
* ``in.h/in.v``: the photon to be stored; ``out.h/out.v``: the readout photon.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .detection import (
    ClickPattern,
    DetectorModel,
    OutcomeBranch,
    _merge_equal_residuals,
    apply_dark_counts,
    cumulative_weights,
    dark_count_outcomes,
    enumerate_outcomes,
    sample_branch,
)
from .elements import (
    BELL_DETECTORS,
    D_HD,
    D_HU,
    D_VD,
    D_VU,
    SQRT_HALF,
    make_beamsplitter,
    make_bell_analyzer,
    make_polarization_swap,
    polarization_pair,
    retrieve_excitation,
)
from .errors import (
    MaxAttemptsExceeded,
    RejectClassError,
    SimulationError,
    UnsupportedModeError,
)
from .fock import (
    MixedState,
    PureState,
    apply_combination,
    apply_mode_map,
    detector,
    ensemble,
    photon,
    tensor,
)

S_A1, S_A2 = ensemble("S_A1"), ensemble("S_A2")
S_B1, S_B2 = ensemble("S_B1"), ensemble("S_B2")
MEMORY_MODES = (S_A1, S_A2, S_B1, S_B2)
ANTI_STOKES = polarization_pair("as")
INPUT = polarization_pair("in")
OUTPUT = polarization_pair("out")
D1, D2 = detector("D1"), detector("D2")
HERALD_DETECTORS = (D1, D2)

MEMORY_SOURCES = ("direct", "heralded")


class PatternClass(str, Enum):
    SUCCESS_IDENTITY = "SuccessIdentity"
    SUCCESS_PHASE_FLIP = "SuccessPhaseFlip"
    REJECT = "Reject"


_IDENTITY_PATTERNS = (
    ClickPattern(((D_HU, 1), (D_HD, 1))),
    ClickPattern(((D_VU, 1), (D_VD, 1))),
)
_FLIP_PATTERNS = (
    ClickPattern(((D_HU, 1), (D_VD, 1))),
    ClickPattern(((D_VU, 1), (D_HD, 1))),
)
SUCCESS_PATTERNS = _IDENTITY_PATTERNS + _FLIP_PATTERNS


@dataclass(frozen=True)
class ProtocolConfig:
    """Physical and run parameters of one experiment.

    ``memory`` selects how the four-ensemble state is obtained: ``direct``
    builds the (possibly vacuum-admixed) product state from ``c1``/``c2``,
    ``heralded`` runs the repeat-until-click preparation loop with ``p``.
    """

    p: float = 0.01
    phi_A: float = 0.0
    phi_B: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    alpha: complex = SQRT_HALF
    beta: complex = SQRT_HALF
    prep_detector: DetectorModel = DetectorModel()
    bell_detector: DetectorModel = DetectorModel()
    eta_retrieval: float = 1.0
    eta_storage: float = 1.0
    max_prep_attempts: int = 100_000
    trials: int = 10_000
    seed: int = 0
    memory: str = "direct"

    def problems(self) -> list[tuple[str, str]]:
        """(key, message) for every violated parameter constraint."""
        out = []
        if not 0.0 < self.p < 1.0:
            msg = "herald impossible: p must be > 0" if self.p <= 0 else "p must be < 1"
            out.append(("p", msg))
        norm = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(norm - 1.0) > 1e-10:
            out.append(("alpha", f"input qubit not normalized: |alpha|^2+|beta|^2 = {norm:.12g}"))
        for key in ("c1", "c2"):
            if getattr(self, key) < 0:
                out.append((key, "vacuum admixture must be >= 0"))
        for key in ("eta_retrieval", "eta_storage"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                out.append((key, "efficiency must lie in [0, 1]"))
        if self.max_prep_attempts < 1:
            out.append(("max_prep_attempts", "must be a positive integer"))
        if self.trials < 1:
            out.append(("trials", "must be a positive integer"))
        if not 0 <= self.seed < 2**64:
            out.append(("seed", "must be a 64-bit unsigned integer"))
        if self.memory not in MEMORY_SOURCES:
            out.append(("memory", f"must be one of {', '.join(MEMORY_SOURCES)}"))
        return out

    @property
    def provenance(self) -> str:
        if self.memory == "heralded":
            return "heralded"
        return "ideal" if self.c1 == 0 and self.c2 == 0 else "noisy"


@dataclass(frozen=True)
class MemoryState:
    state: MixedState
    provenance: str


@dataclass(frozen=True)
class StorageOutcome:
    pattern: ClickPattern
    pattern_class: PatternClass
    residual: PureState


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    prep_attempts_A: int | None
    prep_attempts_B: int | None
    pattern: ClickPattern
    pattern_class: PatternClass
    stored: PureState | None
    stored_fidelity: float | None
    readout_fidelity: float | None
    readout_photon_probability: float | None
    postselected_fidelity: float | None

    @property
    def accepted(self) -> bool:
        return self.pattern_class is not PatternClass.REJECT

    def to_json(self) -> dict:
        return {
            "trial": self.trial,
            "prep_attempts_A": self.prep_attempts_A,
            "prep_attempts_B": self.prep_attempts_B,
            "pattern": str(self.pattern),
            "class": self.pattern_class.value,
            "stored": None if self.stored is None else self.stored.to_json(),
            "stored_fidelity": self.stored_fidelity,
            "readout_fidelity": self.readout_fidelity,
            "readout_photon_probability": self.readout_photon_probability,
            "postselected_fidelity": self.postselected_fidelity,
        }


def target_memory_state(alpha: complex, beta: complex) -> PureState:
    """alpha S_A2^dag + beta S_B2^dag acting on vacuum."""
    return PureState.basis({S_A2: 1}, alpha) + PureState.basis({S_B2: 1}, beta)


def target_photon_state(alpha: complex, beta: complex) -> PureState:
    return PureState.basis({OUTPUT[0]: 1}, alpha) + PureState.basis({OUTPUT[1]: 1}, beta)


# --- stage 1: heralded pair preparation -------------------------------------


def _pair_modes(pair: str):
    return (
        ensemble(f"S_{pair}1"),
        ensemble(f"S_{pair}2"),
        photon(f"stokes.{pair}1"),
        photon(f"stokes.{pair}2"),
    )


def emission_state(p: float, phi: float, pair: str = "A") -> PureState:
    """One write attempt: each ensemble emits a Stokes photon with probability p."""
    s1, s2, k1, k2 = _pair_modes(pair)
    a, b = math.sqrt(1.0 - p), math.sqrt(p)
    first = a * PureState.vacuum() + PureState.basis({s1: 1, k1: 1}, b)
    second = a * PureState.vacuum() + PureState.basis({s2: 1, k2: 1}, b * cmath.exp(1j * phi))
    return tensor(first, second)


def herald_detector(pattern: ClickPattern, model: DetectorModel):
    """The detector that heralded, or None if the attempt must be repeated.

    A herald is a click in exactly one of D1/D2; a resolving detector must
    also report exactly one photon.
    """
    if len(pattern) != 1:
        return None
    (mode, count), = pattern.clicks
    if model.number_resolving and count != 1:
        return None
    return mode


def _flip_second(state: PureState, pair: str) -> PureState:
    s2 = ensemble(f"S_{pair}2")
    return state.map_terms(lambda occ, a: -a if dict(occ).get(s2, 0) % 2 else a)


@lru_cache(maxsize=64)
def attempt_branches(p: float, phi: float, model: DetectorModel, pair: str = "A") -> tuple:
    """Projective outcomes of one preparation attempt at D1/D2."""
    _, _, k1, k2 = _pair_modes(pair)
    bs = make_beamsplitter(k1, k2, D1, D2)
    state = apply_mode_map(emission_state(p, phi, pair), bs)
    return tuple(enumerate_outcomes(state, HERALD_DETECTORS, model))


def prepare_entangled_pair(
    p: float,
    phi: float,
    model: DetectorModel,
    max_attempts: int,
    rng: np.random.Generator,
    pair: str = "A",
) -> tuple[PureState, int]:
    """Repeat write attempts (re-pumping between them) until a herald.

    A D2 herald leaves the minus-sign pair state; a classical phase flip on
    the second ensemble restores the plus form before returning.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"emission probability must lie in (0, 1), got {p}")
    branches = attempt_branches(p, phi, model, pair)
    cumulative = cumulative_weights(branches)
    for attempt in range(1, max_attempts + 1):
        br = sample_branch(branches, rng, cumulative)
        pattern = apply_dark_counts(br.pattern, HERALD_DETECTORS, model, rng)
        which = herald_detector(pattern, model)
        if which is None:
            continue
        state = br.residual if which == D1 else _flip_second(br.residual, pair)
        return state, attempt
    raise MaxAttemptsExceeded(f"pair {pair}: no herald within {max_attempts} attempts", stage="preparation")


@lru_cache(maxsize=64)
def heralded_pair_state(p: float, phi: float, model: DetectorModel, pair: str = "A") -> tuple[MixedState, float]:
    """Exact post-herald pair mixture and the per-attempt herald probability."""
    heralded = []
    for br in attempt_branches(p, phi, model, pair):
        for q, pattern in dark_count_outcomes(br.pattern, HERALD_DETECTORS, model):
            which = herald_detector(pattern, model)
            if which is None or q == 0.0:
                continue
            state = br.residual if which == D1 else _flip_second(br.residual, pair)
            heralded.append(OutcomeBranch(ClickPattern(), br.probability * q, state))
    merged = _merge_equal_residuals(heralded)
    p_herald = math.fsum(b.probability for b in merged)
    mixture = MixedState.from_unnormalized((b.probability, b.residual) for b in merged)
    return mixture, p_herald


def pair_state(phi: float, pair: str = "A") -> PureState:
    s1, s2, _, _ = _pair_modes(pair)
    return SQRT_HALF * (PureState.basis({s1: 1}) + PureState.basis({s2: 1}, cmath.exp(1j * phi)))


def _product(a: MixedState, b: MixedState) -> MixedState:
    return MixedState.from_unnormalized(
        (wa * wb, tensor(sa, sb)) for wa, sa in a.branches for wb, sb in b.branches
    )


@lru_cache(maxsize=64)
def build_memory_state(c1: float, c2: float, phi_A: float = 0.0, phi_B: float = 0.0) -> MemoryState:
    """Four-ensemble memory, each pair mixed with vacuum at weight c/(1+c).

    Branch order: vac x vac, vac x Psi_B, Psi_A x vac, Psi_A x Psi_B.
    """
    if c1 < 0 or c2 < 0:
        raise ValueError("vacuum coefficients must be non-negative")
    vac = PureState.vacuum()
    a_branches = [(c1, vac), (1.0, pair_state(phi_A, "A"))]
    b_branches = [(c2, vac), (1.0, pair_state(phi_B, "B"))]
    pairs = [(wa * wb, tensor(sa, sb)) for wa, sa in a_branches for wb, sb in b_branches]
    provenance = "ideal" if c1 == 0 and c2 == 0 else "noisy"
    return MemoryState(MixedState.from_unnormalized(pairs), provenance)


def heralded_memory_state(config: ProtocolConfig) -> MemoryState:
    """Exact memory mixture produced by the preparation loop for both pairs."""
    a, _ = heralded_pair_state(config.p, config.phi_A, config.prep_detector, "A")
    b, _ = heralded_pair_state(config.p, config.phi_B, config.prep_detector, "B")
    return MemoryState(_product(a, b), "heralded")


def memory_for(config: ProtocolConfig) -> MemoryState:
    if config.memory == "heralded":
        return heralded_memory_state(config)
    return build_memory_state(config.c1, config.c2, config.phi_A, config.phi_B)


# --- stage 2: storage ---------------------------------------------------------


def analyzer_input(memory: PureState, alpha: complex, beta: complex, eta_storage: float = 1.0) -> MixedState:
    """Anti-pump A1 and B1 and add the incoming photon, ready for the analyzer."""
    as_h, as_v = ANTI_STOKES
    swap = make_polarization_swap(as_h, as_v)

    def after_a1(s):
        return retrieve_excitation(s, S_A1, as_h, eta_storage).map(lambda t: MixedState.pure(swap(t)))

    def inject(s):
        return MixedState.pure(apply_combination(s, ((INPUT[0], alpha), (INPUT[1], beta))))

    return (
        after_a1(memory)
        .map(lambda s: retrieve_excitation(s, S_B1, as_h, eta_storage))
        .map(inject)
    )


@lru_cache(maxsize=128)
def storage_branches(
    memory: MemoryState, alpha: complex, beta: complex, model: DetectorModel, eta_storage: float = 1.0
) -> tuple:
    """Exact projective outcomes of the Bell analyzer over the whole memory mixture."""
    analyzer = make_bell_analyzer(ANTI_STOKES, INPUT)
    branches = []
    for w, mem in memory.state.branches:
        for w2, s in analyzer_input(mem, alpha, beta, eta_storage).branches:
            for br in enumerate_outcomes(analyzer(s), BELL_DETECTORS, model):
                branches.append(OutcomeBranch(br.pattern, w * w2 * br.probability, br.residual))
    branches.sort(key=lambda b: b.pattern)
    return tuple(_merge_equal_residuals(branches))


def classify_pattern(pattern: ClickPattern) -> PatternClass:
    if pattern in _IDENTITY_PATTERNS:
        return PatternClass.SUCCESS_IDENTITY
    if pattern in _FLIP_PATTERNS:
        return PatternClass.SUCCESS_PHASE_FLIP
    return PatternClass.REJECT


def store_photon(
    memory: MemoryState,
    alpha: complex,
    beta: complex,
    model: DetectorModel,
    rng: np.random.Generator,
    eta_storage: float = 1.0,
) -> StorageOutcome:
    """Sample one Bell-analyzer outcome, add dark counts and classify it.

    Dark counts change only the pattern; the residual stays the one the
    photons actually left behind.
    """
    br = sample_branch(storage_branches(memory, alpha, beta, model, eta_storage), rng)
    pattern = apply_dark_counts(br.pattern, BELL_DETECTORS, model, rng)
    return StorageOutcome(pattern, classify_pattern(pattern), br.residual)


def exact_storage_outcomes(config: ProtocolConfig) -> list[tuple[float, ClickPattern, PatternClass, PureState]]:
    """Every (probability, pattern after dark counts, class, residual) of the storage stage."""
    memory = memory_for(config)
    model = config.bell_detector
    out = []
    for br in storage_branches(memory, config.alpha, config.beta, model, config.eta_storage):
        for q, pattern in dark_count_outcomes(br.pattern, BELL_DETECTORS, model):
            if q > 0.0:
                out.append((br.probability * q, pattern, classify_pattern(pattern), br.residual))
    return out


def apply_correction(stored: PureState, pattern_class: PatternClass) -> PureState:
    """Undo the phase flip left by a cross-polarization coincidence."""
    if pattern_class is PatternClass.REJECT:
        raise RejectClassError("rejected trials carry no stored qubit to correct")
    if pattern_class is PatternClass.SUCCESS_IDENTITY:
        return stored
    return stored.map_terms(lambda occ, a: -a if dict(occ).get(S_B2, 0) % 2 else a)


# --- stage 3: readout -----------------------------------------------------------


def read_out(stored: PureState, eta_retrieval: float = 1.0) -> MixedState:
    """Anti-pump A2 and B2 in turn: S_A2 -> out.h, S_B2 -> out.v."""
    extra = stored.modes - {S_A2, S_B2}
    if extra:
        raise UnsupportedModeError(
            f"stored state occupies {sorted(str(m) for m in extra)}; only S_A2/S_B2 can be read out"
        )
    out_h, out_v = OUTPUT
    swap = make_polarization_swap(out_h, out_v)
    return (
        retrieve_excitation(stored, S_B2, out_h, eta_retrieval)
        .map(lambda s: MixedState.pure(swap(s)))
        .map(lambda s: retrieve_excitation(s, S_A2, out_h, eta_retrieval))
    )


# --- composition ------------------------------------------------------------------


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trial ``index``: SeedSequence(seed, spawn_key=(index,)).

    This is the stream ``SeedSequence(seed).spawn(n)[index]`` would give, so a
    trial's record does not depend on execution order.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@lru_cache(maxsize=256)
def _readout_metrics(corrected: PureState, alpha: complex, beta: complex, eta: float):
    from .analysis import fidelity, postselected_fidelity

    stored_fid = fidelity(target_memory_state(alpha, beta), corrected)
    readout = read_out(corrected, eta)
    target = target_photon_state(alpha, beta)
    ps_fid, photon_prob = postselected_fidelity(target, readout)
    return stored_fid, fidelity(target, readout), photon_prob, ps_fid


def run_trial(config: ProtocolConfig, rng: np.random.Generator, index: int = 0) -> TrialRecord:
    """Prepare, store, classify, correct and read out one photon."""
    attempts_a = attempts_b = None
    stage = "preparation"
    try:
        if config.memory == "heralded":
            mem_a, attempts_a = prepare_entangled_pair(
                config.p, config.phi_A, config.prep_detector, config.max_prep_attempts, rng, "A"
            )
            mem_b, attempts_b = prepare_entangled_pair(
                config.p, config.phi_B, config.prep_detector, config.max_prep_attempts, rng, "B"
            )
            memory = MemoryState(MixedState.pure(tensor(mem_a, mem_b)), "heralded")
        else:
            memory = build_memory_state(config.c1, config.c2, config.phi_A, config.phi_B)
        stage = "storage"
        outcome = store_photon(
            memory, config.alpha, config.beta, config.bell_detector, rng, config.eta_storage
        )
        if outcome.pattern_class is PatternClass.REJECT:
            return TrialRecord(
                index, attempts_a, attempts_b, outcome.pattern, outcome.pattern_class,
                None, None, None, None, None,
            )
        stage = "readout"
        corrected = apply_correction(outcome.residual, outcome.pattern_class)
        metrics = _readout_metrics(corrected, config.alpha, config.beta, config.eta_retrieval)
    except SimulationError as exc:
        exc.stage = exc.stage or stage
        raise
    return TrialRecord(index, attempts_a, attempts_b, outcome.pattern, outcome.pattern_class, corrected, *metrics)


def _run_one(args):
    config, index = args
    return run_trial(config, trial_rng(config.seed, index), index)


def run_trials(config: ProtocolConfig, trials: int | None = None, workers: int = 1) -> list[TrialRecord]:
    """Run trials 0..n-1; results are ordered by trial index for any ``workers``."""
    n = config.trials if trials is None else trials
    jobs = [(config, k) for k in range(n)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * workers))))

