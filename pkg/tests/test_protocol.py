import cmath
import math

import numpy as np
import pytest

from conftest import IDEAL_BUCKET, IDEAL_RESOLVING, QUBITS, R
from ensemble_memory.analysis import fidelity
from ensemble_memory.detection import ClickPattern, DetectorModel
from ensemble_memory.elements import D_HD, D_HU, D_VD, D_VU
from ensemble_memory.errors import (
    MaxAttemptsExceeded,
    RejectClassError,
    TruncationError,
    UnsupportedModeError,
)
from ensemble_memory.fock import PureState, photon
from ensemble_memory.protocol import (
    OUTPUT,
    S_A1,
    S_A2,
    S_B1,
    S_B2,
    PatternClass,
    ProtocolConfig,
    apply_correction,
    build_memory_state,
    classify_pattern,
    exact_storage_outcomes,
    heralded_pair_state,
    pair_state,
    prepare_entangled_pair,
    read_out,
    run_trial,
    run_trials,
    store_photon,
    target_memory_state,
    target_photon_state,
    trial_rng,
)


def ideal(**kw):
    kw.setdefault("bell_detector", IDEAL_RESOLVING)
    kw.setdefault("prep_detector", IDEAL_RESOLVING)
    return ProtocolConfig(**kw)


def test_mean_preparation_attempts():
    p, n = 0.01, 2000
    rng = np.random.default_rng(5)
    attempts = [prepare_entangled_pair(p, 0.0, IDEAL_RESOLVING, 100_000, rng)[1] for _ in range(n)]
    q = 2 * p * (1 - p)
    mean, sigma = 1 / q, math.sqrt((1 - q) / q**2 / n)
    assert abs(np.mean(attempts) - mean) < 3 * sigma
    assert mean == pytest.approx(50.505, abs=1e-3)


def test_bucket_false_herald_fraction():
    p, n = 0.01, 100_000
    mixture, p_herald = heralded_pair_state(p, 0.0, IDEAL_BUCKET)
    double = PureState.basis({S_A1: 1, S_A2: 1})
    expected = sum(w for w, s in mixture.branches if s == double)
    # both photons bunch at the splitter and land on one detector
    assert expected == pytest.approx(p / (2 - p), abs=1e-12)
    assert p_herald == pytest.approx(2 * p * (1 - p) + p * p, abs=1e-12)
    rng = np.random.default_rng(17)
    false = sum(
        prepare_entangled_pair(p, 0.0, IDEAL_BUCKET, 100_000, rng)[0] == double for _ in range(n)
    )
    sigma = math.sqrt(expected * (1 - expected) / n)
    assert abs(false / n - expected) < 3 * sigma


def test_resolving_herald_never_returns_double_excitation():
    mixture, _ = heralded_pair_state(0.2, 0.0, IDEAL_RESOLVING)
    assert len(mixture.branches) == 1


@pytest.mark.parametrize("seed", range(5))
def test_heralded_state_is_phase_pair(seed):
    phi = math.pi / 3
    state, _ = prepare_entangled_pair(0.5, phi, IDEAL_RESOLVING, 1000, np.random.default_rng(seed))
    expected = R * (PureState.basis({S_A1: 1}) + PureState.basis({S_A2: 1}, cmath.exp(1j * phi)))
    assert abs(state.amplitude({S_A1: 1}) - R) < 1e-15
    assert abs(state.amplitude({S_A2: 1}) - expected.amplitude({S_A2: 1})) < 1e-15
    assert len(state.terms) == 2


def test_max_attempts_exceeded():
    with pytest.raises(MaxAttemptsExceeded) as info:
        prepare_entangled_pair(1e-9, 0.0, IDEAL_RESOLVING, 3, np.random.default_rng(0))
    assert info.value.stage == "preparation"
    with pytest.raises(MaxAttemptsExceeded) as info:
        run_trial(ideal(memory="heralded", p=1e-9, max_prep_attempts=2), np.random.default_rng(0))
    assert info.value.stage == "preparation"


def test_preparation_rejects_bad_p():
    with pytest.raises(ValueError):
        prepare_entangled_pair(0.0, 0.0, IDEAL_RESOLVING, 10, np.random.default_rng(0))


def test_ideal_memory_is_normalized_product():
    (w, s), = build_memory_state(0.0, 0.0).state.branches
    assert w == 1.0 and s.is_normalized(1e-15)
    for occ in ({S_A1: 1, S_B1: 1}, {S_A1: 1, S_B2: 1}, {S_A2: 1, S_B1: 1}, {S_A2: 1, S_B2: 1}):
        assert s.amplitude(occ) == pytest.approx(0.5, abs=1e-15)


def test_noisy_memory_weights():
    mem = build_memory_state(0.05, 0.05)
    weights = [w for w, _ in mem.state.branches]
    expected = [x / 1.1025 for x in (0.0025, 0.05, 0.05, 1.0)]
    assert weights == pytest.approx(expected, abs=1e-15)
    assert mem.provenance == "noisy"
    vac_b = build_memory_state(0.0, 1.0)
    assert sorted(w for w, _ in vac_b.state.branches) == pytest.approx([0.5, 0.5])


def test_noisy_memory_rejects_negative():
    with pytest.raises(ValueError):
        build_memory_state(-0.1, 0.0)


def class_totals(config):
    out = {c: 0.0 for c in PatternClass}
    for prob, _, cls, _ in exact_storage_outcomes(config):
        out[cls] += prob
    return out


@pytest.mark.parametrize("alpha,beta", QUBITS)
def test_storage_probabilities(alpha, beta):
    totals = class_totals(ideal(alpha=alpha, beta=beta))
    assert totals[PatternClass.SUCCESS_IDENTITY] == pytest.approx(0.125, abs=1e-12)
    assert totals[PatternClass.SUCCESS_PHASE_FLIP] == pytest.approx(0.125, abs=1e-12)
    assert totals[PatternClass.REJECT] == pytest.approx(0.75, abs=1e-12)


@pytest.mark.parametrize("alpha,beta", QUBITS)
def test_accepted_branches_store_input_qubit(alpha, beta):
    target = target_memory_state(alpha, beta)
    for prob, pattern, cls, residual in exact_storage_outcomes(ideal(alpha=alpha, beta=beta)):
        if cls is PatternClass.REJECT:
            continue
        assert fidelity(target, apply_correction(residual, cls)) == pytest.approx(1.0, abs=1e-12)
        if pattern == ClickPattern(((D_HU, 1), (D_HD, 1))):
            assert residual.amplitude({S_A2: 1}) == pytest.approx(alpha, abs=1e-12)
            assert residual.amplitude({S_B2: 1}) == pytest.approx(beta, abs=1e-12)


def test_bucket_storage_half_vacuum():
    cfg = ideal(bell_detector=IDEAL_BUCKET)
    target = target_memory_state(R, R)
    hh = ClickPattern(((D_HU, 1), (D_HD, 1)))
    branches = [(p, r) for p, pat, _, r in exact_storage_outcomes(cfg) if pat == hh]
    total = sum(p for p, _ in branches)
    f = sum(p * fidelity(target, r) for p, r in branches) / total
    assert total == pytest.approx(0.125, abs=1e-12)
    assert f == pytest.approx(0.5, abs=1e-12)


def test_store_photon_samples_classes(rng):
    mem = build_memory_state(0.0, 0.0)
    seen = {store_photon(mem, R, R, IDEAL_RESOLVING, rng).pattern_class for _ in range(200)}
    assert seen == set(PatternClass)


@pytest.mark.parametrize(
    "clicks,expected",
    [
        (((D_VU, 1), (D_VD, 1)), PatternClass.SUCCESS_IDENTITY),
        (((D_HU, 1), (D_HD, 1)), PatternClass.SUCCESS_IDENTITY),
        (((D_VU, 1), (D_HD, 1)), PatternClass.SUCCESS_PHASE_FLIP),
        (((D_HU, 1), (D_VD, 1)), PatternClass.SUCCESS_PHASE_FLIP),
        (((D_HU, 2), (D_HD, 1)), PatternClass.REJECT),
        (((D_HU, 1), (D_VU, 1)), PatternClass.REJECT),
        (((D_HU, 1), (D_HD, 1), (D_VD, 1)), PatternClass.REJECT),
        (((D_HU, 1),), PatternClass.REJECT),
        ((), PatternClass.REJECT),
    ],
)
def test_classify(clicks, expected):
    assert classify_pattern(ClickPattern(clicks)) is expected


def test_correction_examples():
    a, b = 0.6, 0.8j
    flipped = PureState.basis({S_A2: 1}, a) - PureState.basis({S_B2: 1}, b)
    assert apply_correction(flipped, PatternClass.SUCCESS_PHASE_FLIP) == target_memory_state(a, b)
    s = target_memory_state(a, b)
    assert apply_correction(s, PatternClass.SUCCESS_IDENTITY) is s
    twice = apply_correction(apply_correction(s, PatternClass.SUCCESS_PHASE_FLIP), PatternClass.SUCCESS_PHASE_FLIP)
    assert twice == s
    with pytest.raises(RejectClassError):
        apply_correction(s, PatternClass.REJECT)


@pytest.mark.parametrize("alpha,beta", QUBITS)
def test_read_out_ideal(alpha, beta):
    (w, s), = read_out(target_memory_state(alpha, beta)).branches
    assert w == 1.0
    assert fidelity(target_photon_state(alpha, beta), s) == pytest.approx(1.0, abs=1e-12)
    assert s.amplitude({OUTPUT[0]: 1}) == pytest.approx(alpha, abs=1e-12)


def test_read_out_vacuum():
    assert read_out(PureState.vacuum()).branches == ((1.0, PureState.vacuum()),)


def test_read_out_lossy():
    mixed = read_out(target_memory_state(0.6, 0.8), 0.9)
    one_photon = sum(w for w, s in mixed.branches if s.modes)
    assert one_photon == pytest.approx(0.9, abs=1e-12)
    assert fidelity(target_photon_state(0.6, 0.8), mixed) == pytest.approx(0.9, abs=1e-12)


def test_read_out_rejects_other_modes():
    with pytest.raises(UnsupportedModeError):
        read_out(PureState.basis({S_A1: 1}))


@pytest.mark.parametrize("seed", range(3))
def test_ideal_trials_have_unit_fidelity(seed):
    for rec in run_trials(ideal(seed=seed), trials=300):
        assert (rec.readout_fidelity is not None) == rec.accepted
        if rec.accepted:
            assert rec.readout_fidelity == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("dphi", [0.0, 0.4, math.pi / 2, 2.0, math.pi])
@pytest.mark.parametrize("alpha,beta", [(R, R), (0.6, 0.8j), (1.0, 0.0)])
def test_phase_law(dphi, alpha, beta):
    cfg = ideal(alpha=alpha, beta=beta, phi_A=0.3 + dphi, phi_B=0.3)
    a2, b2 = abs(alpha) ** 2, abs(beta) ** 2
    expected = a2 * a2 + b2 * b2 + 2 * a2 * b2 * math.cos(dphi)
    rng = np.random.default_rng(1)
    accepted = 0
    for k in range(80):
        rec = run_trial(cfg, rng, k)
        if rec.accepted:
            accepted += 1
            assert rec.readout_fidelity == pytest.approx(expected, abs=1e-10)
    assert accepted > 0


def test_trial_rng_matches_spawned_streams():
    spawned = np.random.SeedSequence(42).spawn(4)
    for k, ss in enumerate(spawned):
        assert trial_rng(42, k).random() == np.random.default_rng(ss).random()


def test_trials_independent_of_order():
    cfg = ideal(seed=9)
    forward = run_trials(cfg, trials=50)
    single = run_trial(cfg, trial_rng(9, 37), 37)
    assert forward[37] == single


def test_parallel_matches_serial():
    cfg = ideal(seed=3, bell_detector=DetectorModel(False, 1.0, 1e-5))
    assert run_trials(cfg, trials=60, workers=2) == run_trials(cfg, trials=60)


def test_truncation_error_reports_stage(monkeypatch):
    import ensemble_memory.protocol as proto

    def boom(*args, **kwargs):
        raise TruncationError("too many photons")

    monkeypatch.setattr(proto, "storage_branches", boom)
    with pytest.raises(TruncationError) as info:
        run_trial(ideal(), np.random.default_rng(0))
    assert info.value.stage == "storage"


def test_config_problems():
    assert ideal().problems() == []
    keys = {k for k, _ in ProtocolConfig(p=0.0, alpha=1.0, beta=0.5, c1=-1).problems()}
    assert keys == {"p", "alpha", "c1"}


def test_pair_state_norm():
    s = pair_state(1.1, "B")
    assert s.is_normalized(1e-15)
    assert s.modes == {S_B1, S_B2}
    assert photon("out.h") == OUTPUT[0]
