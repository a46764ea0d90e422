import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import IDEAL_BUCKET, IDEAL_RESOLVING, MODES, QUBITS, R, sparse_states
from oracles import analyzer_output_state, outcome_table
from ensemble_memory.analysis import chi_square_test
from ensemble_memory.detection import (
    ClickPattern,
    DetectorModel,
    apply_dark_counts,
    apply_loss,
    dark_count_outcomes,
    enumerate_outcomes,
    pattern_probabilities,
    sample_branch,
)
from ensemble_memory.elements import BELL_DETECTORS, D_HD, D_HU, D_VD, D_VU, make_bell_analyzer
from ensemble_memory.errors import UnnormalizedStateError
from ensemble_memory.fock import PureState, photon
from ensemble_memory.protocol import ANTI_STOKES, INPUT, S_A2, S_B2, analyzer_input, build_memory_state

a, b = photon("a"), photon("b")


def analyzer_output(alpha, beta):
    (_, memory), = build_memory_state(0.0, 0.0).state.branches
    (_, s), = analyzer_input(memory, alpha, beta).branches
    return make_bell_analyzer(ANTI_STOKES, INPUT)(s)


def by_name(state):
    return {tuple((m.name, n) for m, n in occ): amp for occ, amp in state.terms}


def test_single_photon_split_evenly():
    s = R * (PureState.basis({a: 1}) + PureState.basis({b: 1}))
    branches = enumerate_outcomes(s, (a, b), IDEAL_RESOLVING)
    assert {str(br.pattern) for br in branches} == {"a:1", "b:1"}
    for br in branches:
        assert br.probability == pytest.approx(0.5, abs=1e-15)
        assert br.residual == PureState.vacuum()


@pytest.mark.parametrize("alpha,beta", QUBITS)
def test_analyzer_state_matches_polynomial_oracle(alpha, beta):
    got = by_name(analyzer_output(alpha, beta))
    want = analyzer_output_state(alpha, beta)
    assert set(got) == set(want)
    for k in want:
        assert abs(got[k] - want[k]) < 1e-12


@pytest.mark.parametrize("alpha,beta", QUBITS)
def test_resolving_branches_match_oracle(alpha, beta):
    table = outcome_table(analyzer_output_state(alpha, beta))
    branches = enumerate_outcomes(analyzer_output(alpha, beta), BELL_DETECTORS, IDEAL_RESOLVING)
    got = {tuple(sorted((m.name, n) for m, n in br.pattern.clicks)): br for br in branches}
    assert set(got) == set(table)
    for sig, (prob, residual) in table.items():
        br = got[sig]
        assert br.probability == pytest.approx(prob, abs=1e-12)
        # residual up to the normalization the oracle leaves out
        norm = math.sqrt(prob)
        for rest, amp in residual.items():
            key = {m: n for m, n in rest}
            occ = {S_A2: key.get("S_A2", 0), S_B2: key.get("S_B2", 0)}
            assert abs(br.residual.amplitude({m: n for m, n in occ.items() if n}) - amp / norm) < 1e-12


@pytest.mark.parametrize("alpha,beta", QUBITS)
def test_each_coincidence_is_one_sixteenth(alpha, beta):
    probs = pattern_probabilities(
        enumerate_outcomes(analyzer_output(alpha, beta), BELL_DETECTORS, IDEAL_RESOLVING)
    )
    for pair in ((D_HU, D_HD), (D_VU, D_VD), (D_HU, D_VD), (D_VU, D_HD)):
        assert probs[ClickPattern(((pair[0], 1), (pair[1], 1)))] == pytest.approx(1 / 16, abs=1e-12)


def test_bucket_coincidence_mixes_qubit_and_vacuum():
    branches = enumerate_outcomes(analyzer_output(R, R), BELL_DETECTORS, IDEAL_BUCKET)
    hh = ClickPattern(((D_HU, 1), (D_HD, 1)))
    sub = [br for br in branches if br.pattern == hh]
    assert sum(br.probability for br in sub) == pytest.approx(1 / 8, abs=1e-12)
    assert len(sub) == 2
    residuals = {br.residual.modes: br.probability for br in sub}
    assert residuals[frozenset()] == pytest.approx(1 / 16, abs=1e-12)
    assert residuals[frozenset({S_A2, S_B2})] == pytest.approx(1 / 16, abs=1e-12)


def test_bucket_is_coarse_graining_of_resolving():
    s = analyzer_output(0.6, 0.8j)
    fine = pattern_probabilities(enumerate_outcomes(s, BELL_DETECTORS, IDEAL_RESOLVING))
    coarse = pattern_probabilities(enumerate_outcomes(s, BELL_DETECTORS, IDEAL_BUCKET))
    folded = {}
    for pat, p in fine.items():
        key = ClickPattern(tuple((m, 1) for m, _ in pat.clicks))
        folded[key] = folded.get(key, 0.0) + p
    assert set(folded) == set(coarse)
    for k in coarse:
        assert abs(folded[k] - coarse[k]) < 1e-12


@settings(max_examples=60, deadline=None)
@given(s=sparse_states())
def test_probabilities_complete(s):
    for model in (IDEAL_RESOLVING, IDEAL_BUCKET, DetectorModel(True, 0.7, 0.0)):
        branches = enumerate_outcomes(s, MODES[:2], model)
        assert abs(sum(br.probability for br in branches) - 1) < 1e-12
        assert all(br.residual.is_normalized() for br in branches)


def test_sampling_frequency(rng):
    s = R * (PureState.basis({a: 1}) + PureState.basis({b: 1}))
    branches = enumerate_outcomes(s, (a, b), IDEAL_RESOLVING)
    hits = sum(str(sample_branch(branches, rng).pattern) == "a:1" for _ in range(10_000))
    assert 0.47 <= hits / 10_000 <= 0.53


def test_sampling_multinomial_chi_square(rng):
    branches = enumerate_outcomes(analyzer_output(0.6, 0.8), BELL_DETECTORS, IDEAL_RESOLVING)
    n = 20_000
    counts = {}
    for _ in range(n):
        k = branches.index(sample_branch(branches, rng))
        counts[k] = counts.get(k, 0) + 1
    stat, dof, crit = chi_square_test(counts, {k: br.probability for k, br in enumerate(branches)})
    assert stat < crit


@pytest.mark.parametrize("eta,expected", [(1.0, 1.0), (0.0, 0.0), (0.9, 0.9)])
def test_apply_loss_single_photon(eta, expected):
    mixed = apply_loss(PureState.basis({a: 1}), a, eta)
    kept = sum(w for w, s in mixed.branches if a in s.modes)
    assert kept == pytest.approx(expected, abs=1e-15)
    assert math.fsum(w for w, _ in mixed.branches) == pytest.approx(1.0, abs=1e-15)


def test_apply_loss_keeps_coherence_of_survivors():
    s = R * (PureState.basis({a: 1}) + PureState.basis({b: 1}))
    mixed = apply_loss(s, a, 0.5)
    weights = sorted(w for w, _ in mixed.branches)
    assert weights == pytest.approx([0.25, 0.75])


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("eta", [0.3, 0.9])
def test_inefficient_bucket_click_probability(n, eta):
    model = DetectorModel(number_resolving=False, efficiency=eta, dark_prob=0.0)
    branches = enumerate_outcomes(PureState.basis({a: n}), (a,), model)
    clicked = sum(br.probability for br in branches if len(br.pattern))
    assert clicked == pytest.approx(1 - (1 - eta) ** n, abs=1e-12)


def test_unnormalized_input_rejected():
    with pytest.raises(UnnormalizedStateError):
        enumerate_outcomes(2 * PureState.basis({a: 1}), (a,), IDEAL_RESOLVING)


def test_dark_counts_disabled_and_certain(rng):
    empty = ClickPattern()
    assert apply_dark_counts(empty, BELL_DETECTORS, IDEAL_RESOLVING, rng) == empty
    # dark_prob must stay below one, so take the exact distribution near it
    q = 1 - 1e-12
    model = DetectorModel(True, 1.0, q)
    out = dark_count_outcomes(empty, BELL_DETECTORS, model)
    all_four = ClickPattern(tuple((d, 1) for d in BELL_DETECTORS))
    assert dict((str(p), w) for w, p in out)[str(all_four)] == pytest.approx(1.0, abs=1e-10)
    assert apply_dark_counts(empty, BELL_DETECTORS, model, rng) == all_four


def test_dark_counts_add_to_resolving_count():
    model = DetectorModel(True, 1.0, 0.5)
    start = ClickPattern(((D_HU, 1),))
    outs = dict((p, w) for w, p in dark_count_outcomes(start, (D_HU,), model))
    assert outs[ClickPattern(((D_HU, 2),))] == pytest.approx(0.5)
    bucket = DetectorModel(False, 1.0, 0.5)
    outs = [p for _, p in dark_count_outcomes(start, (D_HU,), bucket)]
    assert outs == [start, start]


def test_dark_count_rate_over_many_windows():
    rng = np.random.default_rng(99)
    model = DetectorModel(True, 1.0, 1e-5)
    # four detectors over 1e6 windows: 40 expected spurious clicks
    fired = sum(len(apply_dark_counts(ClickPattern(), BELL_DETECTORS, model, rng)) for _ in range(1_000_000))
    assert 20 <= fired <= 60


def test_exact_dark_distribution_sums_to_one():
    model = DetectorModel(False, 1.0, 1e-5)
    out = dark_count_outcomes(ClickPattern(((D_HU, 1),)), BELL_DETECTORS, model)
    assert len(out) == 16
    assert math.fsum(w for w, _ in out) == pytest.approx(1.0, abs=1e-15)


def test_click_pattern_text_round_trip():
    pat = ClickPattern(((D_HU, 1), (D_HD, 1)))
    assert str(pat) == "D_h^d:1,D_h^u:1"
    assert ClickPattern.parse(str(pat)) == pat
    assert ClickPattern.parse("") == ClickPattern()
    with pytest.raises(ValueError):
        ClickPattern(((D_HU, 0),))
