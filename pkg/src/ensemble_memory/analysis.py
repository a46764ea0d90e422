"""Fidelities, exact class probabilities and run statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import TYPE_CHECKING, Mapping, Sequence

from scipy.stats import chi2

from .errors import UnnormalizedStateError
from .fock import MixedState, PureState, inner_product

if TYPE_CHECKING:
    from .protocol import ProtocolConfig, TrialRecord

INTERVAL_METHOD = "wilson"
CSV_COLUMNS = (
    "trials",
    "accepts",
    "acceptance_rate",
    "acceptance_lo",
    "acceptance_hi",
    "mean_fidelity_on_accept",
    "mean_stored_fidelity_on_accept",
    "mean_postselected_fidelity",
    "mean_prep_attempts",
    "SuccessIdentity",
    "SuccessPhaseFlip",
    "Reject",
)


def fidelity(target: PureState, actual: PureState | MixedState) -> float:
    """|<target|actual>|^2, or its weighted sum over the branches of a mixture."""
    if not target.is_normalized():
        raise UnnormalizedStateError(f"fidelity target has norm^2 {target.norm_squared()!r}")
    if isinstance(actual, MixedState):
        f = math.fsum(w * abs(inner_product(target, s)) ** 2 for w, s in actual.branches)
    else:
        f = abs(inner_product(target, actual)) ** 2
    return min(1.0, max(0.0, f))


def postselected_fidelity(target: PureState, actual: MixedState) -> tuple[float | None, float]:
    """Fidelity conditioned on the state holding as many photons as ``target``.

    Returns ``(fidelity, acceptance)`` where acceptance is the probability of
    the photon-number post-selection; fidelity is None when it never passes.
    """
    n_target = {sum(n for _, n in occ) for occ, _ in target.terms}
    if len(n_target) != 1:
        raise ValueError("post-selection needs a target with definite photon number")
    (n,) = n_target
    accepted = 0.0
    overlap = 0.0
    for w, s in actual.branches:
        kept = PureState.from_amplitudes(
            {occ: a for occ, a in s.terms if sum(k for _, k in occ) == n}
        )
        accepted += w * kept.norm_squared()
        overlap += w * abs(inner_product(target, kept)) ** 2
    if accepted <= 0.0:
        return None, 0.0
    return min(1.0, overlap / accepted), accepted


def exact_success_probability(config: ProtocolConfig) -> dict[str, float]:
    """Class probabilities of the storage stage by full enumeration."""
    from .protocol import PatternClass, exact_storage_outcomes

    out = {c.value: 0.0 for c in PatternClass}
    for prob, _, cls, _ in exact_storage_outcomes(config):
        out[cls.value] += prob
    return out


def exact_pattern_probabilities(config: ProtocolConfig) -> dict[str, float]:
    from .protocol import exact_storage_outcomes

    out: dict[str, float] = {}
    for prob, pattern, _, _ in exact_storage_outcomes(config):
        out[str(pattern)] = out.get(str(pattern), 0.0) + prob
    return dict(sorted(out.items()))


def exact_report(config: ProtocolConfig) -> dict:
    """Exact class probabilities plus the fidelities expected on acceptance."""
    from .protocol import (
        PatternClass,
        apply_correction,
        exact_storage_outcomes,
        heralded_pair_state,
        read_out,
        target_memory_state,
        target_photon_state,
    )

    classes = {c.value: 0.0 for c in PatternClass}
    patterns: dict[str, float] = {}
    accept = stored_f = readout_f = ps_weight = ps_overlap = 0.0
    t_mem = target_memory_state(config.alpha, config.beta)
    t_out = target_photon_state(config.alpha, config.beta)
    for prob, pattern, cls, residual in exact_storage_outcomes(config):
        classes[cls.value] += prob
        patterns[str(pattern)] = patterns.get(str(pattern), 0.0) + prob
        if cls is PatternClass.REJECT:
            continue
        corrected = apply_correction(residual, cls)
        readout = read_out(corrected, config.eta_retrieval)
        accept += prob
        stored_f += prob * fidelity(t_mem, corrected)
        readout_f += prob * fidelity(t_out, readout)
        f_ps, p_ps = postselected_fidelity(t_out, readout)
        if f_ps is not None:
            ps_weight += prob * p_ps
            ps_overlap += prob * p_ps * f_ps
    report = {
        "class_probabilities": classes,
        "acceptance_probability": accept,
        "stored_fidelity_on_accept": stored_f / accept if accept else None,
        "readout_fidelity_on_accept": readout_f / accept if accept else None,
        "postselected_fidelity": ps_overlap / ps_weight if ps_weight else None,
        "pattern_probabilities": dict(sorted(patterns.items())),
    }
    if config.memory == "heralded":
        herald = [
            heralded_pair_state(config.p, phi, config.prep_detector, pair)[1]
            for phi, pair in ((config.phi_A, "A"), (config.phi_B, "B"))
        ]
        report["expected_prep_attempts"] = math.fsum(1.0 / h for h in herald) / 2
    return report


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one trial")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    phat = successes / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def chi_square_test(
    counts: Mapping[str, int], probabilities: Mapping[str, float], min_expected: float = 5.0, quantile: float = 0.999
) -> tuple[float, int, float]:
    """Pearson statistic of ``counts`` against ``probabilities``.

    Cells with expected count below ``min_expected`` are pooled into one
    cell. Returns ``(statistic, degrees_of_freedom, critical_value)``.
    """
    n = sum(counts.values())
    keys = set(counts) | set(probabilities)
    big, pooled_obs, pooled_exp = [], 0, 0.0
    for k in sorted(keys):
        e = n * probabilities.get(k, 0.0)
        o = counts.get(k, 0)
        if e >= min_expected:
            big.append((o, e))
        else:
            pooled_obs += o
            pooled_exp += e
    if pooled_exp > 0 or pooled_obs > 0:
        big.append((pooled_obs, pooled_exp))
    stat = 0.0
    for o, e in big:
        if e > 0:
            stat += (o - e) ** 2 / e
        elif o > 0:
            return math.inf, max(1, len(big) - 1), float(chi2.ppf(quantile, max(1, len(big) - 1)))
    dof = max(1, len(big) - 1)
    return stat, dof, float(chi2.ppf(quantile, dof))


@dataclass
class RunStatistics:
    trials: int
    accepts: int
    acceptance_rate: float
    acceptance_interval: tuple[float, float]
    mean_fidelity_on_accept: float | None
    mean_stored_fidelity_on_accept: float | None
    mean_postselected_fidelity: float | None
    mean_prep_attempts: float | None
    class_counts: dict[str, int] = field(default_factory=dict)
    pattern_counts: dict[str, int] = field(default_factory=dict)
    interval_method: str = INTERVAL_METHOD

    def class_frequencies(self) -> dict[str, float]:
        return {k: v / self.trials for k, v in self.class_counts.items()}

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "accepts": self.accepts,
            "acceptance_rate": self.acceptance_rate,
            "acceptance_interval": list(self.acceptance_interval),
            "interval_method": self.interval_method,
            "mean_fidelity_on_accept": self.mean_fidelity_on_accept,
            "mean_stored_fidelity_on_accept": self.mean_stored_fidelity_on_accept,
            "mean_postselected_fidelity": self.mean_postselected_fidelity,
            "mean_prep_attempts": self.mean_prep_attempts,
            "class_counts": dict(self.class_counts),
            "pattern_counts": dict(self.pattern_counts),
        }

    def csv_row(self) -> list:
        """Values in :data:`CSV_COLUMNS` order; absent values are empty strings."""
        lo, hi = self.acceptance_interval
        values = [
            self.trials,
            self.accepts,
            self.acceptance_rate,
            lo,
            hi,
            self.mean_fidelity_on_accept,
            self.mean_stored_fidelity_on_accept,
            self.mean_postselected_fidelity,
            self.mean_prep_attempts,
            *(self.class_counts.get(c, 0) for c in CSV_COLUMNS[-3:]),
        ]
        return ["" if v is None else v for v in values]


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def aggregate(records: Sequence[TrialRecord]) -> RunStatistics:
    from .protocol import PatternClass

    if not records:
        raise ValueError("cannot aggregate an empty record list")
    n = len(records)
    accepted = [r for r in records if r.accepted]
    class_counts = {c.value: 0 for c in PatternClass}
    pattern_counts: dict[str, int] = {}
    for r in records:
        class_counts[r.pattern_class.value] += 1
        key = str(r.pattern)
        pattern_counts[key] = pattern_counts.get(key, 0) + 1
    attempts = [
        a for r in records for a in (r.prep_attempts_A, r.prep_attempts_B) if a is not None
    ]
    ps = [(r.readout_photon_probability, r.postselected_fidelity) for r in accepted if r.postselected_fidelity is not None]
    ps_weight = math.fsum(w for w, _ in ps)
    return RunStatistics(
        trials=n,
        accepts=len(accepted),
        acceptance_rate=len(accepted) / n,
        acceptance_interval=wilson_interval(len(accepted), n),
        mean_fidelity_on_accept=_mean([r.readout_fidelity for r in accepted]),
        mean_stored_fidelity_on_accept=_mean([r.stored_fidelity for r in accepted]),
        mean_postselected_fidelity=(math.fsum(w * f for w, f in ps) / ps_weight) if ps_weight else None,
        mean_prep_attempts=_mean(attempts),
        class_counts=class_counts,
        pattern_counts=dict(sorted(pattern_counts.items())),
    )
