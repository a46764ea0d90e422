"""Detector models, exact outcome enumeration, sampling, dark counts, loss."""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import UnnormalizedStateError
from .fock import (
    DEFAULT_N_MAX,
    MixedState,
    ModeKind,
    ModeLabel,
    PureState,
    apply_mode_map,
    inner_product,
    loss,
    normalize,
)

INPUT_NORM_TOL = 1e-8
MERGE_TOL = 1e-12
DEFAULT_DARK_PROB = 1e-5  # per 0.1 us detection window


@dataclass(frozen=True)
class DetectorModel:
    number_resolving: bool = True
    efficiency: float = 1.0
    dark_prob: float = DEFAULT_DARK_PROB

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValueError(f"dark_prob must lie in [0, 1), got {self.dark_prob}")


@dataclass(frozen=True, order=True)
class ClickPattern:
    """Detectors that fired, with photon counts (or 1 for a bucket click)."""

    clicks: tuple = ()  # sorted ((ModeLabel, count), ...)

    def __post_init__(self):
        clicks = tuple(sorted((m, int(n)) for m, n in self.clicks))
        if any(n < 1 for _, n in clicks):
            raise ValueError("click counts must be >= 1")
        if len({m for m, _ in clicks}) != len(clicks):
            raise ValueError("detector listed twice in a click pattern")
        object.__setattr__(self, "clicks", clicks)

    @classmethod
    def from_names(cls, counts: dict[str, int]) -> ClickPattern:
        return cls(tuple((ModeLabel(ModeKind.DETECTOR, k), v) for k, v in counts.items()))

    def as_dict(self) -> dict:
        return dict(self.clicks)

    def count(self, mode: ModeLabel) -> int:
        return self.as_dict().get(mode, 0)

    def __len__(self) -> int:
        return len(self.clicks)

    def __str__(self) -> str:
        return ",".join(f"{m.name}:{n}" for m, n in sorted(self.clicks, key=lambda e: e[0].name))

    @classmethod
    def parse(cls, text: str, kind: ModeKind = ModeKind.DETECTOR) -> ClickPattern:
        if not text.strip():
            return cls()
        pairs = []
        for item in text.split(","):
            name, _, n = item.rpartition(":")
            pairs.append((ModeLabel(kind, name), int(n)))
        return cls(tuple(pairs))


@dataclass(frozen=True)
class OutcomeBranch:
    pattern: ClickPattern
    probability: float
    residual: PureState


def _same_ray(a: PureState, b: PureState) -> bool:
    return abs(inner_product(a, b)) ** 2 >= 1.0 - MERGE_TOL


def _merge_equal_residuals(branches: list[OutcomeBranch]) -> list[OutcomeBranch]:
    merged: list[OutcomeBranch] = []
    for br in branches:
        for i, prev in enumerate(merged):
            if prev.pattern == br.pattern and _same_ray(prev.residual, br.residual):
                merged[i] = OutcomeBranch(prev.pattern, prev.probability + br.probability, prev.residual)
                break
        else:
            merged.append(br)
    return merged


def apply_loss(state: PureState, mode: ModeLabel, eta: float, n_max: int = DEFAULT_N_MAX) -> MixedState:
    """Loss channel of transmissivity ``eta`` on ``mode``.

    The mode is mixed with a fresh loss mode on a beam splitter and the loss
    mode is traced out by branching on its occupancy.
    """
    from .elements import LinearModeMap

    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmissivity must lie in [0, 1], got {eta}")
    if eta == 1.0 or mode not in state.modes:
        return MixedState.pure(state)
    sink = loss(f"{mode.kind.value}:{mode.name}")
    split = LinearModeMap(((mode, ((mode, math.sqrt(eta)), (sink, math.sqrt(1.0 - eta)))),), "loss")
    mixed = apply_mode_map(state, split, n_max)
    groups: dict[int, dict] = {}
    for occ, a in mixed.terms:
        k = dict(occ).get(sink, 0)
        key = tuple(e for e in occ if e[0] != sink)
        groups.setdefault(k, {})[key] = a
    pairs = []
    for k in sorted(groups):
        part = PureState.from_amplitudes(groups[k])
        if part.is_zero():
            continue
        residual, norm = normalize(part)
        pairs.append((norm**2, residual))
    return MixedState.from_unnormalized(pairs)


def _check_normalized(state: PureState) -> None:
    n2 = state.norm_squared()
    if abs(n2 - 1.0) > INPUT_NORM_TOL:
        raise UnnormalizedStateError(f"measurement input has norm^2 {n2!r}")


def _project(state: PureState, detectors: Sequence[ModeLabel], resolving: bool) -> list[OutcomeBranch]:
    dets = set(detectors)
    groups: dict[tuple, dict] = {}
    for occ, a in state.terms:
        counts = dict(occ)
        signature = tuple(counts.get(d, 0) for d in detectors)
        key = tuple(e for e in occ if e[0] not in dets)
        groups.setdefault(signature, {})[key] = a
    branches = []
    for signature in sorted(groups):
        part = PureState.from_amplitudes(groups[signature])
        if part.is_zero():
            continue
        residual, norm = normalize(part)
        pattern = ClickPattern(
            tuple((d, n if resolving else 1) for d, n in zip(detectors, signature) if n)
        )
        branches.append(OutcomeBranch(pattern, norm**2, residual))
    return branches


def enumerate_outcomes(
    state: PureState, detectors: Sequence[ModeLabel], model: DetectorModel, n_max: int = DEFAULT_N_MAX
) -> list[OutcomeBranch]:
    """All click patterns with their probabilities and conditional residuals.

    With bucket detectors several photon-number signatures share one click
    pattern; each keeps its own residual as a separate branch, except that
    branches whose residuals coincide up to a global phase are merged.
    Detector inefficiency is a loss channel in front of each detector. Dark
    counts are not applied here.
    """
    _check_normalized(state)
    mixture = MixedState.pure(normalize(state)[0])
    if model.efficiency < 1.0:
        for d in detectors:
            mixture = mixture.map(lambda s, d=d: apply_loss(s, d, model.efficiency, n_max))
    branches = []
    for w, s in mixture.branches:
        for br in _project(s, detectors, model.number_resolving):
            branches.append(OutcomeBranch(br.pattern, w * br.probability, br.residual))
    branches.sort(key=lambda b: b.pattern)
    return _merge_equal_residuals(branches)


def pattern_probabilities(branches: Iterable[OutcomeBranch]) -> dict[ClickPattern, float]:
    out: dict[ClickPattern, float] = {}
    for br in branches:
        out[br.pattern] = out.get(br.pattern, 0.0) + br.probability
    return out


def cumulative_weights(branches: Sequence[OutcomeBranch]) -> list[float]:
    return list(itertools.accumulate(b.probability for b in branches))


def sample_branch(
    branches: Sequence[OutcomeBranch], rng: np.random.Generator, cumulative: Sequence[float] | None = None
) -> OutcomeBranch:
    """Draw one branch with probability proportional to its weight (one uniform)."""
    if cumulative is None:
        cumulative = cumulative_weights(branches)
    idx = bisect.bisect_right(cumulative, rng.random() * cumulative[-1])
    return branches[min(idx, len(branches) - 1)]


def sample_outcome(
    state: PureState, detectors: Sequence[ModeLabel], model: DetectorModel, rng: np.random.Generator
) -> OutcomeBranch:
    return sample_branch(enumerate_outcomes(state, detectors, model), rng)


def _add_click(counts: dict, d: ModeLabel, resolving: bool) -> None:
    if resolving:
        counts[d] = counts.get(d, 0) + 1
    else:
        counts[d] = 1


def apply_dark_counts(
    pattern: ClickPattern, detectors: Sequence[ModeLabel], model: DetectorModel, rng: np.random.Generator
) -> ClickPattern:
    """Each detector independently fires spuriously with ``dark_prob``."""
    if model.dark_prob == 0.0:
        return pattern
    fired = rng.random(len(detectors)) < model.dark_prob
    if not fired.any():
        return pattern
    counts = pattern.as_dict()
    for d, f in zip(detectors, fired):
        if f:
            _add_click(counts, d, model.number_resolving)
    return ClickPattern(tuple(counts.items()))


def dark_count_outcomes(
    pattern: ClickPattern, detectors: Sequence[ModeLabel], model: DetectorModel
) -> list[tuple[float, ClickPattern]]:
    """Exact distribution of the pattern after dark counts."""
    q = model.dark_prob
    if q == 0.0:
        return [(1.0, pattern)]
    out = []
    for fired in itertools.product((False, True), repeat=len(detectors)):
        k = sum(fired)
        prob = q**k * (1.0 - q) ** (len(detectors) - k)
        counts = pattern.as_dict()
        for d, f in zip(detectors, fired):
            if f:
                _add_click(counts, d, model.number_resolving)
        out.append((prob, ClickPattern(tuple(counts.items()))))
    return out
