"""Sparse bosonic Fock-space algebra over named modes.

States are immutable. A :class:`PureState` is a canonically ordered tuple of
``(occupation, amplitude)`` terms, where an occupation is itself a sorted
tuple of ``(ModeLabel, count)`` pairs with no zero counts. Every operation
returns a new state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Mapping

from .errors import (
    TruncationError,
    UnknownModeError,
    UnnormalizedStateError,
    ZeroStateError,
)

if TYPE_CHECKING:
    from .elements import LinearModeMap

DEFAULT_N_MAX = 4
EPS_PRUNE = 1e-15
NORM_TOL = 1e-10


class ModeKind(str, Enum):
    ENSEMBLE = "ensemble"
    PHOTON = "photon"
    DETECTOR = "detector"
    LOSS = "loss"


@dataclass(frozen=True, order=True)
class ModeLabel:
    """A bosonic mode: an ensemble's collective mode or an optical channel.

    Ordering is lexicographic on ``(kind, name)``.
    """

    kind: ModeKind
    name: str

    def __post_init__(self):
        object.__setattr__(self, "kind", ModeKind(self.kind))

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.name}"

    def __repr__(self) -> str:
        return f"ModeLabel({self.kind.value!r}, {self.name!r})"

    @classmethod
    def parse(cls, text: str) -> ModeLabel:
        kind, sep, name = text.partition(":")
        if not sep or not name:
            raise ValueError(f"mode label must look like 'kind:name', got {text!r}")
        return cls(ModeKind(kind), name)


def ensemble(name: str) -> ModeLabel:
    return ModeLabel(ModeKind.ENSEMBLE, name)


def photon(name: str) -> ModeLabel:
    return ModeLabel(ModeKind.PHOTON, name)


def detector(name: str) -> ModeLabel:
    return ModeLabel(ModeKind.DETECTOR, name)


def loss(name: str) -> ModeLabel:
    return ModeLabel(ModeKind.LOSS, name)


Occupation = tuple  # tuple[tuple[ModeLabel, int], ...], sorted, no zeros


def occupation(counts: Mapping[ModeLabel, int] | Iterable[tuple[ModeLabel, int]] = ()) -> Occupation:
    """Canonical occupation tuple from a mode -> count association."""
    items = counts.items() if isinstance(counts, Mapping) else counts
    merged: dict[ModeLabel, int] = {}
    for mode, n in items:
        if n < 0:
            raise ValueError(f"negative occupancy {n} for {mode}")
        merged[mode] = merged.get(mode, 0) + int(n)
    return tuple(sorted((m, n) for m, n in merged.items() if n))


def _canonical_terms(amplitudes: Mapping[Occupation, complex]) -> tuple:
    return tuple(
        sorted(
            ((occ, complex(a)) for occ, a in amplitudes.items() if abs(a) >= EPS_PRUNE),
            key=lambda t: t[0],
        )
    )


@dataclass(frozen=True)
class PureState:
    """Sparse (possibly unnormalized) Fock vector.

    Build states with :meth:`from_amplitudes`, :meth:`vacuum` or
    :meth:`basis`; the raw constructor trusts ``terms`` to be canonical.
    """

    terms: tuple = ()

    @classmethod
    def from_amplitudes(cls, amplitudes: Mapping[Occupation, complex]) -> PureState:
        return cls(_canonical_terms(amplitudes))

    @classmethod
    def vacuum(cls) -> PureState:
        return cls((((), 1 + 0j),))

    @classmethod
    def basis(cls, counts: Mapping[ModeLabel, int] | None = None, amplitude: complex = 1.0) -> PureState:
        return cls.from_amplitudes({occupation(counts or {}): amplitude})

    @cached_property
    def amplitudes(self) -> dict:
        return dict(self.terms)

    def amplitude(self, counts: Mapping[ModeLabel, int] | Occupation) -> complex:
        occ = occupation(counts) if isinstance(counts, Mapping) else counts
        return self.amplitudes.get(occ, 0j)

    @cached_property
    def modes(self) -> frozenset:
        """Modes with nonzero occupancy in at least one term."""
        return frozenset(m for occ, _ in self.terms for m, _ in occ)

    def norm_squared(self) -> float:
        return math.fsum(abs(a) ** 2 for _, a in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return abs(self.norm_squared() - 1.0) <= tol

    def map_terms(self, fn) -> PureState:
        """Apply ``fn(occupation, amplitude) -> amplitude`` to every term."""
        return PureState.from_amplitudes({occ: fn(occ, a) for occ, a in self.terms})

    def drop_modes(self, modes: Iterable[ModeLabel]) -> PureState:
        """Remove ``modes`` from every occupation (caller guarantees they are fixed)."""
        drop = set(modes)
        out: dict = {}
        for occ, a in self.terms:
            key = tuple(e for e in occ if e[0] not in drop)
            out[key] = out.get(key, 0j) + a
        return PureState.from_amplitudes(out)

    def __add__(self, other: PureState) -> PureState:
        out = dict(self.terms)
        for occ, a in other.terms:
            out[occ] = out.get(occ, 0j) + a
        return PureState.from_amplitudes(out)

    def __sub__(self, other: PureState) -> PureState:
        return self + (-1) * other

    def __mul__(self, scalar: complex) -> PureState:
        return PureState.from_amplitudes({occ: scalar * a for occ, a in self.terms})

    __rmul__ = __mul__

    def __neg__(self) -> PureState:
        return -1 * self

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for occ, a in self.terms:
            ket = ", ".join(f"{m.name}={n}" for m, n in occ) or "vac"
            parts.append(f"({a.real:+.6g}{a.imag:+.6g}j)|{ket}>")
        return " ".join(parts)

    def to_json(self) -> list:
        return [
            {"occupancy": {str(m): n for m, n in occ}, "re": a.real, "im": a.imag}
            for occ, a in self.terms
        ]

    @classmethod
    def from_json(cls, data: list) -> PureState:
        amps = {}
        for term in data:
            occ = occupation({ModeLabel.parse(k): v for k, v in term["occupancy"].items()})
            amps[occ] = complex(term["re"], term["im"])
        return cls.from_amplitudes(amps)


@dataclass(frozen=True)
class MixedState:
    """Probabilistic mixture of normalized pure states (a branch list)."""

    branches: tuple = ()

    def __post_init__(self):
        branches = tuple((float(w), s) for w, s in self.branches)
        object.__setattr__(self, "branches", branches)
        if not branches:
            raise ValueError("a mixture needs at least one branch")
        if any(w < 0 for w, _ in branches):
            raise ValueError("negative branch weight")
        total = math.fsum(w for w, _ in branches)
        if abs(total - 1.0) > NORM_TOL:
            raise ValueError(f"branch weights sum to {total!r}, not 1")
        for _, s in branches:
            if not s.is_normalized():
                raise UnnormalizedStateError(f"mixture branch has norm^2 {s.norm_squared()!r}")

    @classmethod
    def pure(cls, state: PureState) -> MixedState:
        return cls(((1.0, state),))

    @classmethod
    def from_unnormalized(cls, pairs: Iterable[tuple[float, PureState]]) -> MixedState:
        """Renormalize weights, dropping zero-weight branches."""
        pairs = [(w, s) for w, s in pairs if w > 0]
        total = math.fsum(w for w, _ in pairs)
        if total <= 0:
            raise ZeroStateError("mixture has no weight")
        return cls(tuple((w / total, s) for w, s in pairs))

    def map(self, fn) -> MixedState:
        """Apply ``fn(PureState) -> MixedState`` to every branch and flatten."""
        out = []
        for w, s in self.branches:
            for w2, s2 in fn(s).branches:
                out.append((w * w2, s2))
        return MixedState.from_unnormalized(out)

    def to_json(self) -> list:
        return [{"weight": w, "state": s.to_json()} for w, s in self.branches]

    @classmethod
    def from_json(cls, data: list) -> MixedState:
        return cls(tuple((b["weight"], PureState.from_json(b["state"])) for b in data))


def _create_into(amplitudes: Mapping, mode: ModeLabel, coeff: complex, out: dict, n_max: int) -> None:
    for occ, a in amplitudes.items():
        counts = dict(occ)
        n = counts.get(mode, 0)
        if n + 1 > n_max:
            raise TruncationError(
                f"occupancy of {mode} would reach {n + 1} > N_max={n_max}"
            )
        counts[mode] = n + 1
        key = tuple(sorted(counts.items()))
        out[key] = out.get(key, 0j) + coeff * math.sqrt(n + 1) * a


def apply_creation(state: PureState, mode: ModeLabel, n_max: int = DEFAULT_N_MAX) -> PureState:
    """Apply the creation operator of ``mode``."""
    out: dict = {}
    _create_into(state.amplitudes, mode, 1.0, out, n_max)
    return PureState.from_amplitudes(out)


def apply_combination(
    state: PureState, combination: Iterable[tuple[ModeLabel, complex]], n_max: int = DEFAULT_N_MAX
) -> PureState:
    """Apply sum_j c_j a_j^dagger, e.g. a polarization qubit photon."""
    out: dict = {}
    for mode, c in combination:
        _create_into(state.amplitudes, mode, c, out, n_max)
    return PureState.from_amplitudes(out)


def inner_product(a: PureState, b: PureState) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    if len(a.terms) > len(b.terms):
        big = a.amplitudes
        return sum((big[occ].conjugate() * x for occ, x in b.terms if occ in big), 0j)
    big = b.amplitudes
    return sum((x.conjugate() * big[occ] for occ, x in a.terms if occ in big), 0j)


def normalize(state: PureState) -> tuple[PureState, float]:
    norm = math.sqrt(state.norm_squared())
    if norm == 0.0:
        raise ZeroStateError("cannot normalize the null vector")
    return (1.0 / norm) * state, norm


def tensor(a: PureState, b: PureState) -> PureState:
    """Product of two states on disjoint mode sets."""
    if a.modes & b.modes:
        raise ValueError(f"tensor factors share modes {sorted(a.modes & b.modes)}")
    out = {}
    for occ_a, x in a.terms:
        for occ_b, y in b.terms:
            out[tuple(sorted(occ_a + occ_b))] = x * y
    return PureState.from_amplitudes(out)


def apply_mode_map(state: PureState, mode_map: LinearModeMap, n_max: int = DEFAULT_N_MAX) -> PureState:
    """Substitute every mapped creation operator by its image and re-expand.

    A basis term prod_m (a_m^dag)^n_m / sqrt(n_m!) |0> becomes the same
    product with each a_m^dag replaced by sum_j U_mj b_j^dag.
    """
    rules = mode_map.rule_dict
    clashes = (state.modes & mode_map.outputs) - mode_map.inputs
    if clashes:
        names = ", ".join(str(m) for m in sorted(clashes))
        raise UnknownModeError(
            f"state occupies {names}, which the map writes to but does not transform"
        )
    out: dict = {}
    for occ, a in state.terms:
        kept = tuple(e for e in occ if e[0] not in rules)
        current = {kept: a}
        for mode, n in occ:
            if mode not in rules:
                continue
            for _ in range(n):
                nxt: dict = {}
                for target, c in rules[mode]:
                    _create_into(current, target, c, nxt, n_max)
                current = nxt
            scale = 1.0 / math.sqrt(math.factorial(n))
            current = {k: v * scale for k, v in current.items()}
        for k, v in current.items():
            out[k] = out.get(k, 0j) + v
    return PureState.from_amplitudes(out)
