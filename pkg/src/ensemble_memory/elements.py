"""Linear-optical elements and ensemble-to-photon transfer maps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DuplicateModeError, OccupiedTargetError, UnitarityError
from .fock import (
    DEFAULT_N_MAX,
    MixedState,
    ModeLabel,
    PureState,
    apply_mode_map,
    detector,
    photon,
)

UNITARITY_TOL = 1e-12
SQRT_HALF = 1 / math.sqrt(2)

# Bell-analyzer detectors: polarization h/v, up (transmitted) / down (reflected) port.
D_HU = detector("D_h^u")
D_VU = detector("D_v^u")
D_HD = detector("D_h^d")
D_VD = detector("D_v^d")
BELL_DETECTORS = (D_HU, D_VU, D_HD, D_VD)


@dataclass(frozen=True)
class LinearModeMap:
    """Substitution rule a_in^dag -> sum_j c_j a_out_j^dag.

    Modes that are not inputs pass through untouched. Construction checks
    that the coefficient rows are orthonormal, which makes the substitution
    norm preserving.
    """

    rules: tuple  # ((input, ((output, coeff), ...)), ...)
    kind: str = "linear"

    def __post_init__(self):
        rules = tuple(
            (m, tuple((o, complex(c)) for o, c in images)) for m, images in self.rules
        )
        object.__setattr__(self, "rules", rules)
        inputs = [m for m, _ in rules]
        if len(set(inputs)) != len(inputs):
            raise DuplicateModeError(f"{self.kind}: repeated input mode")
        for m, images in rules:
            outs = [o for o, _ in images]
            if len(set(outs)) != len(outs):
                raise DuplicateModeError(f"{self.kind}: input {m} lists an output twice")
        mat = self.matrix()
        gram = mat @ mat.conj().T
        err = float(np.max(np.abs(gram - np.eye(len(inputs))))) if inputs else 0.0
        if err > UNITARITY_TOL:
            raise UnitarityError(f"{self.kind}: rows deviate from orthonormal by {err:.3g}")

    @classmethod
    def from_mapping(cls, rules: Mapping[ModeLabel, Iterable[tuple[ModeLabel, complex]]], kind: str = "linear"):
        return cls(tuple((m, tuple(images)) for m, images in rules.items()), kind)

    @cached_property
    def rule_dict(self) -> dict:
        return dict(self.rules)

    @cached_property
    def inputs(self) -> frozenset:
        return frozenset(m for m, _ in self.rules)

    @cached_property
    def outputs(self) -> frozenset:
        return frozenset(o for _, images in self.rules for o, _ in images)

    @cached_property
    def output_order(self) -> tuple:
        return tuple(sorted(self.outputs))

    def matrix(self) -> np.ndarray:
        """Coefficient matrix, rows = inputs in rule order, columns = sorted outputs."""
        cols = {o: j for j, o in enumerate(sorted({o for _, im in self.rules for o, _ in im}))}
        mat = np.zeros((len(self.rules), len(cols)), dtype=complex)
        for i, (_, images) in enumerate(self.rules):
            for o, c in images:
                mat[i, cols[o]] = c
        return mat

    def coefficient(self, mode_in: ModeLabel, mode_out: ModeLabel) -> complex:
        return dict(self.rule_dict.get(mode_in, ())).get(mode_out, 0j)

    def then(self, other: LinearModeMap) -> LinearModeMap:
        """Composite map: apply ``self`` first, then ``other``."""
        second = other.rule_dict
        rules: dict = {}
        for m, images in self.rules:
            acc: dict = {}
            for o, c in images:
                for o2, c2 in second.get(o, ((o, 1.0),)):
                    acc[o2] = acc.get(o2, 0j) + c * c2
            rules[m] = tuple((o, c) for o, c in sorted(acc.items()) if abs(c) > 0)
        for m, images in other.rules:
            if m not in rules and m not in self.outputs:
                rules[m] = images
        return LinearModeMap.from_mapping(rules, kind=f"{self.kind}+{other.kind}")

    def __call__(self, state: PureState, n_max: int = DEFAULT_N_MAX) -> PureState:
        return apply_mode_map(state, self, n_max)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "modes": [str(m) for m, _ in self.rules],
            "coefficients": {
                str(m): [[str(o), c.real, c.imag] for o, c in images] for m, images in self.rules
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> LinearModeMap:
        coeffs = data["coefficients"]
        rules = tuple(
            (
                ModeLabel.parse(m),
                tuple((ModeLabel.parse(o), complex(re, im)) for o, re, im in coeffs[m]),
            )
            for m in data["modes"]
        )
        return cls(rules, data.get("kind", "linear"))


def _distinct(kind: str, *modes: ModeLabel) -> None:
    if len(set(modes)) != len(modes):
        raise DuplicateModeError(f"{kind}: modes must be distinct, got {[str(m) for m in modes]}")


def make_beamsplitter(
    m1: ModeLabel, m2: ModeLabel, out1: ModeLabel | None = None, out2: ModeLabel | None = None
) -> LinearModeMap:
    """Balanced beam splitter; outputs default to the input modes themselves."""
    out1 = m1 if out1 is None else out1
    out2 = m2 if out2 is None else out2
    _distinct("beamsplitter", m1, m2)
    _distinct("beamsplitter", out1, out2)
    return LinearModeMap(
        (
            (m1, ((out1, SQRT_HALF), (out2, SQRT_HALF))),
            (m2, ((out1, SQRT_HALF), (out2, -SQRT_HALF))),
        ),
        "beamsplitter",
    )


def make_halfwave(h: ModeLabel, v: ModeLabel) -> LinearModeMap:
    """Half-wave plate at 22.5 deg: h -> (h+v)/sqrt2, v -> (h-v)/sqrt2."""
    _distinct("halfwave", h, v)
    return LinearModeMap(
        (
            (h, ((h, SQRT_HALF), (v, SQRT_HALF))),
            (v, ((h, SQRT_HALF), (v, -SQRT_HALF))),
        ),
        "halfwave",
    )


def make_polarization_swap(h: ModeLabel, v: ModeLabel) -> LinearModeMap:
    _distinct("polarization_swap", h, v)
    return LinearModeMap(((h, ((v, 1.0),)), (v, ((h, 1.0),))), "polarization_swap")


def make_pbs(
    in_a: Sequence[ModeLabel],
    in_b: Sequence[ModeLabel],
    out_t: Sequence[ModeLabel],
    out_r: Sequence[ModeLabel],
) -> LinearModeMap:
    """Polarizing beam splitter: horizontal transmits, vertical reflects.

    Each port is an ``(h, v)`` pair of modes.
    """
    _distinct("pbs", *in_a, *in_b, *out_t, *out_r)
    return LinearModeMap(
        (
            (in_a[0], ((out_t[0], 1.0),)),
            (in_a[1], ((out_r[1], 1.0),)),
            (in_b[0], ((out_r[0], 1.0),)),
            (in_b[1], ((out_t[1], 1.0),)),
        ),
        "pbs",
    )


def make_bell_analyzer(anti_stokes: Sequence[ModeLabel], input_photon: Sequence[ModeLabel]) -> LinearModeMap:
    """PBS followed by a half-wave plate on each output port.

    The transmitted port feeds the "u" detectors, the reflected port the "d"
    detectors. Net action:

        anti_stokes.h -> (D_h^u + D_v^u)/sqrt2
        anti_stokes.v -> (D_h^d - D_v^d)/sqrt2
        input.h       -> (D_h^d + D_v^d)/sqrt2
        input.v       -> (D_h^u - D_v^u)/sqrt2
    """
    _distinct("bell_analyzer", *anti_stokes, *input_photon, *BELL_DETECTORS)
    pbs = make_pbs(anti_stokes, input_photon, (D_HU, D_VU), (D_HD, D_VD))
    composite = pbs.then(make_halfwave(D_HU, D_VU)).then(make_halfwave(D_HD, D_VD))
    return LinearModeMap(composite.rules, "bell_analyzer")


def make_transfer(ensemble: ModeLabel, target: ModeLabel) -> LinearModeMap:
    """Anti-pump: the collective excitation becomes a photon in ``target``."""
    _distinct("transfer", ensemble, target)
    return LinearModeMap(((ensemble, ((target, 1.0),)),), "transfer")


def retrieve_excitation(
    state: PureState, ensemble: ModeLabel, target: ModeLabel, eta: float = 1.0, n_max: int = DEFAULT_N_MAX
) -> MixedState:
    """Transfer every excitation of ``ensemble`` to photon mode ``target``.

    Retrieval inefficiency is a loss channel of transmissivity ``eta`` on the
    emitted photon.
    """
    from .detection import apply_loss

    if target in state.modes:
        raise OccupiedTargetError(f"retrieval target {target} is already occupied")
    moved = apply_mode_map(state, make_transfer(ensemble, target), n_max)
    if eta >= 1.0:
        return MixedState.pure(moved)
    return apply_loss(moved, target, eta, n_max)


def polarization_pair(name: str) -> tuple[ModeLabel, ModeLabel]:
    """``(name.h, name.v)`` photon modes of one spatial channel."""
    return photon(f"{name}.h"), photon(f"{name}.v")
