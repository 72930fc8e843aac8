"""Source-sink arithmetic of the GreenLab dynamic system.

Everything here is a pure function of its arguments: beta-law sink variation,
organ and ring demand, Beer-Lambert production, proportional allocation and the
allometric rules turning organ biomass into geometry. The parameter containers
(`BetaShape`, `SinkRule`, ...) validate their domains on construction so that
the simulator can trust them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import AllocationDeadlockError, ParameterDomainError


class OrganKind(enum.Enum):
    """Expanding organ types of a phytomer (ring compartment handled apart)."""

    BLADE = "b"
    PETIOLE = "p"
    PITH = "e"

    @property
    def suffix(self) -> str:
        return self.value


ORGAN_KINDS = (OrganKind.BLADE, OrganKind.PETIOLE, OrganKind.PITH)


class Treatment(enum.Enum):
    """T1 is the single-stem plant, T2 keeps two vegetative branches."""

    T1 = "T1"
    T2 = "T2"

    @property
    def physiological_ages(self) -> tuple[int, ...]:
        return (1,) if self is Treatment.T1 else (1, 2)


@dataclass(frozen=True)
class BetaShape:
    """Shape of the sink variation curve of one organ type.

    Attributes:
        alpha: first beta exponent, >= 1
        beta: second beta exponent, >= 1
        expansion_time: number of GCs during which the organ is a sink
    """

    alpha: float
    beta: float
    expansion_time: int

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 1.0):
                raise ParameterDomainError(f"{name} must be >= 1, got {v!r}", key=name)
        if int(self.expansion_time) != self.expansion_time or self.expansion_time < 1:
            raise ParameterDomainError(
                f"expansion_time must be an integer >= 1, got {self.expansion_time!r}",
                key="expansion_time",
            )


@dataclass(frozen=True)
class SinkRule:
    """Potential sink strength, per-PA coefficients and time profile of an organ type."""

    potential: float
    shape: BetaShape
    pa_coefficient: Mapping[int, float] = field(default_factory=lambda: {1: 1.0})

    def __post_init__(self):
        if not (math.isfinite(self.potential) and self.potential >= 0):
            raise ParameterDomainError(f"potential must be >= 0, got {self.potential!r}")
        if self.pa_coefficient.get(1) != 1.0:
            raise ParameterDomainError("pa_coefficient for PA1 must be exactly 1")
        for pa, c in self.pa_coefficient.items():
            if not (math.isfinite(c) and c >= 0):
                raise ParameterDomainError(f"pa_coefficient[{pa}] must be >= 0, got {c!r}")


@dataclass(frozen=True)
class ProductionRule:
    """Beer-Lambert biomass production: Q = E*S_p/R * (1 - exp(-S/S_p))."""

    resistance: float
    projection_area: float
    e_potential: float = 1.0

    def __post_init__(self):
        for name in ("resistance", "projection_area", "e_potential"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be > 0, got {v!r}", key=name)

    @property
    def ceiling(self) -> float:
        """Supremum of production as blade area grows without bound."""
        return self.e_potential * self.projection_area / self.resistance


@dataclass(frozen=True)
class AllometryRule:
    """Directly measured allometry of one physiological age."""

    specific_leaf_weight: float
    pith_b: float
    pith_a: float
    density: float

    def __post_init__(self):
        for name in ("specific_leaf_weight", "pith_b", "density"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be > 0, got {v!r}", key=name)
        if not math.isfinite(self.pith_a):
            raise ParameterDomainError("pith_a must be finite", key="pith_a")


DEFAULT_BRANCH_DELAYS = (6, 5)


@dataclass(frozen=True)
class ParameterSet:
    """All inputs needed to simulate one treatment.

    ``sinks`` maps each `OrganKind` to its `SinkRule`; ``allometry`` maps each
    physiological age of the treatment to its `AllometryRule`. Branch delays
    are the number of GCs between a bearing main-stem phytomer and the first
    phytomer of the branch it carries (T2 only).
    """

    treatment: Treatment
    production: ProductionRule
    sinks: Mapping[OrganKind, SinkRule]
    ring_potential: float
    allometry: Mapping[int, AllometryRule]
    seed_mass: float
    blade_functional_time: int
    branch_delays: tuple[int, ...] = ()

    def __post_init__(self):
        if set(self.sinks) != set(ORGAN_KINDS):
            raise ParameterDomainError("sinks must define blade, petiole and pith")
        if self.sinks[OrganKind.BLADE].potential != 1.0:
            raise ParameterDomainError("blade potential sink strength is the reference and must be 1", key="P_b")
        if not (math.isfinite(self.ring_potential) and self.ring_potential >= 0):
            raise ParameterDomainError(f"ring potential must be >= 0, got {self.ring_potential!r}", key="P_c")
        if not (math.isfinite(self.seed_mass) and self.seed_mass > 0):
            raise ParameterDomainError(f"seed mass must be > 0, got {self.seed_mass!r}", key="Q_s")
        tf = self.blade_functional_time
        if int(tf) != tf or tf < 1:
            raise ParameterDomainError(f"blade functional time must be an integer >= 1, got {tf!r}", key="T_f")

        pas = set(self.treatment.physiological_ages)
        if set(self.allometry) != pas:
            raise ParameterDomainError(
                f"{self.treatment.value} needs allometry for PA {sorted(pas)}, got {sorted(self.allometry)}"
            )
        for kind, rule in self.sinks.items():
            if set(rule.pa_coefficient) != pas:
                raise ParameterDomainError(
                    f"{self.treatment.value} needs C_{kind.suffix} for PA {sorted(pas)}, got {sorted(rule.pa_coefficient)}",
                    key=f"C_{kind.suffix}",
                )
        densities = {rule.density for rule in self.allometry.values()}
        if len(densities) != 1:
            raise ParameterDomainError("pith and ring density must be shared by all PAs", key="rho")

        if self.treatment is Treatment.T1:
            if self.branch_delays:
                raise ParameterDomainError("branch delays do not apply to T1", key="delay")
        else:
            if not self.branch_delays:
                object.__setattr__(self, "branch_delays", DEFAULT_BRANCH_DELAYS)
            delays = tuple(self.branch_delays)
            if len(delays) != 2 or any(int(d) != d or d < 1 for d in delays):
                raise ParameterDomainError(f"T2 needs two integer branch delays >= 1, got {delays!r}", key="delay")
            object.__setattr__(self, "branch_delays", tuple(int(d) for d in delays))

    @property
    def density(self) -> float:
        return next(iter(self.allometry.values())).density

    def sink_coefficient(self, kind: OrganKind, pa: int) -> float:
        """C_{o,PA} * P_o for organs of ``kind`` borne by an axis of age ``pa``."""
        rule = self.sinks[kind]
        try:
            return rule.pa_coefficient[pa] * rule.potential
        except KeyError:
            raise ParameterDomainError(f"unknown physiological age {pa}") from None


def _g(shape: BetaShape, k: int) -> float:
    x = (k - 0.5) / shape.expansion_time
    return x ** (shape.alpha - 1.0) * (1.0 - x) ** (shape.beta - 1.0)


def sink_variation_table(shape: BetaShape, max_age: int | None = None) -> list[float]:
    """f_o(k) for k = 0..max_age (index 0 is a zero pad)."""
    t = shape.expansion_time
    g = [_g(shape, k) for k in range(1, t + 1)]
    peak = max(g)
    n = t if max_age is None else max_age
    table = [0.0] * (n + 1)
    for k in range(1, min(t, n) + 1):
        table[k] = g[k - 1] / peak
    return table


def sink_variation(shape: BetaShape, age: int) -> float:
    """Normalized beta-law sink variation of an organ at chronological ``age``.

    The curve is sampled at the GC midpoints ``k - 0.5`` and divided by its
    maximum over the integer grid 1..T, so some age always reaches exactly 1.
    Past the expansion time the organ no longer draws biomass.
    """
    if age < 1:
        raise ParameterDomainError(f"age must be >= 1, got {age!r}")
    if age > shape.expansion_time:
        return 0.0
    peak = max(_g(shape, k) for k in range(1, shape.expansion_time + 1))
    return _g(shape, age) / peak


def organ_sink(rule: SinkRule, pa: int, age: int) -> float:
    """Sink strength D = C_{o,PA} * P_o * f_o(age)."""
    try:
        c = rule.pa_coefficient[pa]
    except KeyError:
        raise ParameterDomainError(f"unknown physiological age {pa}") from None
    return c * rule.potential * sink_variation(rule.shape, age)


def ring_demand(ring_potential: float, functional_leaf_counts: Mapping[int, int] | list[int]) -> float:
    """Ring compartment demand, proportional to the number of functional leaves."""
    counts = functional_leaf_counts.values() if isinstance(functional_leaf_counts, Mapping) else functional_leaf_counts
    total = 0
    for n in counts:
        if n < 0:
            raise ParameterDomainError(f"functional leaf count must be >= 0, got {n!r}")
        total += n
    return ring_potential * total


def production(rule: ProductionRule, total_functional_blade_area: float) -> float:
    """Biomass produced in one GC from the functional blade area (cm2)."""
    if total_functional_blade_area < 0:
        raise ParameterDomainError(f"blade area must be >= 0, got {total_functional_blade_area!r}")
    sp = rule.projection_area
    return rule.e_potential * sp / rule.resistance * -math.expm1(-total_functional_blade_area / sp)


def allocate_increment(q_produced: float, organ_demand: float, total_demand: float) -> float:
    """Share of ``q_produced`` going to a sink of strength ``organ_demand``."""
    if q_produced == 0:
        return 0.0
    if total_demand <= 0:
        raise AllocationDeadlockError(f"{q_produced!r} g produced but total demand is {total_demand!r}")
    return q_produced * organ_demand / total_demand


def pith_geometry(volume: float, pith_b: float, pith_a: float) -> tuple[float, float]:
    """Length (cm) and cross-section (cm2) of a cylindrical pith of given volume."""
    if volume <= 0:
        raise ParameterDomainError(f"pith volume must be > 0, got {volume!r}")
    length = math.sqrt(pith_b) * volume ** ((1.0 + pith_a) / 2.0)
    return length, volume / length


def blade_area(blade_mass: float, specific_leaf_weight: float) -> float:
    if blade_mass < 0:
        raise ParameterDomainError(f"blade mass must be >= 0, got {blade_mass!r}")
    return blade_mass / specific_leaf_weight


def ring_increment(ring_mass_share: float, density: float, pith_length: float) -> float:
    """Cross-section gained by an internode receiving ``ring_mass_share`` grams of ring."""
    if pith_length <= 0:
        raise ParameterDomainError(f"pith length must be > 0, got {pith_length!r}")
    return ring_mass_share / (density * pith_length)


def section_diameter(cross_section: float) -> float:
    """Diameter of a circle with the given area."""
    return 2.0 * math.sqrt(cross_section / math.pi)
