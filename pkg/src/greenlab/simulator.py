"""The GC-by-GC dynamic system: production, demand, allocation, geometry.

State arrays are indexed by phytomer in appearance order, so the organs of
GC ``i`` extend those of GC ``i - 1`` by appending rows. Organ mass columns are
ordered blade, petiole, pith (see `ORGAN_KINDS`).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import (
    ORGAN_KINDS,
    OrganKind,
    ParameterSet,
    production,
    sink_variation_table,
)
from .errors import AllocationDeadlockError, ParameterDomainError
from .topology import MAIN_STEM, Phytomer, PlantStructure, structure_at

BLADE, PETIOLE, PITH = 0, 1, 2


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OrganState:
    phytomer: Phytomer
    kind: OrganKind
    cumulative_mass: float
    age: int


@dataclass(frozen=True, eq=False)
class PlantState:
    """Plant at the end of GC ``gc``.

    Attributes:
        masses: (n, 3) cumulative blade, petiole and pith biomass (g)
        ring_mass: (n,) ring biomass accumulated by each internode (g)
        ring_section: (n,) cross-section added by rings (cm2)
        production: biomass produced during this GC, Q(i)
        total_demand: D_t(i), organ sinks plus ring demand
        ring_demand: D_c(i)
        allocated: sum of all increments handed out during this GC
        total_production: Q_s + sum of Q(j) for j = 2..gc
        functional_area: blade area that drove this GC's production
    """

    gc: int
    structure: PlantStructure
    masses: np.ndarray
    ring_mass: np.ndarray
    ring_section: np.ndarray
    production: float
    total_demand: float
    ring_demand: float
    allocated: float
    total_production: float
    functional_area: float

    @property
    def phytomers(self) -> tuple[Phytomer, ...]:
        return self.structure.phytomers

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses.ravel()) + math.fsum(self.ring_mass)

    def internode_mass(self) -> np.ndarray:
        return self.masses[:, PITH] + self.ring_mass

    def organ_states(self) -> Iterator[OrganState]:
        for idx, p in enumerate(self.phytomers):
            for col, kind in enumerate(ORGAN_KINDS):
                yield OrganState(p, kind, float(self.masses[idx, col]), p.age(self.gc))


class _Kernel:
    """Per-phytomer constant arrays for one parameter set and horizon."""

    def __init__(self, params: ParameterSet, horizon: int):
        self.params = params
        self.horizon = horizon
        s = structure_at(params.treatment, horizon, params.branch_delays or (6, 5))
        self.structure = s
        pas = [s.axes[p.axis_id].pa for p in s.phytomers]
        self.appearance = np.array([p.appearance_gc for p in s.phytomers], dtype=np.int64)
        self.coef = np.array([[params.sink_coefficient(k, pa) for k in ORGAN_KINDS] for pa in pas]).reshape(-1, 3)
        self.ftab = np.array([sink_variation_table(params.sinks[k].shape, horizon) for k in ORGAN_KINDS]).T
        self.eps = np.array([params.allometry[pa].specific_leaf_weight for pa in pas])
        self.pith_b = np.array([params.allometry[pa].pith_b for pa in pas])
        self.pith_a = np.array([params.allometry[pa].pith_a for pa in pas])
        self.rho = params.density
        self.counts = [s.count_at(i) for i in range(horizon + 1)]
        self.structures = [structure_at(params.treatment, i, params.branch_delays or (6, 5)) for i in range(horizon + 1)]

    def pith_lengths(self, pith_mass: np.ndarray) -> np.ndarray:
        n = len(pith_mass)
        return pith_lengths(pith_mass, self.rho, self.pith_b[:n], self.pith_a[:n])

    def step(self, prev: PlantState | None, gc: int) -> PlantState:
        p = self.params
        n = self.counts[gc]
        n_prev = 0 if prev is None else len(prev.masses)
        masses = np.zeros((n, 3))
        ring_mass = np.zeros(n)
        ring_section = np.zeros(n)
        if prev is not None:
            masses[:n_prev] = prev.masses
            ring_mass[:n_prev] = prev.ring_mass
            ring_section[:n_prev] = prev.ring_section

        completed = gc - self.appearance[:n]
        functional = (completed >= 1) & (completed <= p.blade_functional_time)
        area = float(np.sum(masses[functional, BLADE] / self.eps[:n][functional]))
        n_functional = int(functional.sum())

        if gc == 1:
            q = p.seed_mass
        else:
            q = production(p.production, area)

        demands = self.coef[:n] * self.ftab[completed + 1]
        d_ring = p.ring_potential * n_functional
        d_total = float(demands.sum()) + d_ring

        if q > 0 and d_total <= 0:
            raise AllocationDeadlockError(f"{q!r} g produced but total demand is {d_total!r}", gc=gc)

        allocated = 0.0
        if q > 0:
            increments = q * demands / d_total
            ring_total = q * d_ring / d_total
            allocated = math.fsum(increments.ravel())
            if ring_total > 0:
                # rings attach to internodes by pith length at the beginning of the GC
                lengths = self.pith_lengths(masses[:, PITH])
                total_length = float(lengths.sum())
                if total_length <= 0:
                    raise AllocationDeadlockError(
                        f"{ring_total!r} g of ring biomass but no internode has a pith yet", gc=gc
                    )
                share = ring_total * lengths / total_length
                ring_mass += share
                has_pith = lengths > 0
                ring_section[has_pith] += share[has_pith] / (self.rho * lengths[has_pith])
                allocated += math.fsum(share)
            masses += increments

        total_production = q + (0.0 if prev is None else prev.total_production)
        return PlantState(
            gc=gc,
            structure=self.structures[gc],
            masses=_frozen(masses),
            ring_mass=_frozen(ring_mass),
            ring_section=_frozen(ring_section),
            production=q,
            total_demand=d_total,
            ring_demand=d_ring,
            allocated=allocated,
            total_production=total_production,
            functional_area=area,
        )


def pith_lengths(pith_mass: np.ndarray, density: float, pith_b: np.ndarray, pith_a: np.ndarray) -> np.ndarray:
    """Vectorized pith length; zero where the pith has no mass yet."""
    volume = pith_mass / density
    out = np.zeros_like(volume)
    pos = volume > 0
    out[pos] = np.sqrt(pith_b[pos]) * volume[pos] ** ((1.0 + pith_a[pos]) / 2.0)
    return out


def initialize(params: ParameterSet) -> PlantState:
    """State at the end of GC 1: the seed split among the first phytomer's organs."""
    return _Kernel(params, 1).step(None, 1)


def step(state: PlantState, params: ParameterSet) -> PlantState:
    """Advance ``state`` by one GC."""
    gc = state.gc + 1
    return _Kernel(params, gc).step(state, gc)


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    params: ParameterSet
    states: tuple[PlantState, ...]

    def __len__(self) -> int:
        return len(self.states)

    @property
    def final(self) -> PlantState:
        return self.states[-1]

    def at(self, gc: int) -> PlantState:
        if not 1 <= gc <= len(self.states):
            raise IndexError(f"GC {gc} outside simulated range 1..{len(self.states)}")
        return self.states[gc - 1]

    def production_series(self) -> np.ndarray:
        return np.array([s.production for s in self.states])

    def organ_series(self, index: int, column: int) -> np.ndarray:
        """Cumulative mass of one organ of phytomer ``index`` over GCs (0 before it appears)."""
        return np.array([s.masses[index, column] if index < len(s.masses) else 0.0 for s in self.states])

    def rows(self) -> Iterator[tuple]:
        """Rows (gc, axis, rank, organ, age, mass_g, dimension, unit) for export."""
        for state in self.states:
            geo = organ_geometry(state, self.params)
            for idx, p in enumerate(state.phytomers):
                age = p.age(state.gc)
                m = state.masses[idx]
                yield (state.gc, p.axis_id, p.rank, "blade", age, m[BLADE], geo.blade_area[idx], "area_cm2")
                yield (state.gc, p.axis_id, p.rank, "petiole", age, m[PETIOLE], None, "")
                yield (state.gc, p.axis_id, p.rank, "pith", age, m[PITH], geo.pith_length[idx], "length_cm")
                yield (
                    state.gc, p.axis_id, p.rank, "internode", age,
                    m[PITH] + state.ring_mass[idx], geo.diameter[idx], "diameter_cm",
                )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gc", "axis", "rank", "organ", "age", "mass_g", "dimension", "unit"])
        for gc, axis, rank, organ, age, mass, dim, unit in self.rows():
            w.writerow([gc, axis, rank, organ, age, repr(float(mass)), "" if dim is None else repr(float(dim)), unit])
        return buf.getvalue()


def run(params: ParameterSet, n_gc: int) -> SimulationTrace:
    """Simulate GCs 1..n_gc and keep every end-of-GC state."""
    if n_gc < 1:
        raise ParameterDomainError(f"horizon must be >= 1 GC, got {n_gc!r}")
    kernel = _Kernel(params, n_gc)
    states = []
    state = None
    for gc in range(1, n_gc + 1):
        state = kernel.step(state, gc)
        states.append(state)
    return SimulationTrace(params=params, states=tuple(states))


@dataclass(frozen=True, eq=False)
class OrganGeometry:
    blade_area: np.ndarray
    pith_length: np.ndarray
    pith_section: np.ndarray
    total_section: np.ndarray
    diameter: np.ndarray


def organ_geometry(state: PlantState, params: ParameterSet) -> OrganGeometry:
    """Blade areas and internode dimensions of every phytomer in ``state``."""
    axes = state.structure.axes
    pas = [axes[p.axis_id].pa for p in state.phytomers]
    allo = params.allometry
    eps = np.array([allo[pa].specific_leaf_weight for pa in pas])
    b = np.array([allo[pa].pith_b for pa in pas])
    a = np.array([allo[pa].pith_a for pa in pas])
    pith_mass = state.masses[:, PITH]
    length = pith_lengths(pith_mass, params.density, b, a)
    section = np.zeros_like(length)
    pos = length > 0
    section[pos] = pith_mass[pos] / params.density / length[pos]
    total = section + state.ring_section
    return OrganGeometry(
        blade_area=state.masses[:, BLADE] / eps,
        pith_length=length,
        pith_section=section,
        total_section=total,
        diameter=2.0 * np.sqrt(total / math.pi),
    )


@dataclass(frozen=True)
class Segment:
    axis_id: int
    rank: int
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    diameter: float
    blade_area: float

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)


@dataclass(frozen=True)
class Skeleton:
    gc: int
    segments: tuple[Segment, ...]

    def to_text(self) -> str:
        lines = [f"# skeleton at GC {self.gc}", "axis rank x0 y0 z0 x1 y1 z1 diameter_cm blade_area_cm2"]
        for s in self.segments:
            coords = " ".join(f"{v:.6f}" for v in (*s.start, *s.end))
            lines.append(f"{s.axis_id} {s.rank} {coords} {s.diameter:.6f} {s.blade_area:.6f}")
        return "\n".join(lines) + "\n"


def snapshot_geometry(state: PlantState, params: ParameterSet, insertion_angle: float = 45.0) -> Skeleton:
    """Schematic 3D skeleton: vertical main stem, straight branches at ``insertion_angle`` degrees.

    Each internode is one segment from its lower to its upper node; the blade
    of the phytomer is attached at the upper node. Successive branches
    alternate azimuth by 180 degrees; phyllotaxy is ignored.
    """
    geo = organ_geometry(state, params)
    index = {(p.axis_id, p.rank): i for i, p in enumerate(state.phytomers)}
    theta = math.radians(insertion_angle)
    segments = []
    tops: dict[int, tuple[float, float, float]] = {}

    for axis in state.structure.axes:
        if axis.id == MAIN_STEM:
            origin = (0.0, 0.0, 0.0)
            direction = (0.0, 0.0, 1.0)
        else:
            origin = tops.get(axis.bearing_rank)
            if origin is None:
                continue
            phi = math.pi * (axis.id - 1)
            direction = (math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta))
        pos = origin
        rank = 1
        while (axis.id, rank) in index:
            i = index[(axis.id, rank)]
            length = float(geo.pith_length[i])
            end = tuple(c + length * d for c, d in zip(pos, direction))
            segments.append(Segment(axis.id, rank, pos, end, float(geo.diameter[i]), float(geo.blade_area[i])))
            if axis.id == MAIN_STEM:
                tops[rank] = end
            pos = end
            rank += 1
    return Skeleton(gc=state.gc, segments=tuple(segments))


def sink_curves(params: ParameterSet, max_age: int | None = None) -> list[tuple[int, float, float, float]]:
    """(k, f_blade, f_petiole, f_pith) for k = 1..max_age."""
    if max_age is None:
        max_age = max(params.sinks[k].shape.expansion_time for k in ORGAN_KINDS)
    tables = [sink_variation_table(params.sinks[k].shape, max_age) for k in ORGAN_KINDS]
    return [(k, tables[0][k], tables[1][k], tables[2][k]) for k in range(1, max_age + 1)]
