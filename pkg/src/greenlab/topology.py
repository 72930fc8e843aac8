"""Phytomer topology of pruned cotton.

The main stem (PA1) emits one phytomer per GC from GC 1. Under T2 the
phytomers at main-stem ranks 5 and 6 each carry a vegetative branch (PA2)
whose first phytomer appears a fixed number of GCs after its bearer.
Structures are immutable snapshots; `develop` returns a new one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .core import DEFAULT_BRANCH_DELAYS, Treatment
from .errors import ParameterDomainError, SequencingError

BRANCH_BEARING_RANKS = (5, 6)
MAIN_STEM = 0


@dataclass(frozen=True)
class Axis:
    id: int
    pa: int
    bearing_rank: int | None
    emergence_gc: int

    def phytomer_count(self, gc: int) -> int:
        return max(0, gc - self.emergence_gc + 1)


@dataclass(frozen=True)
class Phytomer:
    axis_id: int
    rank: int
    appearance_gc: int

    def age(self, gc: int) -> int:
        """Chronological age during GC ``gc`` (1 in the GC of appearance)."""
        return gc - self.appearance_gc + 1


@dataclass(frozen=True)
class PlantStructure:
    """Topology developed up to GC ``gc``.

    ``axes`` lists every axis the treatment will ever have; an axis carries
    phytomers only once ``gc`` reaches its emergence GC. ``phytomers`` is
    ordered by appearance GC, then axis id, so the phytomers present at any
    earlier GC form a prefix of the tuple.
    """

    treatment: Treatment
    axes: tuple[Axis, ...]
    phytomers: tuple[Phytomer, ...] = ()
    gc: int = 0

    def axis(self, axis_id: int) -> Axis:
        return self.axes[axis_id]

    def axis_phytomers(self, axis_id: int) -> list[Phytomer]:
        return [p for p in self.phytomers if p.axis_id == axis_id]

    def count_at(self, gc: int) -> int:
        """Number of phytomers present at GC ``gc`` (a prefix length)."""
        return sum(a.phytomer_count(min(gc, self.gc)) for a in self.axes)

    def axes_with_pa(self, pa: int) -> list[Axis]:
        return [a for a in self.axes if a.pa == pa]


def plan_axes(treatment: Treatment, branch_delays: tuple[int, ...] = DEFAULT_BRANCH_DELAYS) -> tuple[Axis, ...]:
    """All axes of a treatment with their emergence GCs."""
    main = Axis(id=MAIN_STEM, pa=1, bearing_rank=None, emergence_gc=1)
    if treatment is Treatment.T1:
        return (main,)
    if len(branch_delays) != len(BRANCH_BEARING_RANKS):
        raise ParameterDomainError(f"expected {len(BRANCH_BEARING_RANKS)} branch delays, got {branch_delays!r}")
    branches = tuple(
        # bearing phytomer appears at GC == its rank on the main stem
        Axis(id=i + 1, pa=2, bearing_rank=rank, emergence_gc=main.emergence_gc + rank - 1 + delay)
        for i, (rank, delay) in enumerate(zip(BRANCH_BEARING_RANKS, branch_delays))
    )
    return (main, *branches)


def new_structure(treatment: Treatment, branch_delays: tuple[int, ...] = DEFAULT_BRANCH_DELAYS) -> PlantStructure:
    """Empty structure before GC 1."""
    return PlantStructure(treatment=treatment, axes=plan_axes(treatment, branch_delays))


def develop(structure: PlantStructure, gc: int) -> PlantStructure:
    """Advance ``structure`` by one GC, adding one phytomer per emerged axis."""
    if gc != structure.gc + 1:
        raise SequencingError(f"structure is at GC {structure.gc}; cannot develop GC {gc}")
    new = tuple(
        Phytomer(axis_id=a.id, rank=gc - a.emergence_gc + 1, appearance_gc=gc)
        for a in structure.axes
        if a.emergence_gc <= gc
    )
    return PlantStructure(
        treatment=structure.treatment,
        axes=structure.axes,
        phytomers=structure.phytomers + new,
        gc=gc,
    )


@lru_cache(maxsize=1024)
def structure_at(treatment: Treatment, gc: int, branch_delays: tuple[int, ...] = DEFAULT_BRANCH_DELAYS) -> PlantStructure:
    """Structure developed from scratch to ``gc`` (memoized; structures are immutable)."""
    if gc <= 0:
        return new_structure(treatment, branch_delays)
    return develop(structure_at(treatment, gc - 1, branch_delays), gc)


def _is_functional(p: Phytomer, gc: int, functional_time: int) -> bool:
    # a blade contributes from the GC after it appeared through T_f GCs later
    return 1 <= gc - p.appearance_gc <= functional_time


def functional_leaf_count(structure: PlantStructure, gc: int, pa: int, functional_time: int) -> int:
    """Number of functional blades of axes with age ``pa`` at the beginning of GC ``gc``."""
    if gc < 1:
        raise ParameterDomainError(f"gc must be >= 1, got {gc!r}")
    pa_axes = {a.id for a in structure.axes if a.pa == pa}
    return sum(1 for p in structure.phytomers if p.axis_id in pa_axes and _is_functional(p, gc, functional_time))


def functional_blade_cohort(structure: PlantStructure, gc: int, functional_time: int) -> list[tuple[Phytomer, int, int]]:
    """(phytomer, pa, age) for every functional blade at the beginning of GC ``gc``.

    Age here counts completed GCs, ``gc - appearance_gc``.
    """
    if gc < 1:
        raise ParameterDomainError(f"gc must be >= 1, got {gc!r}")
    return [
        (p, structure.axes[p.axis_id].pa, gc - p.appearance_gc)
        for p in structure.phytomers
        if _is_functional(p, gc, functional_time)
    ]
