"""Multi-stage organ observations: CSV format, validation and synthesis.

A target file is UTF-8 CSV with the mandatory header::

    stage_gc,pa,rank,organ,measure,value

``organ`` is one of blade, petiole, internode and ``measure`` one of mass_g,
length_cm, area_cm2. Internode mass includes the rings; internode length is
the pith length. Records are keyed by physiological age rather than by axis:
when several axes share a PA (the two T2 branches), the model value for a key
is the mean over those axes.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_BRANCH_DELAYS, Treatment
from .errors import HorizonError, TargetParseError, TargetValidationError
from .simulator import BLADE, PETIOLE, PITH, SimulationTrace, organ_geometry
from .topology import structure_at

HEADER = ("stage_gc", "pa", "rank", "organ", "measure", "value")
ORGANS = ("blade", "petiole", "internode")
MEASURES = ("mass_g", "length_cm", "area_cm2")
SUPPORTED = {
    ("blade", "mass_g"),
    ("blade", "area_cm2"),
    ("petiole", "mass_g"),
    ("internode", "mass_g"),
    ("internode", "length_cm"),
}
# what synthesize_targets extracts per phytomer
SYNTH_MEASURES = (("internode", "mass_g"), ("internode", "length_cm"), ("blade", "mass_g"), ("petiole", "mass_g"))


@dataclass(frozen=True)
class TargetRecord:
    stage_gc: int
    pa: int
    rank: int
    organ: str
    measure: str
    value: float

    @property
    def key(self) -> tuple[int, int, int, str, str]:
        return (self.stage_gc, self.pa, self.rank, self.organ, self.measure)

    @property
    def measure_class(self) -> tuple[str, str]:
        return (self.organ, self.measure)


@dataclass(frozen=True)
class TargetSet:
    treatment: Treatment
    records: tuple[TargetRecord, ...]
    branch_delays: tuple[int, ...] = DEFAULT_BRANCH_DELAYS

    @property
    def stages(self) -> tuple[int, ...]:
        return tuple(sorted({r.stage_gc for r in self.records}))

    def __len__(self) -> int:
        return len(self.records)

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])


def _rank_exists(treatment: Treatment, delays: tuple[int, ...], stage: int, pa: int, rank: int) -> bool:
    s = structure_at(treatment, stage, delays)
    return any(a.pa == pa and 1 <= rank <= a.phytomer_count(stage) for a in s.axes)


def validate_records(
    records, treatment: Treatment, branch_delays=DEFAULT_BRANCH_DELAYS, lines: list[int] | None = None
) -> TargetSet:
    """Check keys, tokens, values and structural feasibility; collect every violation."""
    records = tuple(records)
    lines = lines or [None] * len(records)
    where = [f"line {n}" if n is not None else f"record {i + 1}" for i, n in enumerate(lines)]
    violations = []
    seen: dict[tuple, str] = {}
    delays = tuple(branch_delays) if treatment is Treatment.T2 else DEFAULT_BRANCH_DELAYS
    for rec, loc in zip(records, where):
        if rec.organ not in ORGANS:
            violations.append(f"{loc}: unknown organ {rec.organ!r}")
        if rec.measure not in MEASURES:
            violations.append(f"{loc}: unknown measure {rec.measure!r}")
        elif rec.organ in ORGANS and rec.measure_class not in SUPPORTED:
            violations.append(f"{loc}: {rec.organ} {rec.measure} is not simulated")
        if not (math.isfinite(rec.value) and rec.value >= 0):
            violations.append(f"{loc}: value must be a nonnegative number, got {rec.value!r}")
        if rec.stage_gc < 1:
            violations.append(f"{loc}: stage_gc must be >= 1")
        elif rec.pa not in treatment.physiological_ages:
            violations.append(f"{loc}: PA{rec.pa} is invalid for {treatment.value}")
        elif not _rank_exists(treatment, delays, rec.stage_gc, rec.pa, rec.rank):
            violations.append(f"{loc}: no PA{rec.pa} phytomer of rank {rec.rank} exists at GC {rec.stage_gc}")
        if rec.key in seen:
            violations.append(f"{loc}: duplicate of {seen[rec.key]} for key {rec.key}")
        else:
            seen[rec.key] = loc
    if violations:
        raise TargetValidationError(violations)
    return TargetSet(treatment=treatment, records=records, branch_delays=delays)


def parse_targets(text: str, treatment: Treatment, branch_delays=DEFAULT_BRANCH_DELAYS) -> TargetSet:
    """Parse and validate target CSV text for ``treatment``."""
    reader = csv.reader(io.StringIO(text))
    records, lines = [], []
    header_seen = False
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        cells = [c.strip() for c in row]
        if not header_seen:
            if tuple(cells) != HEADER:
                raise TargetParseError(f"expected header {','.join(HEADER)}, got {','.join(cells)}", line=lineno)
            header_seen = True
            continue
        if len(cells) != len(HEADER):
            raise TargetParseError(f"expected {len(HEADER)} fields, got {len(cells)}", line=lineno)
        try:
            stage, pa, rank = (int(c) for c in cells[:3])
        except ValueError:
            raise TargetParseError(f"stage_gc, pa and rank must be integers: {','.join(cells[:3])}", line=lineno) from None
        try:
            value = float(cells[5])
        except ValueError:
            raise TargetParseError(f"value is not a number: {cells[5]!r}", line=lineno) from None
        records.append(TargetRecord(stage, pa, rank, cells[3], cells[4], value))
        lines.append(lineno)
    if not header_seen:
        raise TargetParseError("missing header row", line=1)
    return validate_records(records, treatment, branch_delays, lines)


def read_targets(path, treatment: Treatment, branch_delays=DEFAULT_BRANCH_DELAYS) -> TargetSet:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_targets(fh.read(), treatment, branch_delays)


def write_targets(targets: TargetSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in targets.records:
        w.writerow([r.stage_gc, r.pa, r.rank, r.organ, r.measure, repr(float(r.value))])
    return buf.getvalue()


class Extractor:
    """Maps each target record to the phytomers whose simulated values it observes.

    Built once per (structure, target set); `model_values` is then a cheap
    gather over a simulation trace.
    """

    def __init__(self, targets: TargetSet):
        self.targets = targets
        self.horizon = max(targets.stages) if targets.records else 0
        structure = structure_at(targets.treatment, self.horizon, targets.branch_delays)
        index = {(p.axis_id, p.rank): i for i, p in enumerate(structure.phytomers)}
        self.groups: list[list[int]] = []
        for r in targets.records:
            idx = [
                index[(a.id, r.rank)]
                for a in structure.axes
                if a.pa == r.pa and 1 <= r.rank <= a.phytomer_count(r.stage_gc)
            ]
            if not idx:
                raise TargetValidationError([f"record {r.key} matches no phytomer"])
            self.groups.append(idx)
        by_stage = defaultdict(list)
        for i, r in enumerate(targets.records):
            by_stage[r.stage_gc].append(i)
        self.by_stage = dict(by_stage)

    def model_values(self, trace: SimulationTrace) -> np.ndarray:
        if len(trace) < self.horizon:
            raise HorizonError(f"trace covers {len(trace)} GCs, targets need {self.horizon}")
        out = np.empty(len(self.targets.records))
        params = trace.params
        for stage, rec_ids in self.by_stage.items():
            state = trace.at(stage)
            masses = state.masses
            geo = None
            for i in rec_ids:
                r = self.targets.records[i]
                idx = self.groups[i]
                if r.organ == "blade" and r.measure == "mass_g":
                    vals = masses[idx, BLADE]
                elif r.organ == "petiole":
                    vals = masses[idx, PETIOLE]
                elif r.organ == "internode" and r.measure == "mass_g":
                    vals = masses[idx, PITH] + state.ring_mass[idx]
                else:
                    if geo is None:
                        geo = organ_geometry(state, params)
                    vals = geo.pith_length[idx] if r.organ == "internode" else geo.blade_area[idx]
                out[i] = float(np.mean(vals))
        return out


def synthesize_targets(
    trace: SimulationTrace,
    stages,
    noise_relative_sd: float = 0.0,
    seed: int = 0,
) -> TargetSet:
    """Targets observed from ``trace`` at ``stages``, optionally with multiplicative noise.

    Each phytomer position present at a stage yields internode mass and
    length, blade mass and petiole mass. With ``noise_relative_sd > 0`` every
    value is multiplied by ``1 + sd * N(0, 1)`` (clipped at zero) drawn from a
    generator seeded with ``seed``.
    """
    stages = sorted(set(int(s) for s in stages))
    if not stages:
        raise HorizonError("no stages requested")
    if stages[0] < 1 or stages[-1] > len(trace):
        raise HorizonError(f"stages {stages} outside simulated horizon 1..{len(trace)}")
    if noise_relative_sd < 0:
        raise ValueError(f"noise sd must be >= 0, got {noise_relative_sd!r}")
    params = trace.params
    treatment = params.treatment
    delays = params.branch_delays or DEFAULT_BRANCH_DELAYS
    skeleton = []
    for stage in stages:
        s = structure_at(treatment, stage, delays)
        for pa in treatment.physiological_ages:
            max_rank = max((a.phytomer_count(stage) for a in s.axes if a.pa == pa), default=0)
            for rank in range(1, max_rank + 1):
                for organ, measure in SYNTH_MEASURES:
                    skeleton.append(TargetRecord(stage, pa, rank, organ, measure, 0.0))
    draft = TargetSet(treatment=treatment, records=tuple(skeleton), branch_delays=delays)
    values = Extractor(draft).model_values(trace)
    if noise_relative_sd > 0:
        rng = np.random.default_rng(seed)
        values = np.maximum(values * (1.0 + noise_relative_sd * rng.standard_normal(len(values))), 0.0)
    records = tuple(
        TargetRecord(r.stage_gc, r.pa, r.rank, r.organ, r.measure, float(v)) for r, v in zip(skeleton, values)
    )
    return TargetSet(treatment=treatment, records=records, branch_delays=delays)
