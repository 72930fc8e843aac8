import dataclasses
import math

import numpy as np
import pytest

from greenlab import simulator
from greenlab.core import ORGAN_KINDS, OrganKind, sink_variation
from greenlab.errors import AllocationDeadlockError, ParameterDomainError
from greenlab.simulator import (
    BLADE,
    PITH,
    initialize,
    organ_geometry,
    run,
    snapshot_geometry,
    step,
)

from conftest import oracle_inputs, override
from oracle_greenlab import simulate as oracle_simulate


@pytest.fixture
def flat_t1(t1):
    """Reference T1 values with flat sink curves, used for hand checks."""
    return override(
        t1,
        alpha_b=1.0, beta_b=1.0, alpha_p=1.0, beta_p=1.0, alpha_e=1.0, beta_e=1.0,
        T_b=8, T_p=15, T_e=15,
    )


class TestInitialize:
    def test_seed_split_by_sinks(self, t1):
        s = initialize(t1)
        d = np.array([t1.sink_coefficient(k, 1) * sink_variation(t1.sinks[k].shape, 1) for k in ORGAN_KINDS])
        assert s.gc == 1 and len(s.phytomers) == 1
        assert s.production == t1.seed_mass
        np.testing.assert_allclose(s.masses[0], 0.3 * d / d.sum(), rtol=1e-14)
        assert math.fsum(s.masses[0]) == pytest.approx(0.3, rel=1e-15)
        assert s.ring_mass[0] == 0.0

    def test_zero_demand_deadlocks(self, t1, monkeypatch):
        monkeypatch.setattr(simulator, "sink_variation_table", lambda shape, n=None: [0.0] * ((n or 1) + 1))
        with pytest.raises(AllocationDeadlockError):
            initialize(t1)

    def test_second_gc_area(self, t1):
        s1 = initialize(t1)
        s2 = step(s1, t1)
        assert s2.functional_area == pytest.approx(s1.masses[0, BLADE] / 6.33e-3, rel=1e-15)


class TestStep:
    def test_three_gc_hand_oracle(self, flat_t1):
        """Production and allocation evaluated longhand with flat sinks (all f = 1 up to GC 3)."""
        P = {"b": 1.0, "p": 0.37, "e": 0.36}
        total_p = sum(P.values())
        # GC 1: seed split among the three organs of phytomer 1
        m1 = {o: 0.3 * P[o] / total_p for o in P}
        # GC 2: blade 1 functional; D_t = two phytomers' organs + one leaf's ring demand
        q2 = 2209 / 192.9 * (1 - math.exp(-(m1["b"] / 6.33e-3) / 2209))
        dt2 = 2 * total_p + 0.27 * 1
        m2 = {(r, o): (m1[o] if r == 1 else 0.0) + q2 * P[o] / dt2 for r in (1, 2) for o in P}
        # GC 3: blades 1 and 2 functional
        area3 = (m2[(1, "b")] + m2[(2, "b")]) / 6.33e-3
        q3 = 2209 / 192.9 * (1 - math.exp(-area3 / 2209))
        dt3 = 3 * total_p + 0.27 * 2
        m3 = {(r, o): m2.get((r, o), 0.0) + q3 * P[o] / dt3 for r in (1, 2, 3) for o in P}

        trace = run(flat_t1, 3)
        assert trace.at(2).production == pytest.approx(q2, rel=1e-12)
        assert trace.at(3).production == pytest.approx(q3, rel=1e-12)
        for r in (1, 2, 3):
            for col, o in enumerate("bpe"):
                assert trace.final.masses[r - 1, col] == pytest.approx(m3[(r, o)], rel=1e-9)
        ring2 = q2 * 0.27 / dt2
        ring3 = q3 * 0.54 / dt3
        assert math.fsum(trace.final.ring_mass) == pytest.approx(ring2 + ring3, rel=1e-12)

    @pytest.mark.parametrize("name", ["t1", "t2"])
    def test_matches_standalone_oracle(self, name, request):
        params = request.getfixturevalue(name)
        trace = run(params, 14)
        expected = oracle_simulate(oracle_inputs(params), 14)
        for state, ref in zip(trace.states, expected):
            assert state.production == pytest.approx(ref["Q"], rel=1e-12)
            for idx, p in enumerate(state.phytomers):
                for col, o in enumerate("bpe"):
                    assert state.masses[idx, col] == pytest.approx(ref["mass"][(p.axis_id, p.rank, o)], rel=1e-9)
                assert state.ring_mass[idx] == pytest.approx(ref["ring"].get((p.axis_id, p.rank), 0.0), rel=1e-9, abs=1e-300)

    def test_zero_area_means_no_production(self, t1):
        s = run(t1, 4).final
        starved = dataclasses.replace(
            s, masses=np.zeros_like(s.masses), ring_mass=np.zeros_like(s.ring_mass)
        )
        nxt = step(starved, t1)
        assert nxt.production == 0.0
        assert nxt.allocated == 0.0
        assert not nxt.masses.any()

    def test_allocation_sums_to_production(self, t2):
        for s in run(t2, 35).states:
            assert s.allocated == pytest.approx(s.production, rel=1e-12)

    def test_step_equals_run(self, t2):
        trace = run(t2, 15)
        s = initialize(t2)
        for gc in range(2, 16):
            s = step(s, t2)
        np.testing.assert_array_equal(s.masses, trace.final.masses)
        np.testing.assert_array_equal(s.ring_section, trace.final.ring_section)

    def test_ring_needs_a_pith(self, t1):
        params = override(t1, P_e=0.0)
        with pytest.raises(AllocationDeadlockError) as info:
            run(params, 3)
        assert info.value.gc == 2


class TestRun:
    def test_t1_counts(self, t1):
        trace = run(t1, 35)
        assert len(trace) == 35
        assert len(trace.final.phytomers) == 35

    def test_t2_counts(self, t2):
        assert len(run(t2, 35).final.phytomers) == 35 + 25 + 25

    def test_single_gc(self, t1):
        trace = run(t1, 1)
        ref = initialize(t1)
        assert len(trace) == 1
        np.testing.assert_array_equal(trace.final.masses, ref.masses)

    def test_bad_horizon(self, t1):
        with pytest.raises(ParameterDomainError):
            run(t1, 0)

    def test_deterministic(self, t2):
        a, b = run(t2, 35), run(t2, 35)
        for x, y in zip(a.states, b.states):
            assert x.masses.tobytes() == y.masses.tobytes()
            assert x.ring_section.tobytes() == y.ring_section.tobytes()

    @pytest.mark.parametrize("name", ["t1", "t2"])
    def test_global_balance_and_monotone(self, name, request):
        params = request.getfixturevalue(name)
        trace = run(params, 35)
        produced = params.seed_mass
        prev = None
        for s in trace.states:
            if s.gc > 1:
                produced += s.production
            assert s.total_mass == pytest.approx(produced, rel=1e-10)
            assert s.total_production == pytest.approx(produced, rel=1e-12)
            if prev is not None:
                n = len(prev.masses)
                assert np.all(s.masses[:n] >= prev.masses)
                assert np.all(s.ring_mass[:n] >= prev.ring_mass)
            prev = s

    def test_mass_frozen_after_expansion(self, t1):
        trace = run(t1, 35)
        t_exp = [t1.sinks[k].shape.expansion_time for k in ORGAN_KINDS]
        for col, t in enumerate(t_exp):
            series = trace.organ_series(0, col)
            assert np.all(series[t:] == series[t - 1])
        assert trace.organ_series(0, PITH)[-1] < trace.final.internode_mass()[0]

    def test_organ_states(self, t1):
        s = run(t1, 3).final
        organs = list(s.organ_states())
        assert len(organs) == 9
        assert organs[0].kind is OrganKind.BLADE and organs[0].age == 3

    def test_csv_blocks(self, t2):
        text = run(t2, 12).to_csv()
        lines = text.splitlines()
        assert lines[0] == "gc,axis,rank,organ,age,mass_g,dimension,unit"
        gcs = {int(line.split(",")[0]) for line in lines[1:]}
        assert gcs == set(range(1, 13))
        # 4 rows per phytomer per GC
        n_rows = sum(4 * (gc + 2 * max(0, gc - 10)) for gc in range(1, 13))
        assert len(lines) - 1 == n_rows


class TestGeometry:
    def test_unit_pith_volume(self, t1):
        s = run(t1, 1).final
        masses = np.array([[0.0, 0.0, t1.density * 1.0]])
        s = dataclasses.replace(s, masses=masses, ring_section=np.zeros(1))
        geo = organ_geometry(s, t1)
        assert geo.pith_length[0] == pytest.approx(3.5581, abs=1e-4)
        assert geo.pith_section[0] == pytest.approx(0.28105, abs=1e-5)
        assert geo.diameter[0] == pytest.approx(0.5983, abs=1e-4)

    def test_zero_mass_zero_size(self, t1):
        s = run(t1, 1).final
        s = dataclasses.replace(s, masses=np.zeros((1, 3)), ring_section=np.zeros(1))
        geo = organ_geometry(s, t1)
        assert geo.pith_length[0] == 0 and geo.diameter[0] == 0 and geo.blade_area[0] == 0

    def test_rings_widen_internodes(self, t1):
        geo = organ_geometry(run(t1, 35).final, t1)
        assert np.all(geo.total_section >= geo.pith_section)
        assert geo.total_section[0] > geo.pith_section[0]

    def test_single_stem_skeleton(self, t1):
        state = run(t1, 18).final
        sk = snapshot_geometry(state, t1)
        geo = organ_geometry(state, t1)
        assert len(sk.segments) == 18
        assert all(seg.start[:2] == (0.0, 0.0) and seg.end[:2] == (0.0, 0.0) for seg in sk.segments)
        for a, b in zip(sk.segments, sk.segments[1:]):
            assert a.end == b.start
        assert sk.segments[-1].end[2] == pytest.approx(float(geo.pith_length.sum()), rel=1e-12)

    def test_branch_insertion(self, t2):
        state = run(t2, 25).final
        sk = snapshot_geometry(state, t2, insertion_angle=30)
        main = {s.rank: s for s in sk.segments if s.axis_id == 0}
        for axis_id, bearing in ((1, 5), (2, 6)):
            seg = [s for s in sk.segments if s.axis_id == axis_id]
            assert len(seg) == 15
            assert seg[0].start == main[bearing].end
            dx, dy, dz = (e - s for s, e in zip(seg[0].start, seg[0].end))
            assert math.degrees(math.atan2(math.hypot(dx, dy), dz)) == pytest.approx(30)
        text = sk.to_text()
        assert len(text.splitlines()) == 2 + 25 + 15 + 15
