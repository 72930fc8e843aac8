import numpy as np
import pytest

from greenlab.core import Treatment
from greenlab.errors import HorizonError, ParameterDomainError, TargetParseError, TargetValidationError
from greenlab.paramfile import parse_params, to_flat, write_params
from greenlab.simulator import BLADE, PETIOLE, PITH, organ_geometry, run
from greenlab.targets import parse_targets, synthesize_targets, write_targets

HEADER = "stage_gc,pa,rank,organ,measure,value\n"


class TestParseTargets:
    def test_single_record(self):
        ts = parse_targets(HEADER + "18,1,3,blade,mass_g,0.41\n", Treatment.T1)
        assert len(ts) == 1
        r = ts.records[0]
        assert (r.stage_gc, r.pa, r.rank, r.organ, r.measure, r.value) == (18, 1, 3, "blade", "mass_g", 0.41)
        assert ts.stages == (18,)

    def test_duplicate_names_both_lines(self):
        text = HEADER + "18,1,3,blade,mass_g,0.41\n18,1,4,blade,mass_g,0.5\n18,1,3,blade,mass_g,0.42\n"
        with pytest.raises(TargetValidationError) as info:
            parse_targets(text, Treatment.T1)
        msg = str(info.value)
        assert "line 4" in msg and "line 2" in msg

    def test_pa2_invalid_for_t1(self):
        with pytest.raises(TargetValidationError, match="PA2"):
            parse_targets(HEADER + "18,2,3,blade,mass_g,0.2\n", Treatment.T1)

    def test_pa2_valid_for_t2(self):
        ts = parse_targets(HEADER + "18,2,3,blade,mass_g,0.2\n", Treatment.T2)
        assert ts.records[0].pa == 2

    def test_collects_all_violations(self):
        text = HEADER + (
            "18,1,3,leaf,mass_g,0.4\n"      # unknown organ
            "18,1,3,blade,weight,0.4\n"     # unknown measure
            "18,1,4,blade,mass_g,-1\n"      # negative
            "18,1,19,blade,mass_g,0.4\n"    # rank not yet present
            "12,2,3,blade,mass_g,0.4\n"     # branch rank 3 appears at GC 13
            "18,1,3,petiole,length_cm,2\n"  # not simulated
        )
        with pytest.raises(TargetValidationError) as info:
            parse_targets(text, Treatment.T2)
        assert len(info.value.violations) == 6

    @pytest.mark.parametrize(
        "body, line",
        [
            ("18,1,3,blade,mass_g\n", 2),
            ("18,1,x,blade,mass_g,0.4\n", 2),
            ("18,1,3,blade,mass_g,0.4\n18,1,4,blade,mass_g,abc\n", 3),
        ],
    )
    def test_parse_errors_carry_line(self, body, line):
        with pytest.raises(TargetParseError) as info:
            parse_targets(HEADER + body, Treatment.T1)
        assert info.value.line == line
        assert f"line {line}" in str(info.value)

    def test_missing_header(self):
        with pytest.raises(TargetParseError):
            parse_targets("18,1,3,blade,mass_g,0.41\n", Treatment.T1)

    def test_round_trip(self, t2):
        ts = synthesize_targets(run(t2, 20), [15, 20], 0.05, 3)
        again = parse_targets(write_targets(ts), Treatment.T2)
        assert again.records == ts.records


class TestSynthesize:
    def test_noiseless_equals_trace(self, t1):
        trace = run(t1, 25)
        ts = synthesize_targets(trace, [18, 25])
        for r in ts.records:
            state = trace.at(r.stage_gc)
            i = r.rank - 1
            geo = organ_geometry(state, t1)
            expected = {
                ("blade", "mass_g"): state.masses[i, BLADE],
                ("petiole", "mass_g"): state.masses[i, PETIOLE],
                ("internode", "mass_g"): state.masses[i, PITH] + state.ring_mass[i],
                ("internode", "length_cm"): geo.pith_length[i],
            }[(r.organ, r.measure)]
            assert r.value == expected

    def test_branches_share_values(self, t2):
        trace = run(t2, 30)
        ts = synthesize_targets(trace, [30])
        state = trace.at(30)
        idx = {(p.axis_id, p.rank): i for i, p in enumerate(state.phytomers)}
        for r in ts.records:
            if r.pa == 2 and (r.organ, r.measure) == ("blade", "mass_g"):
                a, b = state.masses[idx[(1, r.rank)], BLADE], state.masses[idx[(2, r.rank)], BLADE]
                assert r.value == pytest.approx((a + b) / 2, rel=1e-15)

    def test_seed_determinism(self, t1):
        trace = run(t1, 35)
        a = synthesize_targets(trace, [18, 35], 0.05, 11)
        b = synthesize_targets(trace, [18, 35], 0.05, 11)
        c = synthesize_targets(trace, [18, 35], 0.05, 12)
        assert a == b
        assert a != c

    def test_stage_record_counts(self, t1):
        ts = synthesize_targets(run(t1, 35), [18, 25, 30, 35])
        assert ts.stages == (18, 25, 30, 35)
        for stage in ts.stages:
            # four measures per phytomer present at the stage
            assert sum(r.stage_gc == stage for r in ts.records) == 4 * stage

    def test_t2_counts(self, t2):
        ts = synthesize_targets(run(t2, 35), [18, 35])
        assert sum(r.stage_gc == 35 and r.pa == 2 for r in ts.records) == 4 * 25
        assert sum(r.stage_gc == 18 and r.pa == 2 for r in ts.records) == 4 * 8

    def test_beyond_horizon(self, t1):
        with pytest.raises(HorizonError):
            synthesize_targets(run(t1, 20), [18, 25])

    def test_noise_is_multiplicative(self, t1):
        trace = run(t1, 35)
        clean = synthesize_targets(trace, [35]).values()
        noisy = synthesize_targets(trace, [35], 0.05, 0).values()
        rel = noisy / clean - 1
        assert 0.03 < rel.std() < 0.07


T1_TEXT = """\
# reference single-stem values
treatment = T1
R = 192.9
S_p = 2209
P_p = 0.37
P_e = 0.36
P_c = 0.27
alpha_b = 2
beta_b = 3
T_b = 15
alpha_p = 2
beta_p = 3
T_p = 15
alpha_e = 2
beta_e = 2
T_e = 8
epsilon.pa1 = 6.33e-3
b_e.pa1 = 12.66
a_e.pa1 = 0.047
rho = 0.26
Q_s = 0.3
T_f = 22
"""


class TestParams:
    def test_measured_t1_values(self):
        p = parse_params(T1_TEXT)
        a = p.allometry[1]
        assert (a.specific_leaf_weight, a.pith_b, a.pith_a, a.density) == (6.33e-3, 12.66, 0.047, 0.26)
        assert p.production.e_potential == 1.0

    def test_fitted_t2_values(self, t2):
        p = parse_params(write_params(t2))
        f = to_flat(p)
        assert (f["P_p"], f["P_e"], f["P_c"], f["R"], f["S_p"]) == (0.36, 0.31, 0.23, 223.1, 5475.0)
        assert p.branch_delays == (6, 5)
        assert set(p.allometry) == {1, 2}

    @pytest.mark.parametrize("name", ["t1", "t2"])
    def test_round_trip(self, name, request):
        p = request.getfixturevalue(name)
        text = write_params(p)
        assert parse_params(text) == p
        assert write_params(parse_params(text)) == text

    @pytest.mark.parametrize(
        "edit, key",
        [
            ("alpha_b = 0.5", "alpha_b"),
            ("beta_e = 0.2", "beta_e"),
            ("T_p = 0", "T_p"),
            ("R = -1", "E/R/S_p"),
            ("P_b = 0.9", "P_b"),
            ("C_b.pa2 = 0.8", "C_b.pa2"),
            ("T_f = 2.5", "T_f"),
            ("P_p = abc", "P_p"),
        ],
    )
    def test_domain_violations(self, edit, key):
        k = edit.split("=")[0].strip()
        lines = [line for line in T1_TEXT.splitlines() if not line.startswith(k + " ")]
        with pytest.raises(ParameterDomainError) as info:
            parse_params("\n".join(lines + [edit]))
        assert info.value.key == key

    def test_missing_key(self):
        text = "\n".join(line for line in T1_TEXT.splitlines() if not line.startswith("rho"))
        with pytest.raises(ParameterDomainError, match="rho"):
            parse_params(text)

    def test_t2_requires_pa2(self, t2):
        text = "\n".join(line for line in write_params(t2).splitlines() if not line.startswith("b_e.pa2"))
        with pytest.raises(ParameterDomainError, match="b_e.pa2"):
            parse_params(text)

    def test_malformed_line(self):
        with pytest.raises(TargetParseError) as info:
            parse_params(T1_TEXT + "oops\n")
        assert info.value.line == len(T1_TEXT.splitlines()) + 1

    def test_inline_comments(self):
        p = parse_params(T1_TEXT.replace("R = 192.9", "R = 192.9  # SE 10.1"))
        assert p.production.resistance == 192.9

    def test_keys_case_sensitive(self):
        with pytest.raises(ParameterDomainError):
            parse_params(T1_TEXT.replace("rho =", "RHO ="))

    def test_custom_delays(self, t2):
        text = write_params(t2).replace("delay.branch1 = 6", "delay.branch1 = 3")
        p = parse_params(text)
        assert p.branch_delays == (3, 5)
        # first branch emerges at GC 5 + 3, second at GC 6 + 5
        final = run(p, 12).final
        assert len(final.phytomers) == 12 + 5 + 2
        assert np.isfinite(final.masses).all()
