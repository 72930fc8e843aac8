import pytest

from greenlab import load_reference
from greenlab.paramfile import from_flat, to_flat

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def t1():
    return load_reference("T1")


@pytest.fixture(scope="session")
def t2():
    return load_reference("T2")


def override(params, **values):
    """ParameterSet with flat keys replaced; dots in keys spelled as '__'."""
    flat = to_flat(params)
    for k, v in values.items():
        flat[k.replace("__", ".")] = v
    return from_flat(flat)


def oracle_inputs(params):
    """Flatten a ParameterSet into the plain dict the stand-alone oracle takes."""
    f = to_flat(params)
    pas = params.treatment.physiological_ages
    return {
        "R": f["R"],
        "S_p": f["S_p"],
        "E": f["E"],
        "P": {o: f[f"P_{o}"] for o in "bpe"},
        "C": {pa: {o: 1.0 if pa == 1 else f[f"C_{o}.pa2"] for o in "bpe"} for pa in pas},
        "shape": {o: (f[f"alpha_{o}"], f[f"beta_{o}"], f[f"T_{o}"]) for o in "bpe"},
        "P_c": f["P_c"],
        "eps": {pa: f[f"epsilon.pa{pa}"] for pa in pas},
        "b_e": {pa: f[f"b_e.pa{pa}"] for pa in pas},
        "a_e": {pa: f[f"a_e.pa{pa}"] for pa in pas},
        "rho": f["rho"],
        "Q_s": f["Q_s"],
        "T_f": f["T_f"],
        "branches": list(zip((5, 6), params.branch_delays)),
    }


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
