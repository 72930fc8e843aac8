"""GreenLab source-sink simulation and calibration for pruned cotton."""

from importlib import resources

from .core import (
    AllometryRule,
    BetaShape,
    OrganKind,
    ParameterSet,
    ProductionRule,
    SinkRule,
    Treatment,
)
from .paramfile import parse_params, write_params
from .simulator import SimulationTrace, initialize, run, step

__all__ = [
    "AllometryRule",
    "BetaShape",
    "OrganKind",
    "ParameterSet",
    "ProductionRule",
    "SinkRule",
    "SimulationTrace",
    "Treatment",
    "initialize",
    "load_reference",
    "parse_params",
    "run",
    "step",
    "write_params",
]


def load_reference(treatment: str | Treatment) -> ParameterSet:
    """Bundled cotton parameter set for ``"T1"`` or ``"T2"``."""
    name = Treatment(treatment).value.lower()
    text = resources.files(__package__).joinpath("data", f"cotton_{name}.params").read_text(encoding="utf-8")
    return parse_params(text)
