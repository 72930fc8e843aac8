"""Flat ``key = value`` parameter files.

Keys mirror the usual GreenLab symbols; per-PA quantities carry a ``.paN``
suffix (``epsilon.pa1``, ``C_b.pa2``). Lines starting with ``#`` and trailing
``# ...`` comments are ignored. Example::

    treatment = T1
    R = 192.9
    S_p = 2209
    P_p = 0.37
    ...
"""

from __future__ import annotations

import math

from .core import (
    AllometryRule,
    BetaShape,
    OrganKind,
    ParameterSet,
    ProductionRule,
    SinkRule,
    Treatment,
)
from .errors import ParameterDomainError, TargetParseError

_ORGANS = ("b", "p", "e")
_KIND = {"b": OrganKind.BLADE, "p": OrganKind.PETIOLE, "e": OrganKind.PITH}
_INT_KEYS = {"T_b", "T_p", "T_e", "T_f", "delay.branch1", "delay.branch2"}
# keys that may be omitted; their value is implied
_OPTIONAL = {"E": 1.0, "P_b": 1.0, "C_b.pa1": 1.0, "C_p.pa1": 1.0, "C_e.pa1": 1.0}


def expected_keys(treatment: Treatment) -> list[str]:
    """Canonical key order written by `write_params`."""
    keys = ["treatment", "E", "R", "S_p", "P_b", "P_p", "P_e", "P_c"]
    if treatment is Treatment.T2:
        keys += [f"C_{o}.pa2" for o in _ORGANS]
    for o in _ORGANS:
        keys += [f"alpha_{o}", f"beta_{o}", f"T_{o}"]
    for pa in treatment.physiological_ages:
        keys += [f"epsilon.pa{pa}", f"b_e.pa{pa}", f"a_e.pa{pa}"]
    keys += ["rho", "Q_s", "T_f"]
    if treatment is Treatment.T2:
        keys += ["delay.branch1", "delay.branch2"]
    return keys


def to_flat(params: ParameterSet) -> dict[str, object]:
    """ParameterSet as an ordered ``{key: value}`` mapping."""
    t = params.treatment
    flat: dict[str, object] = {
        "treatment": t.value,
        "E": params.production.e_potential,
        "R": params.production.resistance,
        "S_p": params.production.projection_area,
    }
    for o in _ORGANS:
        flat[f"P_{o}"] = params.sinks[_KIND[o]].potential
    flat["P_c"] = params.ring_potential
    if t is Treatment.T2:
        for o in _ORGANS:
            flat[f"C_{o}.pa2"] = params.sinks[_KIND[o]].pa_coefficient[2]
    for o in _ORGANS:
        shape = params.sinks[_KIND[o]].shape
        flat[f"alpha_{o}"] = shape.alpha
        flat[f"beta_{o}"] = shape.beta
        flat[f"T_{o}"] = shape.expansion_time
    for pa in t.physiological_ages:
        a = params.allometry[pa]
        flat[f"epsilon.pa{pa}"] = a.specific_leaf_weight
        flat[f"b_e.pa{pa}"] = a.pith_b
        flat[f"a_e.pa{pa}"] = a.pith_a
    flat["rho"] = params.density
    flat["Q_s"] = params.seed_mass
    flat["T_f"] = params.blade_functional_time
    if t is Treatment.T2:
        flat["delay.branch1"], flat["delay.branch2"] = params.branch_delays
    return {k: flat[k] for k in expected_keys(t)}


def from_flat(flat: dict[str, object]) -> ParameterSet:
    """Build a validated ParameterSet; errors name the offending key."""
    if "treatment" not in flat:
        raise ParameterDomainError("missing required key 'treatment'", key="treatment")
    try:
        treatment = Treatment(str(flat["treatment"]).strip())
    except ValueError:
        raise ParameterDomainError(f"unknown treatment {flat['treatment']!r}", key="treatment") from None

    allowed = set(expected_keys(treatment)) | set(_OPTIONAL)
    unknown = sorted(set(flat) - allowed)
    if unknown:
        raise ParameterDomainError(f"unknown key {unknown[0]!r} for {treatment.value}", key=unknown[0])
    missing = [k for k in expected_keys(treatment) if k not in flat and k not in _OPTIONAL]
    if missing:
        raise ParameterDomainError(f"missing required key {missing[0]!r}", key=missing[0])

    def num(key):
        v = flat.get(key, _OPTIONAL.get(key))
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise ParameterDomainError(f"{key}: not a number: {v!r}", key=key) from None
        if not math.isfinite(x):
            raise ParameterDomainError(f"{key}: must be finite", key=key)
        if key in _INT_KEYS:
            if x != int(x):
                raise ParameterDomainError(f"{key}: must be an integer, got {v!r}", key=key)
            return int(x)
        return x

    for key in ("P_b", "C_b.pa1", "C_p.pa1", "C_e.pa1"):
        if num(key) != 1.0:
            raise ParameterDomainError(f"{key} is a fixed reference and must be 1", key=key)

    def build(key, factory, *args, **kwargs):
        try:
            return factory(*args, **kwargs)
        except ParameterDomainError as e:
            raise ParameterDomainError(f"{key}: {e}", key=key) from None

    sinks = {}
    for o in _ORGANS:
        try:
            shape = BetaShape(num(f"alpha_{o}"), num(f"beta_{o}"), num(f"T_{o}"))
        except ParameterDomainError as e:
            key = {"alpha": f"alpha_{o}", "beta": f"beta_{o}"}.get(e.key, f"T_{o}")
            raise ParameterDomainError(f"{key}: {e}", key=key) from None
        coef = {1: 1.0}
        if treatment is Treatment.T2:
            coef[2] = num(f"C_{o}.pa2")
        sinks[_KIND[o]] = build(f"P_{o}/C_{o}", SinkRule, num(f"P_{o}"), shape, coef)

    allometry = {
        pa: build(
            f"allometry.pa{pa}",
            AllometryRule,
            num(f"epsilon.pa{pa}"),
            num(f"b_e.pa{pa}"),
            num(f"a_e.pa{pa}"),
            num("rho"),
        )
        for pa in treatment.physiological_ages
    }
    production = build("E/R/S_p", ProductionRule, num("R"), num("S_p"), num("E"))
    delays = (num("delay.branch1"), num("delay.branch2")) if treatment is Treatment.T2 else ()
    return build(
        "parameters",
        ParameterSet,
        treatment=treatment,
        production=production,
        sinks=sinks,
        ring_potential=num("P_c"),
        allometry=allometry,
        seed_mass=num("Q_s"),
        blade_functional_time=num("T_f"),
        branch_delays=delays,
    )


def parse_flat(text: str) -> dict[str, str]:
    """Raw ``{key: value}`` pairs of a key = value file."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TargetParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise TargetParseError("empty key", line=lineno)
        if key in out:
            raise TargetParseError(f"duplicate key {key!r}", line=lineno)
        out[key] = value
    return out


def parse_params(text: str) -> ParameterSet:
    return from_flat(parse_flat(text))


def format_value(v: object) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_params(params: ParameterSet, comments: dict[str, str] | None = None) -> str:
    """Serialize ``params``; ``comments`` adds a trailing ``# ...`` per key."""
    comments = comments or {}
    lines = []
    for key, value in to_flat(params).items():
        line = f"{key} = {format_value(value)}"
        if key in comments:
            line += f"  # {comments[key]}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def read_params(path) -> ParameterSet:
    with open(path, encoding="utf-8") as fh:
        return parse_params(fh.read())
