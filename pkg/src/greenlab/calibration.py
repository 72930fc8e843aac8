"""Estimation of hidden source-sink parameters from multi-stage targets.

The objective is a weighted sum of squares over target records, where each
(organ, measure) class is weighted by the inverse square of its mean observed
value so that grams and centimetres are commensurate. Minimization uses a
Nelder-Mead simplex on log-transformed parameters clamped into their bounds,
restarted from the best vertex until it stops improving, from one or more
starting points. Standard errors come from the usual asymptotic formula with
a central finite-difference Jacobian of the weighted residuals.
"""

from __future__ import annotations

import io
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import ParameterSet, Treatment
from .errors import CalibrationFailure, GreenlabError, ParameterDomainError
from .paramfile import format_value, from_flat, parse_flat, to_flat, write_params
from .simulator import run
from .targets import Extractor, TargetRecord, TargetSet

log = logging.getLogger(__name__)

SINK_PARAMETERS = ("P_p", "P_e", "P_c")
PA2_COEFFICIENTS = ("C_b.pa2", "C_p.pa2", "C_e.pa2")
SHAPE_PARAMETERS = ("alpha_b", "beta_b", "alpha_p", "beta_p", "alpha_e", "beta_e")
PRODUCTION_PARAMETERS = ("R", "S_p")
# E is accepted for identifiability studies only; it is confounded with R
FREE_PARAMETERS = SINK_PARAMETERS + PA2_COEFFICIENTS + SHAPE_PARAMETERS + PRODUCTION_PARAMETERS + ("E",)

# relative floor standing in for an open lower bound of 0 in log space
OPEN_FLOOR = 1e-4
JACOBIAN_STEP = 1e-4
SINGULAR_RATIO = 1e-6


def default_free(treatment: Treatment) -> tuple[str, ...]:
    """All optimizable parameters of a treatment (11 for T1, 14 for T2)."""
    pa2 = PA2_COEFFICIENTS if treatment is Treatment.T2 else ()
    return SINK_PARAMETERS + pa2 + SHAPE_PARAMETERS + PRODUCTION_PARAMETERS


def default_bounds(name: str, init: float) -> tuple[float, float]:
    if name in SINK_PARAMETERS or name in PA2_COEFFICIENTS:
        return (0.0, 5.0)
    if name in SHAPE_PARAMETERS:
        return (1.0, 10.0)
    return (0.0, 10.0 * init)


def with_values(params: ParameterSet, values: Mapping[str, float]) -> ParameterSet:
    """Copy of ``params`` with some flat keys replaced."""
    flat = to_flat(params)
    for k, v in values.items():
        if k not in flat:
            raise ParameterDomainError(f"{k} is not a parameter of {params.treatment.value}", key=k)
        flat[k] = float(v)
    return from_flat(flat)


@dataclass(frozen=True)
class FitConfig:
    """What to estimate and how.

    ``bounds`` and ``initial`` may be partial; missing entries fall back to
    `default_bounds` and to the values of the fixed parameter set.
    """

    free: tuple[str, ...]
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    initial: Mapping[str, float] = field(default_factory=dict)
    max_evals: int = 4000
    tol: float = 1e-7
    starts: int = 1
    seed: int = 0
    restarts: int = 4

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        for name in self.free:
            if name not in FREE_PARAMETERS:
                raise ParameterDomainError(f"{name!r} cannot be optimized", key=name)
        if len(set(self.free)) != len(self.free):
            raise ParameterDomainError("free parameters must be distinct")
        if self.max_evals < 1 or self.starts < 1 or self.restarts < 0:
            raise ParameterDomainError("max_evals and starts must be >= 1, restarts >= 0")
        if not self.tol > 0:
            raise ParameterDomainError("tol must be > 0", key="tol")

    def resolve(self, fixed: ParameterSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(initial, lower, upper) arrays over ``free`` for a given fixed set."""
        if fixed.treatment is Treatment.T1:
            bad = [n for n in self.free if n in PA2_COEFFICIENTS]
            if bad:
                raise ParameterDomainError(f"{bad[0]} does not exist for T1", key=bad[0])
        flat = to_flat(fixed)
        init, lo, hi = [], [], []
        for name in self.free:
            x0 = float(self.initial.get(name, flat[name]))
            b = self.bounds.get(name) or default_bounds(name, x0)
            lower, upper = float(b[0]), float(b[1])
            if not (0 <= lower < upper and math.isfinite(upper)):
                raise ParameterDomainError(f"{name}: invalid bounds {b!r}", key=name)
            if not lower <= x0 <= upper:
                raise ParameterDomainError(f"{name}: initial value {x0!r} outside bounds {b!r}", key=name)
            init.append(x0)
            lo.append(lower)
            hi.append(upper)
        return np.array(init), np.array(lo), np.array(hi)


def class_weights(targets: TargetSet) -> np.ndarray:
    """Per-record weight 1 / mean(observed of its class)^2."""
    sums: dict[tuple[str, str], list[float]] = {}
    for r in targets.records:
        sums.setdefault(r.measure_class, []).append(r.value)
    inv = {}
    for cls, vals in sums.items():
        mean = math.fsum(vals) / len(vals)
        inv[cls] = 1.0 / mean**2 if mean > 0 else 1.0
    return np.array([inv[r.measure_class] for r in targets.records])


class Objective:
    """Weighted least-squares misfit of a parameter set to ``targets``."""

    def __init__(self, targets: TargetSet):
        if not targets.records:
            raise ParameterDomainError("target set is empty")
        self.targets = targets
        self.extractor = Extractor(targets)
        self.observed = targets.values()
        self.sqrt_w = np.sqrt(class_weights(targets))
        self.evaluations = 0

    def _check(self, params: ParameterSet):
        if params.treatment is not self.targets.treatment:
            raise ParameterDomainError(
                f"targets are for {self.targets.treatment.value}, parameters for {params.treatment.value}"
            )

    def model_values(self, params: ParameterSet) -> np.ndarray:
        self._check(params)
        return self.extractor.model_values(run(params, self.extractor.horizon))

    def residuals(self, params: ParameterSet) -> np.ndarray:
        """Weighted residuals sqrt(w) * (model - observed); raises on simulation errors."""
        return self.sqrt_w * (self.model_values(params) - self.observed)

    def __call__(self, params: ParameterSet) -> float:
        self._check(params)
        self.evaluations += 1
        try:
            r = self.residuals(params)
        except (GreenlabError, FloatingPointError, OverflowError, ZeroDivisionError) as e:
            log.debug("simulation failed: %s", e)
            return math.inf
        value = math.fsum(r * r)
        return value if math.isfinite(value) else math.inf


def objective(params: ParameterSet, targets: TargetSet) -> float:
    """Weighted sum of squared misfits; ``inf`` if the simulation fails."""
    return Objective(targets)(params)


@dataclass(frozen=True)
class StandardErrors:
    values: dict[str, float] | None
    non_identifiable: tuple[str, ...] = ()
    condition_ratio: float = float("nan")


def standard_errors(
    params: ParameterSet,
    targets: TargetSet,
    names: Sequence[str],
    step: float = JACOBIAN_STEP,
    _objective: Objective | None = None,
) -> StandardErrors:
    """Asymptotic standard errors of ``names`` at ``params``.

    SE_j = sqrt(s2 * inv(J'J)_jj) with s2 = RSS / (n - p). ``J`` is the central
    difference Jacobian of the weighted residuals with relative step ``step``
    (one-sided where a step would leave the parameter domain). If J'J is
    numerically singular, no numbers are returned; instead
    ``non_identifiable`` lists the parameters spanning the near-null space.
    """
    obj = _objective or Objective(targets)
    names = tuple(names)
    n, p = len(targets.records), len(names)
    if p == 0 or n <= p:
        return StandardErrors(values=None)
    flat = to_flat(params)
    x = np.array([float(flat[k]) for k in names])
    r0 = obj.residuals(params)
    rss = math.fsum(r0 * r0)

    def resid_at(j, value):
        try:
            return obj.residuals(with_values(params, {names[j]: value}))
        except GreenlabError:
            return None

    jac = np.empty((n, p))
    for j in range(p):
        h = step * abs(x[j]) if x[j] != 0 else step
        up, down = resid_at(j, x[j] + h), resid_at(j, x[j] - h)
        if up is not None and down is not None:
            jac[:, j] = (up - down) / (2 * h)
        elif up is not None:
            jac[:, j] = (up - r0) / h
        elif down is not None:
            jac[:, j] = (r0 - down) / h
        else:
            raise ParameterDomainError(f"cannot differentiate with respect to {names[j]}", key=names[j])

    scale = np.where(x != 0, np.abs(x), 1.0)
    js = jac * scale
    _, sv, vt = np.linalg.svd(js, full_matrices=False)
    ratio = sv[-1] / sv[0] if sv[0] > 0 else 0.0
    if ratio < SINGULAR_RATIO:
        weak = set()
        for s, v in zip(sv, vt):
            if sv[0] == 0 or s / sv[0] < SINGULAR_RATIO:
                weak.update(names[j] for j in range(p) if abs(v[j]) > 0.1)
        return StandardErrors(values=None, non_identifiable=tuple(k for k in names if k in weak), condition_ratio=ratio)
    s2 = rss / (n - p)
    cov_scaled = (vt.T / sv**2) @ vt
    se = scale * np.sqrt(np.maximum(s2 * np.diag(cov_scaled), 0.0))
    return StandardErrors(values=dict(zip(names, se.tolist())), condition_ratio=ratio)


@dataclass(frozen=True)
class Residual:
    record: TargetRecord
    model: float
    weighted: float


@dataclass(frozen=True)
class FitResult:
    params: ParameterSet
    estimates: dict[str, float]
    standard_errors: dict[str, float] | None
    rss: float
    residuals: tuple[Residual, ...]
    evaluations: int
    converged: bool
    non_identifiable: tuple[str, ...] = ()
    history: tuple[float, ...] = ()
    start_values: tuple[float, ...] = ()


class _Problem:
    """Log-space view of the free parameters with clamping into bounds."""

    def __init__(self, config: FitConfig, fixed: ParameterSet, obj: Objective):
        self.names = config.free
        self.fixed = fixed
        self.obj = obj
        self.x0, self.lo, self.hi = config.resolve(fixed)
        lo_eff = np.where(self.lo > 0, self.lo, self.hi * OPEN_FLOOR)
        self.lo_eff = np.minimum(lo_eff, self.x0)
        self.zlo, self.zhi = np.log(self.lo_eff), np.log(self.hi)
        self.best_x: np.ndarray | None = None
        self.best_f = math.inf
        self.evals = 0

    def to_x(self, z: np.ndarray) -> np.ndarray:
        return np.clip(np.exp(np.clip(z, self.zlo, self.zhi)), self.lo, self.hi)

    def params(self, x: np.ndarray) -> ParameterSet:
        return with_values(self.fixed, dict(zip(self.names, x)))

    def __call__(self, z: np.ndarray) -> float:
        x = self.to_x(z)
        self.evals += 1
        try:
            f = self.obj(self.params(x))
        except ParameterDomainError:
            f = math.inf
        if f < self.best_f:
            self.best_f, self.best_x = f, x.copy()
        return f

    def simplex(self, z: np.ndarray, size: float = 0.1) -> np.ndarray:
        # step inward from whichever bound is closer
        pts = [z]
        for j in range(len(z)):
            v = z.copy()
            v[j] = z[j] + size if z[j] + size <= self.zhi[j] else z[j] - size
            pts.append(v)
        return np.array(pts)


def _nelder_mead(problem: _Problem, z0: np.ndarray, config: FitConfig, budget: int) -> tuple[np.ndarray, float, bool, list[float]]:
    history: list[float] = []
    z, f, converged = np.clip(z0, problem.zlo, problem.zhi), math.inf, False
    start = problem.evals
    for _ in range(config.restarts + 1):
        remaining = budget - (problem.evals - start)
        if remaining <= len(z) + 1:
            break

        def record(intermediate_result):
            history.append(float(intermediate_result.fun))

        res = minimize(
            problem,
            z,
            method="Nelder-Mead",
            bounds=list(zip(problem.zlo, problem.zhi)),
            callback=record,
            options={
                "maxfev": remaining,
                "xatol": config.tol,
                "fatol": math.inf,
                "initial_simplex": problem.simplex(z),
                "adaptive": len(z) > 2,
            },
        )
        improved = res.fun < f and not math.isclose(res.fun, f, rel_tol=1e-12, abs_tol=1e-300)
        z, f = np.clip(res.x, problem.zlo, problem.zhi), min(f, float(res.fun))
        converged = bool(res.status == 0)
        if not improved or not converged:
            break
    return z, f, converged, history


def fit(config: FitConfig, fixed: ParameterSet, targets: TargetSet) -> FitResult:
    """Estimate ``config.free`` by bounded multi-start Nelder-Mead.

    The first start is the configured initial point; further starts are drawn
    log-uniformly within bounds from ``config.seed``. Returns the best point
    ever evaluated, with standard errors at that point.
    """
    obj = Objective(targets)
    if not config.free:
        value = obj(fixed)
        if not math.isfinite(value):
            raise CalibrationFailure("objective is not finite at the fixed parameters")
        return _finish(obj, fixed, {}, value, evaluations=1, converged=True, history=(value,), names=())

    problem = _Problem(config, fixed, obj)
    rng = np.random.default_rng(config.seed)
    starts = [np.log(np.maximum(problem.x0, problem.lo_eff))]
    for _ in range(config.starts - 1):
        starts.append(rng.uniform(problem.zlo, problem.zhi))

    best = None
    start_values = []
    for i, z0 in enumerate(starts):
        f0 = problem(z0)
        start_values.append(f0)
        z, f, converged, history = _nelder_mead(problem, z0, config, config.max_evals)
        log.info("start %d: objective %.6g -> %.6g (%s)", i, f0, f, "converged" if converged else "stopped")
        if math.isfinite(f) and (best is None or f < best[1]):
            best = (z, f, converged, history)

    if best is None or problem.best_x is None or not math.isfinite(problem.best_f):
        raise CalibrationFailure(f"no start produced a finite objective after {problem.evals} evaluations")

    x = problem.best_x
    estimates = dict(zip(config.free, x.tolist()))
    params = problem.params(x)
    return _finish(
        obj, params, estimates, problem.best_f,
        evaluations=problem.evals, converged=best[2], history=tuple(best[3]),
        names=config.free, start_values=tuple(start_values),
    )


def _finish(obj, params, estimates, rss, *, evaluations, converged, history, names, start_values=()):
    model = obj.model_values(params)
    weighted = obj.sqrt_w * (model - obj.observed)
    residuals = tuple(
        Residual(rec, float(m), float(w)) for rec, m, w in zip(obj.targets.records, model, weighted)
    )
    se = standard_errors(params, obj.targets, names, _objective=obj) if names else StandardErrors(values=None)
    return FitResult(
        params=params,
        estimates=estimates,
        standard_errors=se.values,
        rss=rss,
        residuals=residuals,
        evaluations=evaluations,
        converged=converged,
        non_identifiable=se.non_identifiable,
        history=history,
        start_values=start_values,
    )


def write_fit_result(result: FitResult) -> str:
    """Parameter file with a ``# SE`` comment per estimate and an rss/evals footer."""
    comments = {}
    for name in result.estimates:
        se = (result.standard_errors or {}).get(name)
        comments[name] = f"SE {format_value(se)}" if se is not None else "SE n/a"
    lines = [write_params(result.params, comments).rstrip("\n")]
    lines.append(f"# rss = {format_value(float(result.rss))}")
    lines.append(f"# evals = {result.evaluations}")
    lines.append(f"# converged = {str(result.converged).lower()}")
    if result.non_identifiable:
        lines.append(f"# non_identifiable = {', '.join(result.non_identifiable)}")
    return "\n".join(lines) + "\n"


def write_residuals(result: FitResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage_gc", "pa", "rank", "organ", "measure", "observed", "model", "weighted_residual"])
    for r in result.residuals:
        rec = r.record
        w.writerow([rec.stage_gc, rec.pa, rec.rank, rec.organ, rec.measure, repr(rec.value), repr(r.model), repr(r.weighted)])
    return buf.getvalue()


def parse_fit_config(text: str) -> FitConfig:
    """Fit configuration from ``key = value`` text.

    Recognized keys: ``free`` (comma list), ``bounds.<name> = lo, hi``,
    ``init.<name>``, ``max_evals``, ``tol``, ``starts``, ``seed``, ``restarts``.
    """
    raw = parse_flat(text)
    kwargs: dict = {"bounds": {}, "initial": {}}
    for key, value in raw.items():
        try:
            if key == "free":
                kwargs["free"] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key.startswith("bounds."):
                lo, hi = (float(v) for v in value.split(","))
                kwargs["bounds"][key[len("bounds."):]] = (lo, hi)
            elif key.startswith("init."):
                kwargs["initial"][key[len("init."):]] = float(value)
            elif key in ("max_evals", "starts", "seed", "restarts"):
                kwargs[key] = int(value)
            elif key == "tol":
                kwargs[key] = float(value)
            else:
                raise ParameterDomainError(f"unknown fit config key {key!r}", key=key)
        except ValueError as e:
            if isinstance(e, ParameterDomainError):
                raise
            raise ParameterDomainError(f"{key}: cannot parse {value!r}", key=key) from None
    kwargs.setdefault("free", ())
    return FitConfig(**kwargs)
