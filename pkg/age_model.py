# age_model.py — validated model instance: survival, contagion, demographic equilibrium

import logging
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, optimize

from errors import (
    ConfigError,
    ExpressionError,
    ModelValidationError,
    NumericalError,
    RootFindingError,
)
from quadrature import PanelGrid
from rate_expr import (
    AgeFunction,
    DensityDependence,
    PiecewiseExpr,
    evaluate,
    parse_constant,
    parse_rate,
)
from run_log import log_step

logger = logging.getLogger(__name__)

RATE_FIELDS = ("beta", "mu", "r", "q", "k")
MODEL_KEYS = ("a_dagger", "r0d", "alpha") + RATE_FIELDS + ("phi", "phi_cap")

# ∫μ beyond this is treated as certain death (π := 0)
MU_CAP = 700.0
# upper end of the Φ scans for density dependence without a cap
PHI_SCAN_MAX = 1000.0
VALIDATION_POINTS = 1000


# -----------------------------------------
# Numeric options
# -----------------------------------------
@dataclass(frozen=True)
class NumericOptions:
    quad_panels: int = 64
    quad_order: int = 8
    tab_points: int = 1025
    norm_tol: float = 1e-6
    root_tol: float = 1e-10
    newton_tol: float = 1e-10
    w_scan_max: float = 100.0
    w_scan_points: int = 2000
    zeta_lo: float = -10.0
    zeta_hi: float = 2.0
    omega_max: float = 40.0
    stability_tol: float = 1e-6
    fold_tol: float = 5e-2
    max_roots: int = 200

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("zeta_lo", "zeta_hi"):
                if not math.isfinite(value):
                    raise ConfigError(f"must be finite, got {value!r}", key_path=f"numerics.{f.name}")
                continue
            if not value > 0:
                raise ConfigError(f"must be positive, got {value!r}", key_path=f"numerics.{f.name}")
        if not self.zeta_lo < self.zeta_hi:
            raise ConfigError("zeta_lo must be below zeta_hi", key_path="numerics.zeta_lo")
        if self.quad_order < 2:
            raise ConfigError("need at least 2 nodes per panel", key_path="numerics.quad_order")

    @classmethod
    def from_mapping(cls, data: Optional[Mapping[str, Any]],
                     key_path: str = "numerics") -> "NumericOptions":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for name, value in (data or {}).items():
            if name not in known:
                raise ConfigError("unknown key", key_path=f"{key_path}.{name}")
            caster = int if isinstance(known[name].default, int) else float
            try:
                values[name] = caster(value)
            except (TypeError, ValueError):
                raise ConfigError(f"expected a number, got {value!r}",
                                  key_path=f"{key_path}.{name}") from None
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# -----------------------------------------
# Model specification (text-level inputs, parsed)
# -----------------------------------------
@dataclass(frozen=True)
class ModelSpec:
    a_dagger: float
    r0d: float
    alpha: float
    beta: AgeFunction
    mu: AgeFunction
    r: AgeFunction
    q: AgeFunction
    k: AgeFunction
    phi: DensityDependence
    numerics: NumericOptions = field(default_factory=NumericOptions)
    name: str = "custom"

    @classmethod
    def from_strings(cls, fields_: Mapping[str, Any], numerics: Optional[NumericOptions] = None,
                     name: str = "custom") -> "ModelSpec":
        """Build from config-style values (expressions as text)."""
        for key in fields_:
            if key not in MODEL_KEYS:
                raise ConfigError("unknown key", key_path=f"model.{key}")
        for key in ("a_dagger", "r0d", "alpha") + RATE_FIELDS:
            if fields_.get(key) is None:
                raise ConfigError("missing required key", key_path=f"model.{key}")

        scalars = {}
        for key in ("a_dagger", "r0d", "alpha"):
            try:
                scalars[key] = parse_constant(fields_[key])
            except ExpressionError as err:
                raise ExpressionError(err.detail, err.source, err.offset, key_path=f"model.{key}") from None

        rates = {}
        for key in RATE_FIELDS:
            text = str(fields_[key])
            try:
                rates[key] = parse_rate(text, variable="a")
            except ExpressionError as err:
                raise ExpressionError(err.detail, err.source, err.offset, key_path=f"model.{key}") from None

        try:
            if fields_.get("phi_cap") is not None:
                phi = DensityDependence.linear_capped(float(fields_["phi_cap"]))
            elif fields_.get("phi") is not None:
                phi = DensityDependence.from_source(str(fields_["phi"]))
            else:
                raise ConfigError("missing required key (phi or phi_cap)", key_path="model.phi")
        except ExpressionError as err:
            raise ExpressionError(err.detail, err.source, err.offset, key_path="model.phi") from None
        except ModelValidationError as err:
            raise ModelValidationError(str(err), value=err.value, key_path="model.phi_cap") from None

        return cls(phi=phi, numerics=numerics or NumericOptions(), name=name, **scalars, **rates)

    def with_alpha(self, alpha: float) -> "ModelSpec":
        return replace(self, alpha=float(alpha))

    def to_config(self) -> Dict[str, Any]:
        """Text-level model section; reloading it rebuilds an identical spec."""
        out: Dict[str, Any] = {
            "a_dagger": self.a_dagger,
            "r0d": self.r0d,
            "alpha": self.alpha,
        }
        for key in RATE_FIELDS:
            out[key] = getattr(self, key).source
        if self.phi.is_linear_capped:
            out["phi_cap"] = self.phi.cap
        else:
            out["phi"] = self.phi.expr.source
        return out


# -----------------------------------------
# Tabulated functions
# -----------------------------------------
@dataclass(frozen=True, eq=False)
class TabulatedFn:
    """Values at the grid nodes, read back through the panel polynomials."""

    grid: PanelGrid
    values: np.ndarray

    def __call__(self, a):
        out = self.grid.interpolate(self.values, a)
        return float(out) if np.ndim(a) == 0 else out

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def integral(self) -> float:
        return float(self.grid.integrate(self.values))

    def sample(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        ages = np.linspace(0.0, self.grid.a_dagger, n)
        return ages, np.asarray(self(ages))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def integrate_mu(mu: AgeFunction, lo: float, hi: float, breaks: Sequence[float] = ()) -> float:
    """∫_lo^hi μ by adaptive quadrature; failures name the subinterval."""
    if hi <= lo:
        return 0.0
    inner = [b for b in breaks if lo < b < hi]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(lambda s: float(mu(s)), lo, hi, points=inner or None, limit=200)
        except (integrate.IntegrationWarning, ZeroDivisionError, OverflowError) as exc:
            raise NumericalError(f"quadrature of mu failed on [{lo:.17g}, {hi:.17g}]: {exc}") from None
    if not math.isfinite(value):
        raise NumericalError(f"quadrature of mu is not finite on [{lo:.17g}, {hi:.17g}]")
    return value


def survival_from_integral(mu_integral) -> np.ndarray:
    m = np.asarray(mu_integral, dtype=float)
    return np.where(m >= MU_CAP, 0.0, np.exp(-np.minimum(m, MU_CAP)))


# -----------------------------------------
# Validated instance
# -----------------------------------------
class AgeModel:
    """A ModelSpec checked against its invariants, with node tables precomputed.

    Immutable after construction; every downstream module reads the arrays
    `beta`, `r`, `q`, `k`, `pi`, `contagion` at `grid.nodes`.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.options = spec.numerics
        self._check_scalars()

        for key in RATE_FIELDS:
            fn = getattr(spec, key)
            if isinstance(fn, PiecewiseExpr):
                fn.check_coverage(spec.a_dagger, key_path=f"model.{key}")

        self.breaks = tuple(sorted({b for key in RATE_FIELDS for b in getattr(spec, key).breakpoints()}))
        self.grid = PanelGrid.build(spec.a_dagger, self.breaks, self.options.quad_panels,
                                    self.options.quad_order)
        self.nodes = self.grid.nodes

        self._check_rates()
        spec.phi.validate(PHI_SCAN_MAX)

        self.beta = np.asarray(spec.beta(self.nodes))
        self.r = np.asarray(spec.r(self.nodes))
        self.q = np.asarray(spec.q(self.nodes))
        self.k = np.asarray(spec.k(self.nodes))

        edges = np.concatenate(([0.0], self.nodes))
        steps = [integrate_mu(spec.mu, lo, hi, self.breaks) for lo, hi in zip(edges[:-1], edges[1:])]
        self.mu_integral = np.cumsum(steps)
        self.pi = survival_from_integral(self.mu_integral)
        self.contagion = self.grid.cumulative(self.k)

        normalization = float(self.grid.integrate(self.beta * self.pi))
        if abs(normalization - 1.0) > self.options.norm_tol:
            raise ModelValidationError(
                f"birth normalization ∫βπ = {normalization:.17g}, expected 1 within {self.options.norm_tol:g}",
                value=normalization, key_path="model.beta")
        self.normalization = normalization

        self.int_r_pi = float(self.grid.integrate(self.r * self.pi))
        if not self.int_r_pi > 0:
            raise ModelValidationError("∫rπ vanishes; the weighted population size is identically 0",
                                       value=self.int_r_pi, key_path="model.r")

        self.q_dstar = self._solve_demographic()
        self.b_dfe = self.q_dstar / self.int_r_pi
        self.n_star = self.tabulate(self.b_dfe * self.pi)
        log_step(f"[MODEL] {spec.name}: Q_d*={self.q_dstar:.6g} B_dfe={self.b_dfe:.6g} "
                 f"({self.grid.n_panels} panels x {self.grid.order})")

    @property
    def alpha(self) -> float:
        return self.spec.alpha

    @property
    def a_dagger(self) -> float:
        return self.spec.a_dagger

    @property
    def r0d(self) -> float:
        return self.spec.r0d

    @property
    def phi(self) -> DensityDependence:
        return self.spec.phi

    def tabulate(self, values) -> TabulatedFn:
        return TabulatedFn(self.grid, np.asarray(values, dtype=float))

    def with_alpha(self, alpha: float) -> "AgeModel":
        """Same tables, different default α (α enters no table)."""
        clone = object.__new__(AgeModel)
        clone.__dict__.update(self.__dict__)
        clone.spec = self.spec.with_alpha(alpha)
        return clone

    # -----------------------------------------
    # Checks
    # -----------------------------------------
    def _check_scalars(self) -> None:
        spec = self.spec
        if not (math.isfinite(spec.a_dagger) and spec.a_dagger > 0):
            raise ModelValidationError(f"a_dagger must be positive and finite, got {spec.a_dagger!r}",
                                       value=spec.a_dagger, key_path="model.a_dagger")
        if not spec.r0d > 1:
            raise ModelValidationError(f"R0d must exceed 1, got {spec.r0d!r}", value=spec.r0d,
                                       key_path="model.r0d")
        if not spec.alpha >= 0:
            raise ModelValidationError(f"alpha must be nonnegative, got {spec.alpha!r}",
                                       value=spec.alpha, key_path="model.alpha")

    def _check_rates(self) -> None:
        ages = np.linspace(0.0, self.spec.a_dagger, VALIDATION_POINTS)
        for key in RATE_FIELDS:
            fn = getattr(self.spec, key)
            try:
                values = np.asarray(evaluate(fn, ages, self.spec.a_dagger))
            except ExpressionError as err:
                raise ExpressionError(err.detail, err.source, err.offset, key_path=f"model.{key}") from None
            finite = np.isfinite(values)
            if np.any(values[finite] < -1e-12):
                at = float(ages[finite][np.argmin(values[finite])])
                raise ModelValidationError(f"{key} is negative at a={at:.6g}",
                                           value=float(np.min(values[finite])), key_path=f"model.{key}")

    def _solve_demographic(self) -> float:
        phi, r0d = self.spec.phi, self.spec.r0d
        x_stop = phi.monotone_limit(PHI_SCAN_MAX)
        xs = np.linspace(0.0, x_stop, 4001)
        gap = r0d * np.asarray(phi(xs)) - 1.0
        down = np.nonzero((gap[:-1] > 0) & (gap[1:] <= 0))[0]
        if down.size == 0:
            raise RootFindingError(
                f"R0d*Phi(x) = 1 has no root on [0, {x_stop:.6g}]; "
                f"Phi ranges over [{float(np.min(phi(xs))):.6g}, {float(np.max(phi(xs))):.6g}]")
        k = int(down[0])
        if gap[k + 1] == 0.0:
            return float(xs[k + 1])
        return float(optimize.brentq(lambda x: r0d * phi(x) - 1.0, xs[k], xs[k + 1], xtol=1e-14))


# -----------------------------------------
# Model operations
# -----------------------------------------
def survival(model: AgeModel, a):
    """π(a); exactly 1 at a = 0 and exactly 0 at a = a†."""
    ages = np.asarray(a, dtype=float)
    values = np.clip(model.grid.interpolate(model.pi, ages), 0.0, 1.0)
    values = np.where(ages <= 0.0, 1.0, values)
    values = np.where(ages >= model.a_dagger, 0.0, values)
    return float(values) if ages.ndim == 0 else values


def survival_ratio(model: AgeModel, a1: float, a2: float) -> float:
    """π(a2)/π(a1) = exp(-∫_{a1}^{a2} μ) without forming either survival."""
    if a2 >= model.a_dagger:
        return 0.0
    return math.exp(-min(integrate_mu(model.spec.mu, a1, a2, model.breaks), MU_CAP))


def cumulative_contagion(model: AgeModel, a):
    """L(a) = ∫_0^a K."""
    ages = np.asarray(a, dtype=float)
    values = model.grid.interpolate(model.contagion, ages)
    values = np.where(ages <= 0.0, 0.0, values)
    return float(values) if ages.ndim == 0 else values


def demographic_equilibrium(model: AgeModel) -> Tuple[float, TabulatedFn, float]:
    """(Q_d*, N*, B_dfe) with R0d·Φ(Q_d*) = 1 and N* = Q_d*·π/∫rπ."""
    return model.q_dstar, model.n_star, model.b_dfe


def build_model(spec: ModelSpec) -> AgeModel:
    return AgeModel(spec)
