# spectrum.py — linearization kernels, characteristic function and its roots
#
# Around an equilibrium (B*, W*) the (B, W) renewal system linearizes to four
# convolution kernels Ψ1..Ψ4; stability is read from the roots of
#     Ψ(λ) = (1 - Ψ̂1(λ))(1 - Ψ̂4(λ)) - Ψ̂2(λ) Ψ̂3(λ).
# Roots are located by the argument principle on rectangles (winding number of
# Ψ along the boundary), splitting boxes until each holds one root, then
# polished by Newton.

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize

from age_model import AgeModel, NumericOptions, TabulatedFn
from equilibria import (
    DISEASE_FREE,
    EquilibriumPoint,
    disease_free_point,
    eval_FGH,
    find_endemic,
)
from errors import DegenerateModelError, ModelValidationError, RootFindingError
from quadrature import PanelGrid, sum_by_owner
from run_log import log_step

logger = logging.getLogger(__name__)

STABLE_BEYOND_WINDOW = complex(-math.inf, 0.0)

MAX_JITTERS = 5
MAX_DEPTH = 40
MAX_BOUNDARY_POINTS = 40000
# floor on how many ways a panel may be split when transforming at large |ω|
MAX_SUBPANELS = 64
NEAR_ZERO = 1e-9
# the upper-half search box starts slightly below the real axis
REAL_AXIS_MARGIN = 0.0371
_SPLIT_SHIFTS = (0.0, 0.0713, -0.0931, 0.1177, -0.1419, 0.1661)


# -----------------------------------------
# Kernels
# -----------------------------------------
@dataclass(frozen=True, eq=False)
class KernelSet:
    psi1: TabulatedFn
    psi2: TabulatedFn
    psi3: TabulatedFn
    psi4: TabulatedFn
    at: EquilibriumPoint
    options: NumericOptions = field(default_factory=NumericOptions)
    _refined: Dict[int, Tuple[PanelGrid, np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> PanelGrid:
        return self.psi1.grid

    @property
    def table(self) -> np.ndarray:
        return np.stack([self.psi1.values, self.psi2.values, self.psi3.values, self.psi4.values])

    @property
    def subpanel_limit(self) -> int:
        return max(MAX_SUBPANELS, 4 * math.ceil(self.options.omega_max * self.grid.max_width / 2.0))

    def _weighted(self, sub: int) -> Tuple[PanelGrid, np.ndarray]:
        cached = self._refined.get(sub)
        if cached is None:
            grid = self.grid.refined(sub)
            values = self.table if sub == 1 else self.grid.interpolate(self.table, grid.nodes)
            cached = (grid, (values * grid.weights).T)
            self._refined[sub] = cached
        return cached

    def transforms(self, lam) -> np.ndarray:
        """Ψ̂1..Ψ̂4 at each λ, shape (n, 4); panels are split when ω·width > 2."""
        lam = np.atleast_1d(np.asarray(lam, dtype=complex)).ravel()
        out = np.empty((lam.size, 4), dtype=complex)
        if not np.all(np.isfinite(lam)):
            raise RootFindingError("kernel transform requested at a non-finite lambda")
        need = np.maximum(1, np.ceil(np.abs(lam.imag) * self.grid.max_width / 2.0)).astype(int)
        limit = self.subpanel_limit
        if need.size and need.max() > limit:
            worst = lam[int(np.argmax(need))]
            raise RootFindingError(f"kernel transform at lambda={worst:.6g} needs {int(need.max())} "
                                   f"subpanels (limit {limit}); lower omega_max")
        for sub in np.unique(need):
            sel = need == sub
            grid, weighted = self._weighted(int(sub))
            out[sel] = np.exp(-np.multiply.outer(lam[sel], grid.nodes)) @ weighted
        return out

    def abs_transforms(self, zeta: float) -> np.ndarray:
        """∫ e^{-ζa} |Ψi(a)| da: bounds |Ψ̂i(λ)| for Re λ ≥ ζ."""
        return (np.abs(self.table) * np.exp(-zeta * self.grid.nodes)) @ self.grid.weights


def _kernel_coefficient(model: AgeModel, B: float, Q: float) -> np.ndarray:
    """c(a) = R0d Φ(Q*) β(a) + B* Φ'(Q*)/Φ(Q*) r(a)."""
    phi_q = model.phi(Q)
    if phi_q <= 0:
        raise DegenerateModelError(f"Phi(Q*) = 0 at Q*={Q:.17g}")
    dphi = model.phi.derivative(Q)
    return model.r0d * phi_q * model.beta + B * dphi / phi_q * model.r


def _shifted_rules(model: AgeModel):
    grid = model.grid
    owner, points, weights = grid.tail_rules(grid.nodes, shifts=model.breaks)
    shift = points - grid.nodes[owner]
    return owner, points, weights, shift, np.asarray(model.spec.k(shift), dtype=float)


def endemic_kernel_tables(model: AgeModel, alpha: float, W: float, B: float,
                          Q: float) -> np.ndarray:
    """Ψ1..Ψ4 at the nodes for any level W (W = 0 included)."""
    grid, n = model.grid, model.grid.size
    cpi = _kernel_coefficient(model, B, Q) * model.pi
    qpi = model.q * model.pi
    decay = np.exp(-W * model.contagion)
    J = grid.decay_cumulative(model.k * decay, alpha)
    U = grid.decay_cumulative(decay, alpha)

    psi1 = cpi * (decay + W * J)
    psi3 = W * qpi * J

    owner, points, weights, shift, k_shift = _shifted_rules(model)
    cpi_s, qpi_s, U_s, J_s = grid.interpolate(np.stack([cpi, qpi, U, J]), points)
    U_b, J_b, E_b = grid.interpolate(np.stack([U, J, decay]), shift)
    early = np.exp(-alpha * grid.nodes)[owner]

    psi2 = -alpha * B * sum_by_owner(owner, weights * cpi_s * k_shift * (U_s - early * U_b), n)
    psi4 = B * sum_by_owner(owner, weights * qpi_s * k_shift * (early * (E_b + W * J_b) - W * J_s), n)
    return np.stack([psi1, psi2, psi3, psi4])


def dfe_kernel_tables(model: AgeModel, alpha: float) -> np.ndarray:
    """W* = 0 closed forms: Ψ3 ≡ 0 and the inner ρ-integrals done by hand."""
    grid, n = model.grid, model.grid.size
    B, a = model.b_dfe, grid.nodes
    cpi = _kernel_coefficient(model, B, model.q_dstar) * model.pi
    qpi = model.q * model.pi

    owner, points, weights, _, k_shift = _shifted_rules(model)
    cpi_s, qpi_s = grid.interpolate(np.stack([cpi, qpi]), points)
    c_tail = sum_by_owner(owner, weights * cpi_s * k_shift, n)
    q_tail = sum_by_owner(owner, weights * qpi_s * k_shift, n)

    psi2 = -B * (-np.expm1(-alpha * a)) * c_tail
    psi4 = B * np.exp(-alpha * a) * q_tail
    return np.stack([cpi, psi2, np.zeros(n), psi4])


def build_kernels(model: AgeModel, eq: EquilibriumPoint) -> KernelSet:
    if eq.kind == DISEASE_FREE:
        table = dfe_kernel_tables(model, eq.alpha)
    else:
        table = endemic_kernel_tables(model, eq.alpha, eq.W_star, eq.B_star, eq.Q_star)
    return KernelSet(*(model.tabulate(row) for row in table), at=eq, options=model.options)


def char_fn(kernels: KernelSet, lam):
    h = kernels.transforms(lam)
    value = (1.0 - h[:, 0]) * (1.0 - h[:, 3]) - h[:, 1] * h[:, 2]
    return complex(value[0]) if np.ndim(lam) == 0 else value


def demographic_char_fn(model: AgeModel, lam):
    """1 - ∫e^{-λa}βπ - R0d Φ'(Q_d*) N*(0) ∫e^{-λa}rπ, the demography-only factor."""
    weight = model.r0d * model.phi.derivative(model.q_dstar) * model.b_dfe
    value = (1.0 - model.grid.laplace(model.beta * model.pi, lam)
             - weight * model.grid.laplace(model.r * model.pi, lam))
    return complex(value) if np.ndim(lam) == 0 else value


# -----------------------------------------
# Root search targets
# -----------------------------------------
@dataclass(frozen=True)
class _Target:
    """An entire function with a magnitude scale and a root-free half-plane bound."""

    evaluate: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]
    bound: Callable[[float], float]

    def __call__(self, lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.evaluate(lam)


def _char_target(kernels: KernelSet) -> _Target:
    def evaluate(lam):
        h = kernels.transforms(lam)
        value = (1.0 - h[:, 0]) * (1.0 - h[:, 3]) - h[:, 1] * h[:, 2]
        scale = 1.0 + np.abs(h[:, 0]) + np.abs(h[:, 3]) + np.abs(h[:, 0] * h[:, 3]) + np.abs(h[:, 1] * h[:, 2])
        return value, scale

    def bound(zeta):
        a = kernels.abs_transforms(zeta)
        return a[0] + a[3] + a[0] * a[3] + a[1] * a[2]

    return _Target(evaluate, bound)


FACTORS = {"demographic": 0, "epidemic": 3}


def _factor_target(kernels: KernelSet, factor: str) -> _Target:
    i = FACTORS[factor]

    def evaluate(lam):
        h = kernels.transforms(lam)[:, i]
        return 1.0 - h, 1.0 + np.abs(h)

    return _Target(evaluate, lambda zeta: kernels.abs_transforms(zeta)[i])


# -----------------------------------------
# Boxes and winding numbers
# -----------------------------------------
@dataclass(frozen=True)
class Box:
    zeta_lo: float
    zeta_hi: float
    omega_lo: float
    omega_hi: float

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.zeta_lo + self.zeta_hi), 0.5 * (self.omega_lo + self.omega_hi))

    def contains(self, z: complex, slack: float = 0.0) -> bool:
        return (self.zeta_lo - slack <= z.real <= self.zeta_hi + slack
                and self.omega_lo - slack <= z.imag <= self.omega_hi + slack)

    def split(self, attempt: int = 0) -> Tuple["Box", "Box"]:
        """Halve along the longest side; later attempts move the cut off-centre."""
        frac = 0.5 + _SPLIT_SHIFTS[attempt % len(_SPLIT_SHIFTS)]
        width = self.zeta_hi - self.zeta_lo
        height = self.omega_hi - self.omega_lo
        if width >= height:
            mid = self.zeta_lo + frac * width
            return (Box(self.zeta_lo, mid, self.omega_lo, self.omega_hi),
                    Box(mid, self.zeta_hi, self.omega_lo, self.omega_hi))
        mid = self.omega_lo + frac * height
        return (Box(self.zeta_lo, self.zeta_hi, self.omega_lo, mid),
                Box(self.zeta_lo, self.zeta_hi, mid, self.omega_hi))

    def jittered(self, k: int) -> "Box":
        if k == 0:
            return self
        d = k * 2.3e-3 * (1.0 + max(self.zeta_hi - self.zeta_lo, self.omega_hi - self.omega_lo))
        return Box(self.zeta_lo - d, self.zeta_hi + 0.7 * d, self.omega_lo - 0.3 * d, self.omega_hi + 0.9 * d)


def winding_number(target: _Target, box: Box) -> Optional[int]:
    """Zeros of `target` inside `box`, or None when the boundary passes too close to one."""
    corners = [complex(box.zeta_lo, box.omega_lo), complex(box.zeta_hi, box.omega_lo),
               complex(box.zeta_hi, box.omega_hi), complex(box.zeta_lo, box.omega_hi)]
    sides = []
    for start, end in zip(corners, corners[1:] + corners[:1]):
        n = 8 + int(math.ceil(4.0 * abs(end - start)))
        sides.append(start + (end - start) * np.arange(n) / n)
    points = np.append(np.concatenate(sides), corners[0])
    values, scale = target(points)

    for _ in range(60):
        if not np.all(np.isfinite(values)) or np.any(np.abs(values) < NEAR_ZERO * scale):
            return None
        dphase = np.angle(values[1:] / values[:-1])
        bad = np.nonzero(np.abs(dphase) >= 0.5 * np.pi)[0]
        if bad.size == 0:
            turns = dphase.sum() / (2.0 * np.pi)
            count = int(round(turns))
            return count if abs(turns - count) < 1e-3 else None
        if points.size + bad.size > MAX_BOUNDARY_POINTS:
            return None
        mids = 0.5 * (points[bad] + points[bad + 1])
        new_values, new_scale = target(mids)
        points = np.insert(points, bad + 1, mids)
        values = np.insert(values, bad + 1, new_values)
        scale = np.insert(scale, bad + 1, new_scale)
    return None


def _newton(target: _Target, z0: complex, tol: float, max_iter: int = 60,
            box: Optional[Box] = None):
    """Newton from z0; None once an iterate leaves `box` grown by half its size."""
    z = complex(z0)
    slack = max_step = math.inf
    if box is not None:
        size = max(box.zeta_hi - box.zeta_lo, box.omega_hi - box.omega_lo)
        slack, max_step = 0.5 * size, 2.0 * size
    for _ in range(max_iter):
        value, scale = target(np.array([z]))
        if not np.isfinite(value[0]):
            return None
        if abs(value[0]) <= tol * scale[0]:
            return z, float(abs(value[0]) / scale[0])
        h = 1e-6 * (1.0 + abs(z))
        pair, _ = target(np.array([z + h, z - h]))
        slope = (pair[0] - pair[1]) / (2.0 * h)
        if slope == 0 or not np.isfinite(slope):
            return None
        step = value[0] / slope
        z -= step
        if abs(step) > max_step or (box is not None and not box.contains(z, slack)):
            return None
        if abs(step) <= 1e-15 * (1.0 + abs(z)):
            break
    value, scale = target(np.array([z]))
    residual = float(abs(value[0]) / scale[0])
    return (z, residual) if math.isfinite(residual) else None


# -----------------------------------------
# Spectrum search
# -----------------------------------------
@dataclass(frozen=True)
class SearchRegion:
    zeta_lo: float
    zeta_hi: float
    omega_max: float

    @classmethod
    def from_options(cls, opts: NumericOptions) -> "SearchRegion":
        return cls(opts.zeta_lo, opts.zeta_hi, opts.omega_max)


@dataclass(frozen=True)
class CharRoot:
    value: complex
    residual: float

    @property
    def zeta(self) -> float:
        return self.value.real

    @property
    def omega(self) -> float:
        return self.value.imag


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    roots: Tuple[CharRoot, ...]
    region: SearchRegion
    winding_counts: Tuple[Tuple[Box, int], ...]
    partial: bool = False

    @property
    def rightmost(self) -> Optional[CharRoot]:
        if not self.roots:
            return None
        return max(self.roots, key=lambda r: (r.zeta, r.omega))


def _subdivide(target: _Target, box: Box, count: int, tol: float, max_roots: int):
    roots: List[Tuple[complex, float]] = []
    counts: List[Tuple[Box, int]] = []
    partial = False
    stack = [(box, count, 0)]
    while stack:
        box, n, depth = stack.pop()
        counts.append((box, n))
        if n <= 0:
            continue
        if len(roots) >= max_roots:
            partial = True
            break
        if n == 1 or depth >= MAX_DEPTH:
            found = _newton(target, box.center, tol, box=box)
            slack = 1e-9 * (1.0 + abs(box.center))
            if found is not None and (box.contains(found[0], slack) or depth >= MAX_DEPTH):
                if n > 1:
                    log_step(f"[SPECTRUM] cluster of {n} roots near {found[0]:.6g} kept once")
                roots.append(found)
                continue
            if depth >= MAX_DEPTH:
                log_step(f"[SPECTRUM] Newton failed in box around {box.center:.6g}")
                continue

        children = None
        for attempt in range(MAX_JITTERS + 1):
            parts = box.split(attempt)
            sub = [winding_number(target, part) for part in parts]
            if None not in sub and sum(sub) == n:
                children = list(zip(parts, sub))
                break
        if children is None:
            raise RootFindingError(
                f"winding count of box [{box.zeta_lo:.6g},{box.zeta_hi:.6g}]x"
                f"[{box.omega_lo:.6g},{box.omega_hi:.6g}] unstable after {MAX_JITTERS} jitters")
        for part, m in reversed(children):
            stack.append((part, m, depth + 1))
    return roots, counts, partial


def _canonical(raw: List[Tuple[complex, float]], region: SearchRegion) -> Tuple[CharRoot, ...]:
    kept: List[CharRoot] = []
    for z, residual in raw:
        if abs(z.imag) <= 1e-7 * (1.0 + abs(z)):
            z = complex(z.real, 0.0)
        if z.imag < 0:
            continue
        if not (region.zeta_lo <= z.real <= region.zeta_hi and z.imag <= region.omega_max):
            continue
        if any(abs(z - other.value) <= 1e-8 * (1.0 + abs(z)) for other in kept):
            continue
        kept.append(CharRoot(z, residual))
    mirrored = [CharRoot(r.value.conjugate(), r.residual) for r in kept if r.value.imag > 0]
    return tuple(sorted(kept + mirrored, key=lambda r: (r.zeta, r.omega)))


def _search(target: _Target, region: SearchRegion, tol: float, max_roots: int) -> SpectrumResult:
    margin = min(REAL_AXIS_MARGIN, 0.5 * region.omega_max)
    base = Box(region.zeta_lo, region.zeta_hi, -margin, region.omega_max)
    for k in range(MAX_JITTERS + 1):
        box = base.jittered(k)
        count = winding_number(target, box)
        if count is not None:
            break
    else:
        raise RootFindingError(f"winding number unstable on the search boundary after {MAX_JITTERS} jitters")
    if k:
        log_step(f"[SPECTRUM] search boundary jittered {k}x")

    raw, counts, partial = _subdivide(target, box, count, tol, max_roots)
    if partial:
        log_step(f"[SPECTRUM] stopped after {max_roots} roots; result is partial")
    return SpectrumResult(_canonical(raw, region), region, tuple(counts), partial)


def find_roots(kernels: KernelSet, region: Optional[SearchRegion] = None,
               max_roots: Optional[int] = None) -> SpectrumResult:
    opts = kernels.options
    region = region or SearchRegion.from_options(opts)
    return _search(_char_target(kernels), region, opts.newton_tol, max_roots or opts.max_roots)


def find_factor_roots(kernels: KernelSet, factor: str, region: Optional[SearchRegion] = None) -> SpectrumResult:
    """Roots of 1 - Ψ̂1 ("demographic") or 1 - Ψ̂4 ("epidemic") alone."""
    opts = kernels.options
    region = region or SearchRegion.from_options(opts)
    return _search(_factor_target(kernels, factor), region, opts.newton_tol, opts.max_roots)


def _root_free_edge(target: _Target, start: float) -> float:
    """A ζ with no roots to its right: where the transform bound drops below 1."""
    zeta = start
    while target.bound(zeta) >= 0.9:
        zeta += max(1.0, abs(zeta))
        if zeta > 1e4:
            raise RootFindingError("kernels too large to bound the rightmost root")
    return zeta


def _rightmost(target: _Target, opts: NumericOptions, omega_max: Optional[float] = None) -> complex:
    omega_max = omega_max or opts.omega_max
    top = _root_free_edge(target, opts.zeta_hi)
    strips = []
    if top > opts.zeta_hi:
        strips.append((opts.zeta_hi, top))
    hi = opts.zeta_hi
    while hi > opts.zeta_lo:
        lo = max(opts.zeta_lo, hi - 1.0)
        strips.append((lo, hi))
        hi = lo
    for lo, hi in strips:
        result = _search(target, SearchRegion(lo, hi, omega_max), opts.newton_tol, opts.max_roots)
        if result.roots:
            return result.rightmost.value
    return STABLE_BEYOND_WINDOW


def rightmost_root(kernels: KernelSet, omega_max: Optional[float] = None) -> complex:
    """Root of Ψ with the largest real part; STABLE_BEYOND_WINDOW if none above zeta_lo."""
    return _rightmost(_char_target(kernels), kernels.options, omega_max)


# -----------------------------------------
# Disease-free stability
# -----------------------------------------
@dataclass(frozen=True)
class DfeStability:
    epidemic_factor_rightmost: complex
    demographic_factor_rightmost: complex
    verdict: str
    R0e: float


def classify(zeta: float, tol: float) -> str:
    if zeta > tol:
        return "unstable"
    if zeta < -tol:
        return "stable"
    return "marginal"


def dfe_stability(model: AgeModel, alpha: float) -> DfeStability:
    """Roots of Ψ at the DFE are those of 1 - Ψ̂4 together with those of 1 - Ψ̂1."""
    eq = disease_free_point(model, alpha)
    kernels = build_kernels(model, eq)
    epidemic = _rightmost(_factor_target(kernels, "epidemic"), model.options)
    demographic = _rightmost(_factor_target(kernels, "demographic"), model.options)
    verdicts = {classify(epidemic.real, model.options.stability_tol),
                classify(demographic.real, model.options.stability_tol)}
    if "unstable" in verdicts:
        verdict = "unstable"
    elif "marginal" in verdicts:
        verdict = "marginal"
    else:
        verdict = "stable"
    log_step(f"[SPECTRUM] DFE at alpha={alpha:g}: R0e={eq.R0e:.6g} epidemic={epidemic:.6g} "
             f"demographic={demographic:.6g} -> {verdict}")
    return DfeStability(epidemic, demographic, verdict, eq.R0e)


# -----------------------------------------
# Imaginary-axis crossings of the choices-stab demographic factor
# -----------------------------------------
@dataclass(frozen=True)
class TauThreshold:
    k: int
    omega: float
    tau: float
    tau_closed: float
    r0d: float
    agrees: bool


def tau_closed_form(k: int) -> float:
    if k % 2 == 0:
        return (1.0 - 4.0 * k * k) / 3.0
    return (-4.0 * k * k - 8.0 * k - 3.0) / 3.0


def tau_thresholds(k_max: int, tol: float = 1e-8) -> List[TauThreshold]:
    """τ_k where (1+τ)(3/2)∫e^{-iωa} sin2a cos a = 1 has a real-ω solution, ω ≈ 2k+1.

    Solved numerically on [0, π/2] and compared with the closed form. The
    matching birth ratio R0d = 1 - τ_k places the DFE demographic roots of
    the choices-stab rates at ±(2k+1)i.
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    grid = PanelGrid.build(math.pi / 2.0, panels=64, order=12)
    a = grid.nodes
    base = np.sin(2.0 * a) * np.cos(a)

    def sine_part(omega):
        return float(grid.integrate(np.sin(omega * a) * base))

    out = []
    for k in range(2, k_max + 1):
        omega = optimize.brentq(sine_part, 2.0 * k, 2.0 * k + 2.0, xtol=1e-14)
        tau = 2.0 / (3.0 * float(grid.integrate(np.cos(omega * a) * base))) - 1.0
        closed = tau_closed_form(k)
        agrees = abs(tau - closed) <= tol * max(1.0, abs(closed))
        if not agrees:
            log_step(f"[SPECTRUM] tau_{k} = {tau:.12g} vs closed form {closed:.12g}; refine the quadrature")
        out.append(TauThreshold(k, omega, tau, closed, 1.0 - closed, agrees))
    return out


# -----------------------------------------
# Transversality of the ±5i crossing (choices-stab + choices-stab2)
# -----------------------------------------
@dataclass(frozen=True)
class TransversalityReport:
    A: float
    B: float
    C: float
    D: float
    E: float
    F: float
    G: float
    H: float
    dF1_dalpha: float
    dF2_dalpha: float
    dF1_dzeta: float
    dF2_dzeta: float
    zeta_prime0: float
    W_star0: float
    W_star_prime0: float
    H_at_W0: float
    dH_dalpha: float
    dH_dW: float

    def quotient(self) -> float:
        num = -self.dF1_dalpha * self.dF1_dzeta - self.dF2_dalpha * self.dF2_dzeta
        return num / (self.dF1_dzeta ** 2 + self.dF2_dzeta ** 2)


CROSSING = 5j


def _require_stab2(model: AgeModel) -> None:
    a = model.nodes
    expected = {
        "beta": 1.5 * np.sin(2 * a), "r": 1.5 * np.sin(2 * a), "q": 1.5 * np.sin(2 * a),
        "k": a, "pi": np.cos(a),
    }
    ok = (abs(model.a_dagger - math.pi / 2) < 1e-12 and abs(model.r0d - 6.0) < 1e-12
          and model.phi.is_linear_capped and abs(model.phi.cap - 10.0) < 1e-12)
    for name, values in expected.items():
        ok = ok and np.allclose(getattr(model, name), values, rtol=0, atol=1e-9)
    if not ok:
        raise ModelValidationError("transversality formulas need the choices-stab2 rates "
                                   "(R0d=6, Phi cap 10, beta=r=q=1.5 sin 2a, K=a, mu=tan a, a_dagger=pi/2)")


def _branch_kernel_tables(model: AgeModel, alpha: float, W: float) -> np.ndarray:
    """Kernel tables at the steady state with level W, with B* and Q* read off F, G, H."""
    _, G, H = eval_FGH(model, alpha, W)
    return endemic_kernel_tables(model, alpha, W, 1.0 / H, G / H)


def transversality_at_zero(model: AgeModel, step: float = 1e-4) -> TransversalityReport:
    """Speed of the ±5i pair as α leaves 0 along the endemic branch.

    The α-derivatives of Ψ1 and Ψ2 are central differences of the kernels
    built at (±step, W*(0) ± step·W*'(0)), so the report describes the same
    characteristic function the root search uses.
    """
    _require_stab2(model)
    grid, a = model.grid, model.nodes
    points = find_endemic(model, 0.0)
    if len(points) != 1:
        raise RootFindingError(f"expected one endemic state at alpha=0, found {len(points)}")
    eq0 = points[0]
    W0 = eq0.W_star

    h_a, h_w = 1e-5, 1e-5 * max(1.0, W0)
    H0 = eval_FGH(model, 0.0, W0)[2]
    dH_da = (eval_FGH(model, h_a, W0)[2] - eval_FGH(model, -h_a, W0)[2]) / (2 * h_a)
    dH_dw = (eval_FGH(model, 0.0, W0 + h_w)[2] - eval_FGH(model, 0.0, W0 - h_w)[2]) / (2 * h_w)
    W_prime = (12.0 * W0 / 125.0 - 1.0) * dH_da / dH_dw

    kernels = build_kernels(model, eq0)
    # the O(step²) curvature of W*(α) cancels in the central difference
    ahead = _branch_kernel_tables(model, step, W0 + step * W_prime)
    behind = _branch_kernel_tables(model, -step, W0 - step * W_prime)
    dpsi1, dpsi2 = (ahead[:2] - behind[:2]) / (2.0 * step)

    def hat(values) -> complex:
        return complex(grid.laplace(values, CROSSING))

    psi4_hat = hat(kernels.psi4.values)
    A, B = 1.0 - psi4_hat.real, -psi4_hat.imag
    c_hat, g_hat, e_hat = hat(dpsi1), hat(dpsi2), hat(kernels.psi3.values)
    C, D = c_hat.real, -c_hat.imag
    G, H = g_hat.real, -g_hat.imag
    E, F = e_hat.real, -e_hat.imag

    # at α = 0: 1 - Ψ̂1(5i) = 0 and Ψ2 ≡ 0
    d_alpha = -c_hat * (A + 1j * B) - g_hat * e_hat
    d_zeta = hat(a * kernels.psi1.values) * (A + 1j * B)

    report = TransversalityReport(
        A=A, B=B, C=C, D=D, E=E, F=F, G=G, H=H,
        dF1_dalpha=d_alpha.real, dF2_dalpha=d_alpha.imag,
        dF1_dzeta=d_zeta.real, dF2_dzeta=d_zeta.imag,
        zeta_prime0=0.0, W_star0=W0, W_star_prime0=W_prime,
        H_at_W0=H0, dH_dalpha=dH_da, dH_dW=dH_dw,
    )
    report = replace(report, zeta_prime0=report.quotient())
    log_step(f"[SPECTRUM] transversality: W*0={W0:.6g} W*'(0)={W_prime:.6g} zeta'(0)={report.zeta_prime0:.6g}")
    return report
