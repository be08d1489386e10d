# equilibria.py — disease-free and endemic steady states
#
#   J(σ)   = ∫_0^σ K(ρ) e^{-W L(ρ) - α(σ-ρ)} dρ
#   F(α,W) = ∫ β π (e^{-WL} + W J)      G = ∫ r π (e^{-WL} + W J)      H = ∫ q π J
#   φ(α,W) = R0d Φ(G/H) F(α,W)          endemic levels solve φ(α,W*) = 1

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import optimize

from age_model import PHI_SCAN_MAX, AgeModel, TabulatedFn
from errors import DegenerateModelError, NumericalError
from run_log import log_step

logger = logging.getLogger(__name__)

DISEASE_FREE = "disease-free"
ENDEMIC = "endemic"
OUTSIDE_MONOTONE = "outside-monotone-region"

SCAN_CHUNK = 256
R0E_CROSSCHECK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class EquilibriumPoint:
    alpha: float
    kind: str
    W_star: float
    B_star: float
    Q_star: float
    R0e: float
    S_profile: TabulatedFn
    I_profile: TabulatedFn
    phi_slope: float
    flags: Tuple[str, ...] = ()

    @property
    def is_endemic(self) -> bool:
        return self.kind == ENDEMIC


@dataclass(frozen=True)
class UniquenessCheck:
    holds: bool
    worst_violation: float
    at: Tuple[float, float]


# -----------------------------------------
# F, G, H and φ
# -----------------------------------------
def _profiles(model: AgeModel, alpha: float, w: np.ndarray):
    """Batched over W: returns F, G, H (shape (n,)) and e^{-WL}, J at the nodes."""
    decay = np.exp(-np.multiply.outer(w, model.contagion))
    inner = model.grid.decay_cumulative(model.k * decay, alpha)
    mix = decay + w[:, None] * inner
    F = model.grid.integrate(model.beta * model.pi * mix)
    G = model.grid.integrate(model.r * model.pi * mix)
    H = model.grid.integrate(model.q * model.pi * inner)
    return F, G, H, decay, inner


def eval_FGH(model: AgeModel, alpha: float, W):
    """F, G, H at one W (floats) or at an array of W (arrays)."""
    w = np.atleast_1d(np.asarray(W, dtype=float))
    if np.any(w < 0):
        raise ValueError("W must be nonnegative")
    F, G, H, _, _ = _profiles(model, float(alpha), w)
    if np.ndim(W) == 0:
        return float(F[0]), float(G[0]), float(H[0])
    return F, G, H


def _phi_from(model: AgeModel, F, G, H) -> np.ndarray:
    if np.any(H <= 0):
        raise DegenerateModelError("H(alpha, W) = 0: no transmission path (K*q vanishes)")
    return model.r0d * np.asarray(model.phi(G / H)) * F


def eval_phi(model: AgeModel, alpha: float, W) -> float:
    F, G, H = eval_FGH(model, alpha, W)
    out = _phi_from(model, np.asarray(F), np.asarray(G), np.asarray(H))
    return float(out) if np.ndim(W) == 0 else out


def phi_curve(model: AgeModel, alpha: float, ws) -> np.ndarray:
    """φ(α, ·) on a W grid, evaluated in chunks."""
    ws = np.asarray(ws, dtype=float)
    out = np.empty_like(ws)
    for lo in range(0, ws.size, SCAN_CHUNK):
        chunk = ws[lo:lo + SCAN_CHUNK]
        F, G, H, _, _ = _profiles(model, float(alpha), chunk)
        out[lo:lo + SCAN_CHUNK] = _phi_from(model, F, G, H)
    return out


def phi_slope(model: AgeModel, alpha: float, W: float) -> float:
    """∂φ/∂W by central difference (forward at W = 0)."""
    h = 1e-4 * max(1.0, W)
    if W - h < 0:
        return (eval_phi(model, alpha, W + h) - eval_phi(model, alpha, W)) / h
    return (eval_phi(model, alpha, W + h) - eval_phi(model, alpha, W - h)) / (2.0 * h)


# -----------------------------------------
# Epidemic reproduction ratio
# -----------------------------------------
def epidemic_reproduction_double_integral(model: AgeModel, alpha: float) -> float:
    """R0e = ∫ K(a) N*(a) ∫_a q(σ) π(σ)/π(a) e^{-α(σ-a)} dσ da, with N*/π = B_dfe."""
    tail = model.grid.decay_tail(model.q * model.pi, float(alpha))
    return float(model.b_dfe * model.grid.integrate(model.k * tail))


def epidemic_reproduction(model: AgeModel, alpha: float) -> float:
    """R0e = N*(0)·H(α, 0), cross-checked against the double-integral form."""
    _, _, H = eval_FGH(model, alpha, 0.0)
    value = model.b_dfe * H
    check = epidemic_reproduction_double_integral(model, alpha)
    if abs(value - check) > R0E_CROSSCHECK_TOL * max(1.0, abs(value)):
        log_step(f"[EQUILIBRIA] R0e forms disagree at alpha={alpha:g}: {value:.12g} vs {check:.12g}")
    return value


# -----------------------------------------
# Equilibrium points
# -----------------------------------------
def disease_free_point(model: AgeModel, alpha: float) -> EquilibriumPoint:
    R0e = epidemic_reproduction(model, alpha)
    try:
        slope = phi_slope(model, alpha, 0.0)
    except DegenerateModelError:
        slope = 0.0
    return EquilibriumPoint(
        alpha=float(alpha),
        kind=DISEASE_FREE,
        W_star=0.0,
        B_star=model.b_dfe,
        Q_star=model.q_dstar,
        R0e=R0e,
        S_profile=model.n_star,
        I_profile=model.tabulate(np.zeros_like(model.nodes)),
        phi_slope=slope,
    )


def reconstruct_equilibrium(model: AgeModel, alpha: float, W_star: float,
                            R0e: Optional[float] = None) -> EquilibriumPoint:
    """Full steady state from its force-of-infection level W*."""
    if W_star == 0.0:
        return disease_free_point(model, alpha)
    F, G, H, decay, inner = _profiles(model, float(alpha), np.array([float(W_star)]))
    F, G, H = float(F[0]), float(G[0]), float(H[0])
    if H <= 0:
        raise DegenerateModelError("H(alpha, W) = 0: no transmission path (K*q vanishes)")
    B, Q = 1.0 / H, G / H
    level = model.r0d * model.phi(Q) * F
    if abs(level - 1.0) > 1e-6:
        raise NumericalError(f"W={W_star:.17g} is not an endemic level at alpha={alpha:g} (phi={level:.12g})")

    flags = ()
    if Q > model.phi.monotone_limit(PHI_SCAN_MAX):
        flags = (OUTSIDE_MONOTONE,)
    return EquilibriumPoint(
        alpha=float(alpha),
        kind=ENDEMIC,
        W_star=float(W_star),
        B_star=B,
        Q_star=Q,
        R0e=epidemic_reproduction(model, alpha) if R0e is None else R0e,
        S_profile=model.tabulate(B * decay[0] * model.pi),
        I_profile=model.tabulate(B * W_star * model.pi * inner[0]),
        phi_slope=phi_slope(model, alpha, W_star),
        flags=flags,
    )


def endemic_levels(model: AgeModel, alpha: float) -> List[float]:
    """Roots of φ(α, ·) = 1 on (0, w_scan_max]: sign-change scan, then Brent."""
    opts = model.options
    _, _, h0 = eval_FGH(model, alpha, 0.0)
    if h0 <= 0:
        return []

    ws = np.linspace(0.0, opts.w_scan_max, opts.w_scan_points + 1)
    gap = phi_curve(model, alpha, ws) - 1.0
    target = lambda w: eval_phi(model, alpha, w) - 1.0

    levels = []
    for i in range(ws.size - 1):
        if gap[i + 1] == 0.0:
            levels.append(float(ws[i + 1]))
        elif gap[i] * gap[i + 1] < 0.0:
            levels.append(float(optimize.brentq(target, ws[i], ws[i + 1], xtol=1e-13)))

    kept = []
    for w in levels:
        _, G, H = eval_FGH(model, alpha, w)
        if model.phi(G / H) == 0.0:
            log_step(f"[EQUILIBRIA] rejected W={w:.6g}: Phi vanishes there")
            continue
        kept.append(w)
    return kept


def find_endemic(model: AgeModel, alpha: float) -> List[EquilibriumPoint]:
    """Every endemic equilibrium with W* in (0, w_scan_max], sorted by W*.

    Roots closer together than the scan spacing can be missed.
    """
    levels = endemic_levels(model, alpha)
    if not levels:
        return []
    R0e = epidemic_reproduction(model, alpha)
    points = [reconstruct_equilibrium(model, alpha, w, R0e=R0e) for w in levels]
    for point in points:
        if point.flags:
            log_step(f"[EQUILIBRIA] W*={point.W_star:.6g} at alpha={alpha:g} flagged {', '.join(point.flags)}")
    return points


# -----------------------------------------
# Uniqueness hypotheses
# -----------------------------------------
def check_uniqueness_condition(model: AgeModel, alpha: float, grid_n: int = 200) -> UniquenessCheck:
    """Grid check of: for ρ1 ≤ ρ2,
        K(ρ1) Tq(ρ1) Tr(ρ2) ≤ K(ρ2) Tr(ρ1) Tq(ρ2),   Tx(ρ) = ∫_ρ^{a†} x π e^{-ασ}.

    Tails are scaled by e^{αρ}, which multiplies both sides by the same
    positive factor. The reported margin is right side minus left side.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    rho = np.linspace(0.0, model.a_dagger, grid_n)
    tq = model.grid.interpolate(model.grid.decay_tail(model.q * model.pi, alpha), rho)
    tr = model.grid.interpolate(model.grid.decay_tail(model.r * model.pi, alpha), rho)
    tq[-1] = tr[-1] = 0.0
    k = np.asarray(model.spec.k(rho), dtype=float)

    margin = k[None, :] * (tr[:, None] * tq[None, :]) - k[:, None] * (tq[:, None] * tr[None, :])
    margin = np.where(np.triu(np.ones((grid_n, grid_n), dtype=bool)), margin, np.inf)
    i, j = np.unravel_index(np.argmin(margin), margin.shape)
    worst = float(margin[i, j])
    scale = max(1.0, float(np.max(np.abs(k)) * np.max(np.abs(tq)) * np.max(np.abs(tr))))
    return UniquenessCheck(holds=worst >= -1e-12 * scale, worst_violation=worst,
                           at=(float(rho[i]), float(rho[j])))


def check_monotone_ratio_condition(model: AgeModel, points: int = 1000) -> bool:
    """K non-decreasing and q = h·r with h non-decreasing."""
    ages = np.linspace(0.0, model.a_dagger, points)
    k = np.asarray(model.spec.k(ages), dtype=float)
    q = np.asarray(model.spec.q(ages), dtype=float)
    r = np.asarray(model.spec.r(ages), dtype=float)
    if np.any(np.diff(k) < -1e-12):
        return False
    live = r > 1e-14
    if np.any(np.abs(q[~live]) > 1e-12):
        return False
    h = q[live] / r[live]
    return bool(np.all(np.diff(h) >= -1e-12 * max(1.0, float(np.max(np.abs(h), initial=0.0)))))
