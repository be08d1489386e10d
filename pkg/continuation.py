# continuation.py — equilibrium branches W*(α), their stability and bifurcation events
#
# Per-α work (endemic search + rightmost root of every equilibrium) runs in a
# thread pool; linking the levels into branches and locating events is a
# sequential pass over the α-sorted results, so output never depends on the
# number of workers.

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from age_model import AgeModel
from equilibria import (
    DISEASE_FREE,
    ENDEMIC,
    EquilibriumPoint,
    disease_free_point,
    endemic_levels,
    epidemic_reproduction,
    eval_phi,
    find_endemic,
    phi_slope,
    reconstruct_equilibrium,
)
from errors import ConfigError, DegenerateModelError, NumericalError
from run_log import log_step
from spectrum import build_kernels, classify, rightmost_root

logger = logging.getLogger(__name__)

STABLE = "stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"

TRANSCRITICAL = "transcritical"
FOLD = "fold"
HOPF = "hopf"

EVENT_TOL = 1e-4
TRANSCRITICAL_XTOL = 1e-7
OMEGA_MIN = 1e-6
JUMP_FACTOR = 10.0
MAX_FILL_POINTS = 50


@dataclass(frozen=True)
class BranchPoint:
    alpha: float
    W_star: float
    kind: str
    rightmost: complex
    status: str
    R0e: float = math.nan
    B_star: float = math.nan

    @property
    def stable(self) -> bool:
        return self.status == STABLE


@dataclass(frozen=True)
class Bifurcation:
    kind: str
    alpha: float
    W_star: float
    omega: float = 0.0
    refined: bool = True


@dataclass
class Branch:
    kind: str
    points: List[BranchPoint]
    bifurcations: List[Bifurcation] = field(default_factory=list)
    closed: bool = False

    def events(self, kind: str) -> List[Bifurcation]:
        return [b for b in self.bifurcations if b.kind == kind]


@dataclass(frozen=True)
class AlphaSlice:
    alpha: float
    dfe: BranchPoint
    endemic: Tuple[BranchPoint, ...]


# -----------------------------------------
# Per-α work
# -----------------------------------------
def classify_equilibrium(model: AgeModel, eq: EquilibriumPoint) -> BranchPoint:
    """Attach the rightmost characteristic root and a stable/unstable/marginal label."""
    try:
        root = rightmost_root(build_kernels(model, eq))
    except DegenerateModelError as err:
        log_step(f"[BRANCH] alpha={eq.alpha:g} W*={eq.W_star:.6g}: {err}; marked marginal")
        root = complex(math.nan, math.nan)
    status = classify(root.real, model.options.stability_tol)
    return BranchPoint(eq.alpha, eq.W_star, eq.kind, root, status, eq.R0e, eq.B_star)


def solve_slice(model: AgeModel, alpha: float) -> AlphaSlice:
    alpha = float(alpha)
    dfe = classify_equilibrium(model, disease_free_point(model, alpha))
    endemic = tuple(classify_equilibrium(model, eq) for eq in find_endemic(model, alpha))
    return AlphaSlice(alpha, dfe, endemic)


def alpha_grid(alpha_lo: float, alpha_hi: float, step: float) -> np.ndarray:
    if not (math.isfinite(alpha_lo) and math.isfinite(alpha_hi)) or not alpha_lo < alpha_hi:
        raise ConfigError(f"need alpha_lo < alpha_hi, got {alpha_lo!r}, {alpha_hi!r}", key_path="branch.alpha_lo")
    if alpha_lo < 0:
        raise ConfigError(f"alpha must be nonnegative, got {alpha_lo!r}", key_path="branch.alpha_lo")
    if not step > 0:
        raise ConfigError(f"step must be positive, got {step!r}", key_path="branch.step")
    n = int(math.floor((alpha_hi - alpha_lo) / step + 1e-9))
    alphas = alpha_lo + step * np.arange(n + 1)
    if alpha_hi - alphas[-1] > 1e-9 * max(1.0, abs(alpha_hi)):
        alphas = np.append(alphas, alpha_hi)
    return alphas


def sweep(model: AgeModel, alphas: Sequence[float], threads: int = 1) -> List[AlphaSlice]:
    """solve_slice over every α, results in the order of `alphas`."""
    work = partial(solve_slice, model)
    if threads <= 1:
        return [work(a) for a in alphas]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, alphas))


# -----------------------------------------
# Curve φ(α, W) = 1: pseudo-arclength steps and fold refinement
# -----------------------------------------
class _Curve:
    """φ(α, W) = 1 in coordinates scaled by (alpha_unit, w_unit)."""

    def __init__(self, model: AgeModel, alpha_unit: float, w_unit: float):
        self.model = model
        self.unit = np.array([alpha_unit, w_unit])

    def point(self, u: np.ndarray) -> Tuple[float, float]:
        alpha, w = u * self.unit
        if w < 0 or alpha < 0:
            raise NumericalError(f"continuation left the admissible region at alpha={alpha:g}, W={w:g}")
        return float(alpha), float(w)

    def residual(self, u: np.ndarray) -> float:
        return eval_phi(self.model, *self.point(u)) - 1.0

    def gradient(self, u: np.ndarray) -> np.ndarray:
        alpha, w = self.point(u)
        h = 1e-6 * max(1.0, alpha)
        g_alpha = (eval_phi(self.model, alpha + h, w) - eval_phi(self.model, max(alpha - h, 0.0), w)) / (
            alpha + h - max(alpha - h, 0.0))
        return np.array([g_alpha, phi_slope(self.model, alpha, w)]) * self.unit

    def tangent(self, u: np.ndarray, toward: np.ndarray) -> np.ndarray:
        g = self.gradient(u)
        t = np.array([-g[1], g[0]])
        t /= np.linalg.norm(t)
        return t if t @ (toward - u) >= 0 else -t

    def correct(self, predicted: np.ndarray, t: np.ndarray) -> np.ndarray:
        u = predicted.copy()
        for _ in range(25):
            r = self.residual(u)
            if abs(r) < 1e-11:
                return u
            jac = np.array([self.gradient(u), t])
            try:
                u = u + np.linalg.solve(jac, -np.array([r, t @ (u - predicted)]))
            except np.linalg.LinAlgError:
                break
        raise NumericalError("pseudo-arclength corrector did not converge")


def arclength_fill(model: AgeModel, start: Tuple[float, float], stop: Tuple[float, float],
                   alpha_unit: float, w_unit: float) -> List[Tuple[float, float]]:
    """(α, W) points on φ = 1 between `start` and `stop`, one scaled unit apart."""
    curve = _Curve(model, alpha_unit, w_unit)
    u = np.asarray(start) / curve.unit
    goal = np.asarray(stop) / curve.unit
    out = []
    for _ in range(MAX_FILL_POINTS):
        if np.linalg.norm(goal - u) <= 1.0:
            return out
        t = curve.tangent(u, goal)
        u = curve.correct(u + t, t)
        out.append(curve.point(u))
    log_step(f"[BRANCH] arclength fill stopped after {MAX_FILL_POINTS} points near alpha={out[-1][0]:.6g}")
    return out


def refine_fold(model: AgeModel, alpha_in: float, alpha_out: float,
                w_lo: float, w_hi: float) -> Tuple[float, float]:
    """Turning point of φ = 1 for two levels in [w_lo, w_hi] at alpha_in that are gone at alpha_out."""
    sense = 1.0 if alpha_out > alpha_in else -1.0
    lo, hi = sorted((alpha_in, alpha_out))

    def alpha_of(w: float) -> float:
        try:
            return optimize.brentq(lambda a: eval_phi(model, a, w) - 1.0, lo, hi, xtol=1e-12)
        except ValueError:
            return alpha_in

    best = optimize.minimize_scalar(lambda w: -sense * alpha_of(w), bounds=(w_lo, w_hi),
                                    method="bounded", options={"xatol": 1e-8 * max(1.0, w_hi)})
    return alpha_of(float(best.x)), float(best.x)


# -----------------------------------------
# Linking levels into branches
# -----------------------------------------
def _match(prev: Sequence[BranchPoint], new: Sequence[BranchPoint], link_tol: float) -> List[Tuple[int, int]]:
    """Order-preserving pairing of W levels with the smallest total |ΔW|."""
    if not prev or not new:
        return []
    m = min(len(prev), len(new))
    best, best_cost, ties = None, math.inf, 0
    for keep_prev in combinations(range(len(prev)), m):
        for keep_new in combinations(range(len(new)), m):
            cost = sum(abs(prev[i].W_star - new[j].W_star) for i, j in zip(keep_prev, keep_new))
            if cost < best_cost - link_tol:
                best, best_cost, ties = list(zip(keep_prev, keep_new)), cost, 0
            elif abs(cost - best_cost) <= link_tol:
                ties += 1
                if cost < best_cost:
                    best, best_cost = list(zip(keep_prev, keep_new)), cost
    if ties:
        log_step(f"[BRANCH] ambiguous link at alpha={new[0].alpha:g}; kept the pairing with smaller |dW|")
    return best


def _link_tol(model: AgeModel) -> float:
    return 5.0 * model.options.w_scan_max / model.options.w_scan_points


def _sheets(slices: Sequence[AlphaSlice], link_tol: float):
    """Maximal runs of levels linked slice to slice, with first/last slice indices."""
    sheets: List[List[BranchPoint]] = []
    first: Dict[int, int] = {}
    last: Dict[int, int] = {}
    open_ids: List[int] = []
    for i, sl in enumerate(slices):
        prev = [sheets[s][-1] for s in open_ids]
        pairs = _match(prev, sl.endemic, link_tol)
        next_open: List[Optional[int]] = [None] * len(sl.endemic)
        matched = set()
        for j, k in pairs:
            sheets[open_ids[j]].append(sl.endemic[k])
            next_open[k] = open_ids[j]
            matched.add(j)
        for j, sid in enumerate(open_ids):
            if j not in matched:
                last[sid] = i - 1
        for k, sid in enumerate(next_open):
            if sid is None:
                next_open[k] = len(sheets)
                first[len(sheets)] = i
                sheets.append([sl.endemic[k]])
        open_ids = next_open
    for sid in open_ids:
        last[sid] = len(slices) - 1
    return sheets, first, last


def _fold_pairs(sheets, first, last, n_slices) -> Dict[Tuple[int, str], Tuple[int, str]]:
    """Sheet ends that meet at a fold: two ends vanishing at the same slice, adjacent in W."""
    groups: Dict[Tuple[int, str], List[Tuple[float, int]]] = {}
    for sid, pts in enumerate(sheets):
        if last[sid] < n_slices - 1:
            groups.setdefault((last[sid], "tail"), []).append((pts[-1].W_star, sid))
        if first[sid] > 0:
            groups.setdefault((first[sid], "head"), []).append((pts[0].W_star, sid))

    partner: Dict[Tuple[int, str], Tuple[int, str]] = {}
    for (_, side), members in sorted(groups.items()):
        members = sorted(members)
        while len(members) >= 2:
            gaps = [b[0] - a[0] for a, b in zip(members, members[1:])]
            j = int(np.argmin(gaps))
            (_, s1), (_, s2) = members[j], members[j + 1]
            partner[(s1, side)] = (s2, side)
            partner[(s2, side)] = (s1, side)
            del members[j:j + 2]
    return partner


def _oriented(sheet: List[BranchPoint], enter: str) -> List[BranchPoint]:
    return list(sheet) if enter == "head" else list(reversed(sheet))


def _other(side: str) -> str:
    return "tail" if side == "head" else "head"


class _Assembler:
    """Chains sheets through their folds and fills large gaps along the curve."""

    def __init__(self, model: AgeModel, slices: Sequence[AlphaSlice], step: float):
        self.model = model
        self.slices = slices
        self.step = step
        link_tol = _link_tol(model)
        self.sheets, self.first, self.last = _sheets(slices, link_tol)
        self.partner = _fold_pairs(self.sheets, self.first, self.last, len(slices))
        dw = [abs(b.W_star - a.W_star) for s in self.sheets for a, b in zip(s, s[1:])]
        self.w_unit = max(float(np.median(dw)) if dw else link_tol, 1e-9)

    def _point(self, alpha: float, w: float) -> Optional[BranchPoint]:
        try:
            eq = reconstruct_equilibrium(self.model, alpha, w)
        except NumericalError as err:
            log_step(f"[BRANCH] dropped curve point alpha={alpha:.6g} W={w:.6g}: {err}")
            return None
        return classify_equilibrium(self.model, eq)

    def _fill(self, a: BranchPoint, b: BranchPoint) -> List[BranchPoint]:
        try:
            pairs = arclength_fill(self.model, (a.alpha, a.W_star), (b.alpha, b.W_star), self.step, self.w_unit)
        except NumericalError as err:
            log_step(f"[BRANCH] gap after alpha={a.alpha:.6g} left open: {err}")
            return []
        return [p for p in (self._point(al, w) for al, w in pairs) if p is not None]

    def _smooth(self, pts: List[BranchPoint]) -> List[BranchPoint]:
        if len(pts) < 3:
            return pts
        dw = np.abs(np.diff([p.W_star for p in pts]))
        limit = JUMP_FACTOR * max(float(np.median(dw)), 1e-12)
        out = [pts[0]]
        for prev, nxt, jump in zip(pts, pts[1:], dw):
            if jump > limit:
                out.extend(self._fill(prev, nxt))
            out.append(nxt)
        return out

    def _fold(self, sid: int, side: str, a: BranchPoint, b: BranchPoint) -> List[BranchPoint]:
        i = self.last[sid] if side == "tail" else self.first[sid]
        j = i + 1 if side == "tail" else i - 1
        alpha, w = refine_fold(self.model, self.slices[i].alpha, self.slices[j].alpha,
                               min(a.W_star, b.W_star), max(a.W_star, b.W_star))
        turn = self._point(alpha, w)
        if turn is None:
            return self._fill(a, b)
        return self._fill(a, turn) + [turn] + self._fill(turn, b)

    def _walk(self, sid: int, enter: str, seen: set) -> Tuple[List[BranchPoint], bool]:
        pts: List[BranchPoint] = []
        closed = False
        while True:
            seen.add(sid)
            part = self._smooth(_oriented(self.sheets[sid], enter))
            if pts:
                pts.extend(self._fold(sid, enter, pts[-1], part[0]))
            pts.extend(part)
            exit_end = (sid, _other(enter))
            if exit_end not in self.partner:
                break
            nxt, nxt_enter = self.partner[exit_end]
            if nxt in seen:
                pts.extend(self._fold(nxt, nxt_enter, pts[-1], pts[0]))
                closed = True
                break
            sid, enter = nxt, nxt_enter
        return pts, closed

    def branches(self) -> List[Branch]:
        seen: set = set()
        out = []
        for sid in range(len(self.sheets)):
            if sid in seen:
                continue
            if (sid, "head") not in self.partner:
                pts, closed = self._walk(sid, "head", seen)
            elif (sid, "tail") not in self.partner:
                pts, closed = self._walk(sid, "tail", seen)
            else:
                continue
            out.append(Branch(ENDEMIC, pts, closed=closed))
        for sid in range(len(self.sheets)):
            if sid not in seen:
                pts, closed = self._walk(sid, "head", seen)
                out.append(Branch(ENDEMIC, pts, closed=closed))
        return out


def endemic_branches(model: AgeModel, slices: Sequence[AlphaSlice], step: float) -> List[Branch]:
    return _Assembler(model, slices, step).branches()


# -----------------------------------------
# Events
# -----------------------------------------
def _r0e_crossings(model: AgeModel, alphas: Sequence[float], r0e: Sequence[float]) -> List[float]:
    out = []
    gaps = [r - 1.0 for r in r0e]
    for i in range(len(alphas) - 1):
        if gaps[i] == 0.0:
            out.append(float(alphas[i]))
        elif gaps[i] * gaps[i + 1] < 0.0:
            out.append(float(optimize.brentq(lambda a: epidemic_reproduction(model, a) - 1.0,
                                             alphas[i], alphas[i + 1], xtol=TRANSCRITICAL_XTOL)))
    if gaps and gaps[-1] == 0.0:
        out.append(float(alphas[-1]))
    return out


def detect_transcritical(model: AgeModel, alpha_lo: float, alpha_hi: float,
                         samples: int = 64) -> Optional[float]:
    """First α in [alpha_lo, alpha_hi] with R0e(α) = 1, or None."""
    alphas = np.linspace(alpha_lo, alpha_hi, samples + 1)
    found = _r0e_crossings(model, alphas, [epidemic_reproduction(model, a) for a in alphas])
    if not found:
        return None
    log_step(f"[BRANCH] transcritical at alpha={found[0]:.8g}")
    return found[0]


def detect_fold(model: AgeModel, branch: Branch) -> List[Bifurcation]:
    """Turning points in α along the branch, refined by extremizing α over W."""
    pts = branch.points
    events = []
    for prev, turn, nxt in zip(pts, pts[1:], pts[2:]):
        if (turn.alpha - prev.alpha) * (nxt.alpha - turn.alpha) >= 0:
            continue
        sense = 1.0 if turn.alpha > prev.alpha else -1.0
        inner = min(prev.alpha, nxt.alpha) if sense > 0 else max(prev.alpha, nxt.alpha)
        outer = turn.alpha + sense * max(abs(turn.alpha - inner), 1e-3)
        alpha, w = refine_fold(model, inner, outer, min(prev.W_star, nxt.W_star), max(prev.W_star, nxt.W_star))
        slope = phi_slope(model, alpha, w)
        if abs(slope) >= model.options.fold_tol:
            log_step(f"[BRANCH] fold near alpha={alpha:.6g} has |dphi/dW|={abs(slope):.3g}; kept unrefined")
            events.append(Bifurcation(FOLD, turn.alpha, turn.W_star, refined=False))
            continue
        events.append(Bifurcation(FOLD, alpha, w))
    return events


def _point_near(model: AgeModel, kind: str, alpha: float, w_guess: float) -> Optional[BranchPoint]:
    if kind == DISEASE_FREE:
        return classify_equilibrium(model, disease_free_point(model, alpha))
    levels = endemic_levels(model, alpha)
    if not levels:
        return None
    w = min(levels, key=lambda x: abs(x - w_guess))
    return classify_equilibrium(model, reconstruct_equilibrium(model, alpha, w))


def _monotone(pts: Sequence[BranchPoint]) -> bool:
    d = np.diff([p.alpha for p in pts])
    return bool(np.all(d > 0) or np.all(d < 0))


def detect_hopf(model: AgeModel, branch: Branch, tol: float = EVENT_TOL) -> List[Bifurcation]:
    """Stability changes carried by a complex pair, bisected in α to `tol`."""
    if len(branch.points) < 2:
        raise ValueError("detect_hopf needs a branch with at least 2 points")
    decided = [i for i, p in enumerate(branch.points) if p.status != MARGINAL]
    events = []
    for i, j in zip(decided, decided[1:]):
        p, q = branch.points[i], branch.points[j]
        if p.status == q.status or not _monotone(branch.points[i:j + 1]):
            continue
        if p.kind == DISEASE_FREE and (p.R0e - 1.0) * (q.R0e - 1.0) <= 0.0:
            continue
        lo, hi = p, q
        while abs(hi.alpha - lo.alpha) > tol:
            mid = _point_near(model, p.kind, 0.5 * (lo.alpha + hi.alpha), 0.5 * (lo.W_star + hi.W_star))
            if mid is None or mid.status == MARGINAL:
                break
            if mid.status == lo.status:
                lo = mid
            else:
                hi = mid
        unstable = lo if lo.status == UNSTABLE else hi
        alpha = 0.5 * (lo.alpha + hi.alpha)
        omega = abs(unstable.rightmost.imag)
        if omega > OMEGA_MIN:
            log_step(f"[BRANCH] Hopf at alpha={alpha:.6g} (omega={omega:.6g})")
            events.append(Bifurcation(HOPF, alpha, 0.5 * (lo.W_star + hi.W_star), omega))
        else:
            log_step(f"[BRANCH] real root crosses zero near alpha={alpha:.6g}")
    return events


# -----------------------------------------
# Diagram
# -----------------------------------------
def trace_diagram(model: AgeModel, alpha_lo: float, alpha_hi: float, step: float,
                  threads: int = 1) -> List[Branch]:
    """DFE branch first, then endemic branches in order of appearance."""
    alphas = alpha_grid(alpha_lo, alpha_hi, step)
    log_step(f"[BRANCH] {model.spec.name}: {alphas.size} alpha values on [{alpha_lo:g}, {alpha_hi:g}], "
             f"{threads} thread(s)")
    slices = sweep(model, alphas, threads)

    dfe = Branch(DISEASE_FREE, [s.dfe for s in slices])
    for alpha in _r0e_crossings(model, alphas, [s.dfe.R0e for s in slices]):
        log_step(f"[BRANCH] transcritical at alpha={alpha:.8g}")
        dfe.bifurcations.append(Bifurcation(TRANSCRITICAL, alpha, 0.0))
    if len(dfe.points) >= 2:
        dfe.bifurcations.extend(detect_hopf(model, dfe))

    branches = [dfe]
    for branch in endemic_branches(model, slices, step):
        branch.bifurcations.extend(detect_fold(model, branch))
        if len(branch.points) >= 2:
            branch.bifurcations.extend(detect_hopf(model, branch))
        branches.append(branch)
    for branch in branches:
        branch.bifurcations.sort(key=lambda b: (b.alpha, b.kind))
    log_step(f"[BRANCH] {len(branches) - 1} endemic branch(es), "
             f"{sum(len(b.bifurcations) for b in branches)} event(s)")
    return branches
