# simulate.py — time integration of the S–I system along characteristics
#
# Uniform age grid a_j = jΔ, j = 0..M, with Δt = Δa = Δ so every cell moves
# exactly one node per step. Survival between nodes uses the exact ratios
# π(a_j)/π(a_{j-1}); infection along a characteristic is integrated exactly
# for S with the force of infection frozen over the step. The boundary
# B = R0d Φ(Q) ∫β(S+I) is taken explicitly from the updated interior.

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy import optimize, signal

from age_model import PHI_SCAN_MAX, AgeModel, TabulatedFn, survival_ratio
from equilibria import EquilibriumPoint
from errors import ConfigError, ModelValidationError, RootFindingError, SimulationError
from rate_expr import evaluate
from run_log import log_step

logger = logging.getLogger(__name__)

CONVERGED = "converged"
OSCILLATING = "oscillating"
DIVERGED = "diverged"
INCONCLUSIVE = "inconclusive"

DEFAULT_CELLS = 512
DIVERGENCE_LEVEL = 1e8
TAIL_FRACTION = 0.3
MIN_PEAK_INTERVALS = 5
PERIOD_SPREAD = 0.05
DEFAULT_PERTURBATION = 0.01

Profile = Union[TabulatedFn, Callable, np.ndarray]


# -----------------------------------------
# Discretization
# -----------------------------------------
def _node_values(fn, ages: np.ndarray, a_dagger: float) -> np.ndarray:
    values = np.asarray(evaluate(fn, ages, a_dagger), dtype=float)
    return np.where(np.isfinite(values), values, 0.0)


@dataclass(frozen=True, eq=False)
class SchemeGrid:
    model: AgeModel
    alpha: float
    cells: int
    delta: float
    ages: np.ndarray
    ratio: np.ndarray
    k_mid: np.ndarray
    beta: np.ndarray
    r: np.ndarray
    q: np.ndarray
    weights: np.ndarray

    @property
    def survival(self) -> np.ndarray:
        """Discrete π at the nodes (product of the cell ratios)."""
        return np.concatenate(([1.0], np.cumprod(self.ratio)))

    def integrate(self, values: np.ndarray) -> float:
        return float(values @ self.weights)


def scheme_grid(model: AgeModel, alpha: Optional[float] = None, cells: Optional[int] = None,
                delta: Optional[float] = None) -> SchemeGrid:
    a_dagger = model.a_dagger
    if delta is not None:
        m = a_dagger / delta
        if not delta > 0 or abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise ConfigError(f"step {delta!r} does not divide a_dagger={a_dagger:.17g}", key_path="simulate.cells")
        cells = int(round(m))
    cells = DEFAULT_CELLS if cells is None else int(cells)
    if cells < 2:
        raise ConfigError(f"need at least 2 cells, got {cells}", key_path="simulate.cells")
    alpha = model.alpha if alpha is None else float(alpha)

    ages = np.linspace(0.0, a_dagger, cells + 1)
    step = a_dagger / cells
    ratio = np.array([survival_ratio(model, lo, hi) for lo, hi in zip(ages[:-1], ages[1:])])
    mids = 0.5 * (ages[:-1] + ages[1:])
    weights = np.full(cells + 1, step)
    weights[[0, -1]] = 0.5 * step
    spec = model.spec
    return SchemeGrid(
        model=model, alpha=alpha, cells=cells, delta=step, ages=ages, ratio=ratio,
        k_mid=_node_values(spec.k, mids, a_dagger),
        beta=_node_values(spec.beta, ages, a_dagger),
        r=_node_values(spec.r, ages, a_dagger),
        q=_node_values(spec.q, ages, a_dagger),
        weights=weights,
    )


# -----------------------------------------
# State
# -----------------------------------------
@dataclass(frozen=True, eq=False)
class SimState:
    grid: SchemeGrid
    t: float
    S: np.ndarray
    I: np.ndarray
    B: float
    W: float
    Q: float
    step_index: int = 0

    @property
    def total_S(self) -> float:
        return self.grid.integrate(self.S)

    @property
    def total_I(self) -> float:
        return self.grid.integrate(self.I)


def _aggregates(grid: SchemeGrid, S: np.ndarray, I: np.ndarray) -> Tuple[float, float, float]:
    """W = ∫qI, Q = ∫r(S+I), ∫β(S+I) by the trapezoid rule."""
    N = S + I
    return grid.integrate(grid.q * I), grid.integrate(grid.r * N), grid.integrate(grid.beta * N)


def _profile(values: Profile, ages: np.ndarray, name: str) -> np.ndarray:
    if callable(values):
        arr = np.asarray(values(ages), dtype=float)
    else:
        arr = np.asarray(values, dtype=float)
        if arr.shape != ages.shape:
            raise ConfigError(f"{name} has {arr.size} values, grid has {ages.size} nodes",
                              key_path="simulate.initial")
    if not np.all(np.isfinite(arr)):
        raise ModelValidationError(f"{name} is not finite on the grid", key_path="simulate.initial")
    scale = max(1.0, float(np.max(np.abs(arr))))
    if np.any(arr < -1e-12 * scale):
        raise ModelValidationError(f"{name} is negative at a={float(ages[np.argmin(arr)]):.6g}",
                                   value=float(np.min(arr)), key_path="simulate.initial")
    return np.maximum(arr, 0.0)


def init(model: AgeModel, S0: Profile, I0: Profile, cells: Optional[int] = None,
         delta: Optional[float] = None, alpha: Optional[float] = None) -> SimState:
    grid = scheme_grid(model, alpha=alpha, cells=cells, delta=delta)
    S = _profile(S0, grid.ages, "S0")
    I = _profile(I0, grid.ages, "I0")
    if I[0] != 0.0:
        log_step(f"[SIMULATE] I0(0)={I[0]:.3g} replaced by 0 (newborns are susceptible)")
        I[0] = 0.0
    W, Q, _ = _aggregates(grid, S, I)
    return SimState(grid, 0.0, S, I, float(S[0]), W, Q)


def discrete_dfe(model: AgeModel, cells: Optional[int] = None, alpha: Optional[float] = None) -> SimState:
    """Disease-free fixed point of the discrete scheme itself (stationary to round-off)."""
    grid = scheme_grid(model, alpha=alpha, cells=cells)
    pi = grid.survival
    t_beta = grid.integrate(grid.beta * pi)
    t_r = grid.integrate(grid.r * pi)
    phi, r0d = model.phi, model.r0d
    xs = np.linspace(0.0, phi.monotone_limit(PHI_SCAN_MAX), 4001)
    gap = r0d * t_beta * np.asarray(phi(xs)) - 1.0
    down = np.nonzero((gap[:-1] > 0) & (gap[1:] <= 0))[0]
    if down.size == 0:
        raise RootFindingError("no discrete demographic equilibrium on the scan range")
    k = int(down[0])
    x = float(optimize.brentq(lambda v: r0d * t_beta * phi(v) - 1.0, xs[k], xs[k + 1], xtol=1e-15))
    B = x / t_r
    S = B * pi
    return SimState(grid, 0.0, S, np.zeros_like(S), B, 0.0, grid.integrate(grid.r * S))


def _stationary_profiles(grid: SchemeGrid, ws: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-newborn S and I that one step maps to themselves when W stays at each level in `ws`."""
    exposure = grid.delta * np.multiply.outer(ws, grid.k_mid)
    carried = np.cumprod(grid.ratio * np.exp(-exposure), axis=-1)
    S = np.concatenate([np.ones((ws.size, 1)), carried], axis=1)
    I = np.zeros_like(S)
    keep = grid.ratio * math.exp(-grid.alpha * grid.delta)
    infected = S[:, :-1] * grid.ratio * -np.expm1(-exposure) * math.exp(-0.5 * grid.alpha * grid.delta)
    for j in range(1, grid.cells + 1):
        I[:, j] = I[:, j - 1] * keep[j - 1] + infected[:, j - 1]
    return S, I


def discrete_level(model: AgeModel, eq: EquilibriumPoint, cells: Optional[int] = None) -> float:
    """W of the scheme's own steady state next to `eq`.

    The first-order scheme settles O(Δ) away from the continuous W*; runs
    started near `eq` are judged against this level.
    """
    if not eq.is_endemic:
        return 0.0
    grid = scheme_grid(model, alpha=eq.alpha, cells=cells)
    ws = eq.W_star * (1.0 + np.linspace(-0.2, 0.2, 801))
    S, I = _stationary_profiles(grid, ws)
    N = S + I
    t_q = (grid.q * I) @ grid.weights
    t_r = (grid.r * N) @ grid.weights
    t_beta = (grid.beta * N) @ grid.weights
    # B = W / ∫qI per newborn, then the birth condition must balance
    gap = model.r0d * np.asarray(model.phi(ws * t_r / t_q)) * t_beta - 1.0
    flips = np.nonzero(np.sign(gap[:-1]) != np.sign(gap[1:]))[0]
    if flips.size == 0:
        raise RootFindingError(f"no discrete steady state within 20% of W*={eq.W_star:.6g}")
    k = int(flips[np.argmin(np.abs(ws[flips] - eq.W_star))])

    def balance(w: float) -> float:
        s, i = _stationary_profiles(grid, np.array([w]))
        n = (s + i)[0]
        q_level = w * grid.integrate(grid.r * n) / grid.integrate(grid.q * i[0])
        return model.r0d * float(model.phi(q_level)) * grid.integrate(grid.beta * n) - 1.0

    level = float(optimize.brentq(balance, ws[k], ws[k + 1], xtol=1e-14 * eq.W_star))
    log_step(f"[SIMULATE] discrete steady state W={level:.10g} vs W*={eq.W_star:.10g} ({grid.cells} cells)")
    return level


def perturbed_state(model: AgeModel, eq: EquilibriumPoint, cells: Optional[int] = None,
                    perturbation: float = DEFAULT_PERTURBATION) -> SimState:
    """Equilibrium with I scaled by 1 + p, or seeded with p·N* when I* ≡ 0."""
    if eq.is_endemic:
        I0 = lambda a: (1.0 + perturbation) * np.asarray(eq.I_profile(a))
    else:
        I0 = lambda a: perturbation * np.asarray(eq.S_profile(a))
    return init(model, eq.S_profile, I0, cells=cells, alpha=eq.alpha)


# -----------------------------------------
# Stepping
# -----------------------------------------
def step(state: SimState) -> SimState:
    grid = state.grid
    model = grid.model
    nxt = state.step_index + 1

    exposure = grid.delta * grid.k_mid * state.W
    carried = state.S[:-1] * grid.ratio
    S = np.empty_like(state.S)
    I = np.empty_like(state.I)
    S[1:] = carried * np.exp(-exposure)
    I[1:] = (state.I[:-1] * grid.ratio * math.exp(-grid.alpha * grid.delta)
             + carried * -np.expm1(-exposure) * math.exp(-0.5 * grid.alpha * grid.delta))
    I[0] = 0.0

    # boundary node enters the quadratures at its previous value
    S[0] = state.B
    _, Q, births = _aggregates(grid, S, I)
    B = model.r0d * float(model.phi(Q)) * births
    S[0] = B
    W, Q, _ = _aggregates(grid, S, I)

    if not (math.isfinite(B) and math.isfinite(W) and np.all(np.isfinite(S)) and np.all(np.isfinite(I))):
        raise SimulationError("non-finite state", step_index=nxt)
    if np.any(S < 0) or np.any(I < 0):
        raise SimulationError("negative density", step_index=nxt)
    return SimState(grid, state.t + grid.delta, S, I, B, W, Q, nxt)


@dataclass(frozen=True)
class MassBalance:
    observed: float
    predicted: float

    @property
    def residual(self) -> float:
        return self.observed - self.predicted


def mass_balance(prev: SimState, new: SimState) -> MassBalance:
    """d/dt ∫(S+I) over one step against B - ∫μ(S+I) - α∫I.

    Deaths are counted per cell from the survival ratios, independently of
    the update formulas.
    """
    grid = prev.grid
    N = prev.S + prev.I
    observed = (grid.integrate(new.S + new.I) - grid.integrate(N)) / grid.delta
    natural = float(np.sum(N[:-1] * (1.0 - grid.ratio)))
    disease = grid.alpha * grid.integrate(prev.I)
    return MassBalance(observed, new.B - natural - disease)


# -----------------------------------------
# Runs
# -----------------------------------------
@dataclass(frozen=True, eq=False)
class SimReport:
    outcome: str
    final_W: float
    period: Optional[float]
    amplitude: Optional[float]
    times: np.ndarray
    W: np.ndarray
    distance: np.ndarray
    trajectory: np.ndarray
    final_state: SimState
    decay_rate: Optional[float] = None
    notes: Tuple[str, ...] = field(default_factory=tuple)

    TRAJECTORY_COLUMNS = ("t", "B", "W", "Q", "totalS", "totalI")


def _row(state: SimState) -> List[float]:
    return [state.t, state.B, state.W, state.Q, state.total_S, state.total_I]


def oscillation(times: np.ndarray, w: np.ndarray) -> Tuple[Optional[float], float, bool]:
    """(period, peak-to-peak amplitude, regular) of a trace window."""
    amplitude = float(np.max(w) - np.min(w)) if w.size else 0.0
    peaks, _ = signal.find_peaks(w, prominence=max(1e-12, 0.05 * amplitude))
    if peaks.size < MIN_PEAK_INTERVALS + 1:
        return None, amplitude, False
    intervals = np.diff(times[peaks])
    period = float(np.mean(intervals))
    regular = period > 0 and float(np.std(intervals)) < PERIOD_SPREAD * period
    heights = w[peaks]
    sustained = heights[-1] - np.min(w) >= 0.5 * (heights[0] - np.min(w))
    return period, amplitude, bool(regular and sustained)


def decay_rate(times: np.ndarray, w: np.ndarray, w_ref: Optional[float] = None,
               window: Tuple[float, float] = (1e-6, 1e-2)) -> Optional[float]:
    """Exponential rate of |W - W_ref| over the stretch where it lies in `window`·scale.

    Oscillating deviations are reduced to their envelope (local maxima).
    """
    w_ref = float(w[-1]) if w_ref is None else float(w_ref)
    dev = np.abs(w - w_ref)
    scale = max(abs(w_ref), 1e-12)
    peaks, _ = signal.find_peaks(dev)
    idx = peaks if peaks.size >= 3 else np.arange(dev.size)
    keep = idx[(dev[idx] >= window[0] * scale) & (dev[idx] <= window[1] * scale)]
    if keep.size < 3:
        return None
    slope, _ = np.polyfit(times[keep], np.log(dev[keep]), 1)
    return float(slope)


def classify_trace(times: np.ndarray, w: np.ndarray, conv_tol: float,
                   reference: Optional[float] = None):
    """Outcome from the last part of a W(t) trace: (outcome, period, amplitude).

    Converged means the whole tail stays within conv_tol of `reference`
    (of the final value when no equilibrium is supplied).
    """
    if np.any(~np.isfinite(w)) or np.any(w > DIVERGENCE_LEVEL):
        return DIVERGED, None, None
    start = int(math.floor((1.0 - TAIL_FRACTION) * w.size))
    t_tail, w_tail = times[start:], w[start:]
    if w_tail.size < 2:
        return INCONCLUSIVE, None, None
    target = w_tail[-1] if reference is None else float(reference)
    deviation = float(np.max(np.abs(w_tail - target)))
    if deviation < conv_tol:
        return CONVERGED, None, deviation
    period, amplitude, regular = oscillation(t_tail, w_tail)
    if regular:
        return OSCILLATING, period, amplitude
    return INCONCLUSIVE, period, amplitude


def run(state: SimState, t_end: float, conv_tol: Optional[float] = None,
        reference: Optional[float] = None, record_every: int = 1) -> SimReport:
    """Step to `t_end` and classify the W(t) trace.

    `reference` is the equilibrium level the run is judged against (use
    discrete_level for the scheme's own steady state); without one the tail
    is compared with its final value. The default convergence tolerance is
    1e-7·(1 + |W*|).
    """
    if not t_end > 0:
        raise ConfigError(f"t_end must be positive, got {t_end!r}", key_path="simulate.t_end")
    if record_every < 1:
        raise ConfigError("record_every must be at least 1", key_path="simulate.record_every")
    grid = state.grid
    steps = int(math.ceil(t_end / grid.delta - 1e-9))
    ref = state.W if reference is None else float(reference)
    conv_tol = 1e-7 * (1.0 + abs(ref)) if conv_tol is None else conv_tol

    times = np.empty(steps + 1)
    trace = np.empty(steps + 1)
    times[0], trace[0] = state.t, state.W
    rows = [_row(state)]
    notes: List[str] = []
    done = steps
    for n in range(1, steps + 1):
        state = step(state)
        times[n], trace[n] = state.t, state.W
        if n % record_every == 0 or n == steps:
            rows.append(_row(state))
        if state.W > DIVERGENCE_LEVEL:
            notes.append(f"W exceeded {DIVERGENCE_LEVEL:g} at t={state.t:.6g}")
            if rows[-1][0] != state.t:
                rows.append(_row(state))
            done = n
            break
    times, trace = times[:done + 1], trace[:done + 1]

    outcome, period, amplitude = classify_trace(times, trace, conv_tol, reference)
    rate = decay_rate(times, trace, w_ref=reference) if outcome == CONVERGED else None
    log_step(f"[SIMULATE] {grid.model.spec.name} alpha={grid.alpha:g}: {outcome} after t={state.t:.6g} "
             f"(W={state.W:.6g}, {grid.cells} cells)")
    return SimReport(
        outcome=outcome,
        final_W=state.W,
        period=period if outcome == OSCILLATING else None,
        amplitude=amplitude if outcome == OSCILLATING else None,
        times=times,
        W=trace,
        distance=np.abs(trace - ref),
        trajectory=np.array(rows),
        final_state=state,
        decay_rate=rate,
        notes=tuple(notes),
    )
