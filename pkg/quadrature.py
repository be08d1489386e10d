# quadrature.py — composite Gauss–Legendre panels aligned to rate breakpoints
#
# Every tabulated quantity of the toolkit (π, L, kernels, equilibrium
# profiles) lives on the nodes of one PanelGrid. Values on a panel are read as
# the degree order-1 polynomial through its Gauss nodes, which gives
# interpolation, cumulative integrals and decaying convolutions for free.

import logging
import math
from functools import lru_cache
from typing import Iterable, Sequence, Tuple

import numpy as np
from numpy.polynomial import legendre

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def _reference_rule(order: int):
    """Gauss nodes/weights on [-1, 1], node->coefficient map, cumulative matrix."""
    t, wt = legendre.leggauss(order)
    to_coeffs = np.linalg.inv(legendre.legvander(t, order - 1))
    # row i integrates the interpolant from -1 to t_i
    cumulative = legendre.legvander(t, order) @ legendre.legint(to_coeffs, lbnd=-1, axis=0)
    for arr in (t, wt, to_coeffs, cumulative):
        arr.setflags(write=False)
    return t, wt, to_coeffs, cumulative


def panel_edges(a_dagger: float, breaks: Iterable[float] = (), panels: int = 64) -> np.ndarray:
    """Panel edges over [0, a_dagger]; every breakpoint is an edge."""
    tol = 1e-12 * max(1.0, a_dagger)
    cuts = [0.0]
    for b in sorted(float(b) for b in breaks):
        if tol < b < a_dagger - tol and b - cuts[-1] > tol:
            cuts.append(b)
    cuts.append(float(a_dagger))

    lengths = np.diff(cuts)
    counts = np.maximum(1, np.rint(panels * lengths / a_dagger).astype(int))
    pieces = [np.linspace(lo, hi, n + 1)[:-1] for lo, hi, n in zip(cuts[:-1], cuts[1:], counts)]
    return np.append(np.concatenate(pieces), float(a_dagger))


class PanelGrid:
    def __init__(self, edges: Sequence[float], order: int = 8, breaks: Sequence[float] = ()):
        self.edges = np.asarray(edges, dtype=float)
        self.order = int(order)
        self.breaks = tuple(float(b) for b in breaks)

        t, wt, self._to_coeffs, self._cumulative = _reference_rule(self.order)
        self._t, self._wt = t, wt
        self.half = 0.5 * np.diff(self.edges)
        self.mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.panel_nodes = self.mid[:, None] + self.half[:, None] * t
        self.nodes = self.panel_nodes.ravel()
        self.weights = (self.half[:, None] * wt).ravel()

    @classmethod
    def build(cls, a_dagger: float, breaks: Iterable[float] = (), panels: int = 64,
              order: int = 8) -> "PanelGrid":
        breaks = tuple(breaks)
        return cls(panel_edges(a_dagger, breaks, panels), order, breaks)

    @property
    def a_dagger(self) -> float:
        return float(self.edges[-1])

    @property
    def n_panels(self) -> int:
        return len(self.half)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def max_width(self) -> float:
        return float(2.0 * self.half.max())

    def refined(self, sub: int) -> "PanelGrid":
        """Same panels, each split into `sub` equal parts."""
        if sub <= 1:
            return self
        inner = self.edges[:-1, None] + np.arange(sub) * (2.0 * self.half[:, None] / sub)
        return PanelGrid(np.append(inner.ravel(), self.edges[-1]), self.order, self.breaks)

    def _panels(self, f) -> np.ndarray:
        f = np.asarray(f)
        return f.reshape(f.shape[:-1] + (self.n_panels, self.order))

    # -----------------------------------------
    # Integrals over the grid
    # -----------------------------------------
    def integrate(self, f) -> np.ndarray:
        return np.asarray(f) @ self.weights

    def laplace(self, f, lam) -> np.ndarray:
        """∫ e^{-λa} f(a) da for each λ in `lam` (f given at the nodes)."""
        lam = np.asarray(lam, dtype=complex)
        phase = np.exp(-np.multiply.outer(lam, self.nodes))
        return phase @ (self.weights * np.asarray(f))

    def cumulative(self, f) -> np.ndarray:
        """∫_0^{x_i} f at every node; leading axes are batch axes."""
        fp = self._panels(f)
        inner = np.einsum("ij,...pj->...pi", self._cumulative, fp) * self.half[:, None]
        totals = (fp * self._wt).sum(-1) * self.half
        offsets = np.cumsum(totals, axis=-1) - totals
        return (inner + offsets[..., None]).reshape(np.shape(f))

    def tail(self, f) -> np.ndarray:
        """∫_{x_i}^{a†} f at every node."""
        return np.asarray(self.integrate(f))[..., None] - self.cumulative(f)

    def decay_cumulative(self, f, alpha: float) -> np.ndarray:
        """∫_0^{x_i} f(ρ) e^{-α(x_i-ρ)} dρ at every node."""
        if alpha == 0.0:
            return self.cumulative(f)
        fp = self._panels(f)
        x = self.panel_nodes
        gaps = x[:, :, None] - x[:, None, :]
        inner = np.einsum("pij,...pj->...pi", self._cumulative * np.exp(-alpha * gaps), fp)
        inner *= self.half[:, None]

        to_end = self.half[:, None] * self._wt * np.exp(-alpha * (self.edges[1:, None] - x))
        ends = (fp * to_end).sum(-1)
        decay = np.exp(-alpha * 2.0 * self.half)
        starts = np.zeros_like(ends)
        for p in range(1, self.n_panels):
            starts[..., p] = starts[..., p - 1] * decay[p - 1] + ends[..., p - 1]
        out = inner + starts[..., None] * np.exp(-alpha * (x - self.edges[:-1, None]))
        return out.reshape(np.shape(f))

    def decay_tail(self, f, alpha: float) -> np.ndarray:
        """∫_{x_i}^{a†} f(σ) e^{-α(σ-x_i)} dσ at every node."""
        if alpha == 0.0:
            return self.tail(f)
        fp = self._panels(f)
        x = self.panel_nodes
        gaps = x[:, None, :] - x[:, :, None]
        upper = self._wt[None, :] - self._cumulative
        inner = np.einsum("pij,...pj->...pi", upper * np.exp(-alpha * gaps), fp)
        inner *= self.half[:, None]

        from_start = self.half[:, None] * self._wt * np.exp(-alpha * (x - self.edges[:-1, None]))
        starts = (fp * from_start).sum(-1)
        decay = np.exp(-alpha * 2.0 * self.half)
        ends = np.zeros_like(starts)
        for p in range(self.n_panels - 2, -1, -1):
            ends[..., p] = ends[..., p + 1] * decay[p + 1] + starts[..., p + 1]
        out = inner + ends[..., None] * np.exp(-alpha * (self.edges[1:, None] - x))
        return out.reshape(np.shape(f))

    # -----------------------------------------
    # Interpolation
    # -----------------------------------------
    def locate(self, y) -> np.ndarray:
        idx = np.searchsorted(self.edges, y, side="right") - 1
        return np.clip(idx, 0, self.n_panels - 1)

    def interpolate(self, f, y) -> np.ndarray:
        """Evaluate the panel polynomials of `f` at arbitrary points `y`."""
        y = np.asarray(y, dtype=float)
        flat = np.atleast_1d(y).ravel()
        coeffs = self._panels(f) @ self._to_coeffs.T
        panel = self.locate(flat)
        t = (flat - self.mid[panel]) / self.half[panel]
        basis = legendre.legvander(t, self.order - 1)
        out = np.einsum("nm,...nm->...n", basis, coeffs[..., panel, :])
        return out.reshape(np.shape(f)[:-1] + y.shape)

    def resample(self, f, other: "PanelGrid") -> np.ndarray:
        return self.interpolate(f, other.nodes)

    # -----------------------------------------
    # Rules on [s, a†] for many starting points s
    # -----------------------------------------
    def tail_rules(self, starts: Sequence[float], shifts: Sequence[float] = (),
                   max_width: float = 0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gauss rules on [s, a†] for every s, split at the breakpoints and at s + shift.

        Returns (owner, points, weights): owner[k] is the index of the start
        point whose integral the k-th node contributes to.
        """
        end = self.a_dagger
        width = max_width or end / 16.0
        tol = 1e-12 * max(1.0, end)
        owners, points, weights = [], [], []
        for i, s in enumerate(starts):
            s = float(s)
            if s >= end - tol:
                continue
            cuts = {s, end}
            cuts.update(b for b in self.breaks if s + tol < b < end - tol)
            cuts.update(s + c for c in shifts if tol < c and s + c < end - tol)
            cuts = sorted(cuts)
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                n = max(1, math.ceil((hi - lo) / width))
                sub = np.linspace(lo, hi, n + 1)
                half = 0.5 * np.diff(sub)
                mid = 0.5 * (sub[:-1] + sub[1:])
                points.append((mid[:, None] + half[:, None] * self._t).ravel())
                weights.append((half[:, None] * self._wt).ravel())
                owners.append(np.full(n * self.order, i))
        if not points:
            return np.zeros(0, dtype=int), np.zeros(0), np.zeros(0)
        return np.concatenate(owners), np.concatenate(points), np.concatenate(weights)


def sum_by_owner(owner: np.ndarray, values: np.ndarray, count: int) -> np.ndarray:
    """Collapse per-node contributions of tail_rules back onto the start points."""
    if np.iscomplexobj(values):
        return (np.bincount(owner, values.real, minlength=count)
                + 1j * np.bincount(owner, values.imag, minlength=count))
    return np.bincount(owner, values, minlength=count)
