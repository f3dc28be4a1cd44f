"""Worst-case valuation PDEs on rectangular grids.

Three solver entry points share one explicit monotone finite-difference
core:

* ``solve_parabolic`` -- terminal-value problem
      dw/dt + G(H(x, Dw, D2w)) + <b, Dw> + f = 0,  w(T, .) given,
  marched backward in time with upwinded first derivatives, central
  second derivatives, and an exact pointwise maximization over the
  covariance candidates of the ambiguity set.

* ``solve_discounted`` -- the stationary damped equation
      G(H + 2 gamma2 delta u) + <b, Du> + f + gamma1 delta u = 0,
  found by pseudo-time marching; a constant-mode correction removes the
  O(1/delta) stiffness of the damping term.

* ``solve_ergodic`` -- the eigenpair (u, lam) of
      G(H(x, Du, D2u)) + <b, Du> + f - lam = 0
  via damping continuation: delta_k = delta0 / 2^k with warm starts,
  lam_k = delta_k u^{delta_k}(anchor), stopping when the lam trace is
  Cauchy at tolerance ``tol``.  u is reported anchored to zero.

In pricing-kernel mode the driver is built from the model loadings:
f = -r and the covariation driver contributes -2k_ij + v_i v_j plus the
quadratic gradient term z_i z_j, z = sigma^T Du, with the covariation
drift shifted by the derived coupling d_ij.  The scheme is assembled per
covariance candidate with candidate-consistent upwinding, so the discrete
comparison principle holds and the candidate maximum equals the exact G.

Boundary handling: the second derivative normal to each face is set to
zero (linear extrapolation ghosts).  Interior residual statistics exclude
a two-node band per face.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientFn, as_coefficient
from .errors import (
    CflError,
    ConvergenceError,
    DivergenceError,
    IterationError,
    ShapeError,
)
from .gcore import g_value_batch
from .model import ModelSpec

__all__ = [
    "Grid",
    "PdeSolution",
    "ErgodicSolution",
    "ResidualReport",
    "hamiltonian_H",
    "solve_parabolic",
    "solve_discounted",
    "solve_ergodic",
    "pde_residual",
]

_CFL_SAFETY = 1.05
_BAND = 2  # interior band excluded per face in residual statistics


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid, optionally carrying a time discretization.

    ``bounds`` is one (lo, hi) pair per state coordinate, ``nodes`` the node
    count per coordinate (at least 16).  ``horizon``/``time_steps`` are only
    needed by the parabolic solver.
    """

    bounds: tuple
    nodes: tuple
    horizon: float | None = None
    time_steps: int | None = None

    @classmethod
    def build(cls, bounds, nodes, horizon=None, time_steps=None) -> "Grid":
        bounds_t = tuple((float(lo), float(hi)) for lo, hi in bounds)
        nodes_t = tuple(int(n) for n in (nodes if isinstance(nodes, (list, tuple)) else [nodes]))
        if len(bounds_t) != len(nodes_t):
            raise ShapeError("bounds and nodes must have one entry per coordinate")
        if len(bounds_t) not in (1, 2):
            raise ShapeError("grids support one or two state coordinates")
        for lo, hi in bounds_t:
            if not (lo < hi):
                raise ShapeError(f"empty axis [{lo}, {hi}]")
        for n in nodes_t:
            if n < 16:
                raise ShapeError(f"need at least 16 nodes per axis, got {n}")
        if horizon is not None:
            horizon = float(horizon)
            if horizon < 0.0:
                raise ShapeError(f"horizon must be nonnegative, got {horizon}")
            if horizon > 0.0:
                if time_steps is None or int(time_steps) < 1:
                    raise ShapeError("a positive horizon needs time_steps >= 1")
                time_steps = int(time_steps)
            else:
                time_steps = 0
        return cls(bounds=bounds_t, nodes=nodes_t, horizon=horizon, time_steps=time_steps)

    @property
    def m(self) -> int:
        return len(self.bounds)

    @property
    def shape(self) -> tuple:
        return self.nodes

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.nodes)]

    def spacings(self) -> tuple:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.bounds, self.nodes))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def dt(self) -> float:
        if self.horizon is None or self.time_steps in (None, 0):
            raise ShapeError("grid carries no time discretization")
        return self.horizon / self.time_steps

    def anchor_index(self, point=None) -> tuple:
        """Index of the node nearest the given point (default: the origin)."""
        if point is None:
            point = [0.0] * self.m
        point = np.atleast_1d(np.asarray(point, dtype=float))
        return tuple(int(np.argmin(np.abs(ax - p))) for ax, p in zip(self.axes(), point))

    def diffusion_cfl(self, model: ModelSpec) -> float:
        """Spec-level stability bound dt <= h^2 / (sig_hi2 m_sigma^2 m safety)."""
        pts = self.points()
        sig = model.eval_sigma(pts)
        m_sigma = float(np.max(np.sqrt(np.sum(sig.reshape(sig.shape[0], -1) ** 2, axis=1))))
        sig_hi2 = model.uncertainty.hi
        if m_sigma == 0.0:
            return math.inf
        hmin = min(self.spacings())
        return hmin**2 / (sig_hi2 * m_sigma**2 * self.m * _CFL_SAFETY)


# ---------------------------------------------------------------------------
# solution containers and interpolation


def _pad_linear_1d(w: np.ndarray) -> np.ndarray:
    out = np.empty(w.size + 2)
    out[1:-1] = w
    out[0] = 2.0 * w[0] - w[1]
    out[-1] = 2.0 * w[-1] - w[-2]
    return out


def _pad_linear_2d(w: np.ndarray) -> np.ndarray:
    n1, n2 = w.shape
    out = np.empty((n1 + 2, n2 + 2))
    out[1:-1, 1:-1] = w
    out[0, 1:-1] = 2.0 * w[0] - w[1]
    out[-1, 1:-1] = 2.0 * w[-1] - w[-2]
    out[:, 0] = 2.0 * out[:, 1] - out[:, 2]
    out[:, -1] = 2.0 * out[:, -2] - out[:, -3]
    return out


def nodal_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Central-difference gradient, one-sided at faces; shape (*grid, m)."""
    hs = grid.spacings()
    grads = np.stack(
        [np.gradient(values, hs[ax], axis=ax, edge_order=1) for ax in range(grid.m)],
        axis=-1,
    )
    return grads


def nodal_hessian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Central second derivatives; zero normal curvature at faces.

    Shape (*grid, m, m).  Mixed derivatives use the standard four-point
    cross stencil on linearly extrapolated ghosts.
    """
    hs = grid.spacings()
    m = grid.m
    out = np.zeros(values.shape + (m, m))
    if m == 1:
        wp = _pad_linear_1d(values)
        out[..., 0, 0] = (wp[2:] - 2.0 * wp[1:-1] + wp[:-2]) / hs[0] ** 2
        return out
    wp = _pad_linear_2d(values)
    out[..., 0, 0] = (wp[2:, 1:-1] - 2.0 * wp[1:-1, 1:-1] + wp[:-2, 1:-1]) / hs[0] ** 2
    out[..., 1, 1] = (wp[1:-1, 2:] - 2.0 * wp[1:-1, 1:-1] + wp[1:-1, :-2]) / hs[1] ** 2
    cross = (wp[2:, 2:] - wp[2:, :-2] - wp[:-2, 2:] + wp[:-2, :-2]) / (4.0 * hs[0] * hs[1])
    out[..., 0, 1] = cross
    out[..., 1, 0] = cross
    return out


class _Interp:
    """Piecewise-(bi)linear interpolation with linear value extension.

    Values extend beyond the grid with the boundary gradient held constant;
    derivative fields are clamped to their boundary values.  Query points
    are (n, m) arrays.
    """

    def __init__(self, grid: Grid, values: np.ndarray):
        self.grid = grid
        self.axes = grid.axes()
        self.values = values
        self._grad = nodal_gradient(values, grid)

    def _clip_coords(self, x: np.ndarray):
        cols = []
        excess = np.zeros(x.shape[0])
        for ax in range(self.grid.m):
            a = self.axes[ax]
            c = np.clip(x[:, ax], a[0], a[-1])
            excess = np.maximum(excess, np.abs(x[:, ax] - c) / (a[-1] - a[0]))
            cols.append(c)
        return np.stack(cols, axis=-1), excess

    def value(self, x: np.ndarray) -> np.ndarray:
        xc, _ = self._clip_coords(x)
        inside = self._interp_field(self.values, xc)
        # linear extension: add <grad(clamped point), x - clamped>
        delta = x - xc
        if np.any(delta):
            g = np.stack(
                [self._interp_field(self._grad[..., ax], xc) for ax in range(self.grid.m)],
                axis=-1,
            )
            inside = inside + np.einsum("nl,nl->n", g, delta)
        return inside

    def field(self, arr: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Clamped interpolation of an auxiliary nodal field."""
        xc, _ = self._clip_coords(x)
        return self._interp_field(arr, xc)

    def excess(self, x: np.ndarray) -> np.ndarray:
        _, e = self._clip_coords(x)
        return e

    def _interp_field(self, arr: np.ndarray, xc: np.ndarray) -> np.ndarray:
        if self.grid.m == 1:
            return np.interp(xc[:, 0], self.axes[0], arr)
        a0, a1 = self.axes
        i0 = np.clip(np.searchsorted(a0, xc[:, 0]) - 1, 0, a0.size - 2)
        i1 = np.clip(np.searchsorted(a1, xc[:, 1]) - 1, 0, a1.size - 2)
        t0 = (xc[:, 0] - a0[i0]) / (a0[i0 + 1] - a0[i0])
        t1 = (xc[:, 1] - a1[i1]) / (a1[i1 + 1] - a1[i1])
        v00 = arr[i0, i1]
        v10 = arr[i0 + 1, i1]
        v01 = arr[i0, i1 + 1]
        v11 = arr[i0 + 1, i1 + 1]
        return (
            v00 * (1 - t0) * (1 - t1)
            + v10 * t0 * (1 - t1)
            + v01 * (1 - t0) * t1
            + v11 * t0 * t1
        )


@dataclass
class PdeSolution:
    """Grid solution of a stationary or parabolic worst-case PDE.

    For ``kind == "stationary"`` ``values`` has the grid shape.  For
    ``kind == "parabolic"`` ``values[q]`` is the solution at time q * dt
    (index 0 = initial time, index time_steps = terminal data).
    """

    grid: Grid
    kind: str
    values: np.ndarray
    sweeps: int = 0
    converged: bool = True
    residual_linf: float = math.nan
    residual_l2: float = math.nan
    residual: np.ndarray | None = None

    def __post_init__(self):
        self._interp_cache: dict = {}

    def _interp(self, time_index: int | None = None) -> _Interp:
        key = time_index
        if key not in self._interp_cache:
            vals = self.values if self.kind == "stationary" else self.values[time_index]
            self._interp_cache[key] = _Interp(self.grid, vals)
        return self._interp_cache[key]

    def _spatial(self, t: float | None) -> _Interp:
        if self.kind == "stationary":
            return self._interp(None)
        if t is None:
            raise ShapeError("parabolic solutions need a query time")
        q = int(round(t / self.grid.dt))
        q = min(max(q, 0), self.grid.time_steps)
        return self._interp(q)

    def value_at(self, x: np.ndarray, t: float | None = None) -> np.ndarray:
        return self._spatial(t).value(np.atleast_2d(np.asarray(x, dtype=float)))

    def gradient_at(self, x: np.ndarray, t: float | None = None) -> np.ndarray:
        itp = self._spatial(t)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack(
            [itp.field(itp._grad[..., ax], x) for ax in range(self.grid.m)], axis=-1
        )

    def hessian_at(self, x: np.ndarray, t: float | None = None) -> np.ndarray:
        itp = self._spatial(t)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        vals = self.values if self.kind == "stationary" else self.values[
            0 if t is None else min(max(int(round(t / self.grid.dt)), 0), self.grid.time_steps)
        ]
        hess = nodal_hessian(vals, self.grid)
        m = self.grid.m
        out = np.empty(x.shape[:1] + (m, m))
        for i in range(m):
            for j in range(m):
                out[:, i, j] = itp.field(hess[..., i, j], x)
        return out

    def coverage_excess(self, x: np.ndarray, t: float | None = None) -> np.ndarray:
        return self._spatial(t).excess(np.atleast_2d(np.asarray(x, dtype=float)))


@dataclass
class ErgodicSolution:
    """Eigenpair (u, lam) of the stationary worst-case valuation equation.

    ``delta_trace`` lists (delta_k, lam_k) along the damping continuation;
    ``u.values`` is anchored to zero at ``anchor_index``.
    """

    u: PdeSolution
    lam: float
    delta_trace: tuple
    gamma1: float
    gamma2: np.ndarray
    anchor_index: tuple
    anchor_point: np.ndarray

    # convenience pass-throughs used by simulation/decomposition code
    def value_at(self, x, t=None):
        return self.u.value_at(x)

    def gradient_at(self, x, t=None):
        return self.u.gradient_at(x)

    def hessian_at(self, x, t=None):
        return self.u.hessian_at(x)

    def coverage_excess(self, x, t=None):
        return self.u.coverage_excess(x)

    @property
    def grid(self) -> Grid:
        return self.u.grid


# ---------------------------------------------------------------------------
# Hamiltonian assembly


def _normalize_mode(mode: str) -> str:
    # "parabolic" and "ergodic" share the pricing-kernel driver; only the
    # generic-driver form differs.
    if mode in ("pricing", "parabolic", "ergodic"):
        return "pricing"
    if mode == "generic":
        return "generic"
    raise ShapeError(f"unknown Hamiltonian mode {mode!r}")


def _hamiltonian_batch(
    model: ModelSpec,
    x: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    u_val: np.ndarray | None = None,
    mode: str = "pricing",
    precomputed: dict | None = None,
) -> np.ndarray:
    """H matrices (n, d, d) for a batch of points/derivatives."""
    mode = _normalize_mode(mode)
    pre = precomputed or {}
    sig = pre.get("sigma")
    if sig is None:
        sig = model.eval_sigma(x)
    hess_term = np.einsum("nab,nai,nbj->nij", hess, sig, sig)
    if mode == "pricing":
        htil = pre.get("h_eff")
        if htil is None:
            htil = model.eval_h_effective(x)
        kval = pre.get("k")
        if kval is None:
            kval = model.eval_k(x)
        vval = pre.get("v")
        if vval is None:
            vval = model.eval_v(x)
        z = np.einsum("nlj,nl->nj", sig, grad)
        return (
            hess_term
            + 2.0 * np.einsum("nl,nijl->nij", grad, htil)
            - 2.0 * kval
            + np.einsum("ni,nj->nij", vval, vval)
            + np.einsum("ni,nj->nij", z, z)
        )
    hval = pre.get("h")
    if hval is None:
        hval = model.eval_h(x)
    z = np.einsum("nlj,nl->nj", sig, grad)
    y = np.zeros(x.shape[0]) if u_val is None else np.asarray(u_val, dtype=float)
    d = model.d
    gmat = np.zeros((x.shape[0], d, d))
    if model.g is not None:
        for i in range(d):
            for j in range(d):
                gmat[:, i, j] = model.g[i][j](x, y, z)
    return hess_term + 2.0 * np.einsum("nl,nijl->nij", grad, hval) + 2.0 * gmat


def hamiltonian_H(x, u_val, grad, hess, model: ModelSpec, mode: str = "pricing") -> np.ndarray:
    """Driver matrix H at a single point.

    Pricing mode (aliases "parabolic" and "ergodic" select the same form):
        H_ij = <hess sigma_col_i, sigma_col_j> + 2 <grad, h_ij - d_ij>
               - 2 k_ij + v_i v_j + z_i z_j,        z = sigma^T grad.
    Generic mode replaces the last three terms with 2 g_ij(x, u_val, z)
    and uses the raw covariation loading h.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    grad = np.atleast_1d(np.asarray(grad, dtype=float)).reshape(1, -1)
    hess = np.asarray(hess, dtype=float)
    if hess.ndim == 0:
        hess = hess.reshape(1, 1)
    hess = hess.reshape(1, x.shape[1], x.shape[1])
    uv = np.array([float(u_val)]) if u_val is not None else None
    out = _hamiltonian_batch(model, x, grad, hess, uv, mode=mode)
    return out[0]


# ---------------------------------------------------------------------------
# the explicit stepper


class _Stepper:
    """Per-candidate assembled monotone update on a fixed grid.

    The stationary residual operator is

        S(w) = max_c [ diffusion_c + advection_c + quadratic_c + const_c ]
               + f  (+ damping terms when delta > 0),

    one candidate c per extreme covariance of the ambiguity set.  Each
    candidate uses its own upwind directions, so every S_c is monotone in
    the neighbor values and the pointwise max is both monotone and the
    exact worst-case generator.
    """

    def __init__(self, model: ModelSpec, grid: Grid, mode: str = "pricing",
                 gradient_cap: float = math.inf):
        mode = _normalize_mode(mode)
        if mode == "generic" and model.g is None and model.f is None:
            raise ShapeError("generic mode needs model drivers f and/or g")
        self.model = model
        self.grid = grid
        self.mode = mode
        self.cap = float(gradient_cap)
        self.shape = grid.shape
        self.hs = grid.spacings()
        pts = grid.points()
        self.pts = pts
        n = pts.shape[0]

        self.sig = model.eval_sigma(pts)
        self.bval = model.eval_b(pts)
        self.rval = model.eval_r(pts)
        self.kval = model.eval_k(pts)
        self.vval = model.eval_v(pts)
        self.hval = model.eval_h(pts)
        self.h_eff = model.eval_h_effective(pts)
        self.pre = {
            "sigma": self.sig, "k": self.kval, "v": self.vval,
            "h": self.hval, "h_eff": self.h_eff,
        }

        cands = model.uncertainty.candidates()
        self.n_cand = len(cands)
        self.cands = cands
        m = grid.m
        self.diff_c = np.empty((self.n_cand, m, m, n))      # sigma Q sigma^T per candidate
        self.vel_c = np.empty((self.n_cand, m, n))          # b + Q : (h - d)
        self.const_c = np.empty((self.n_cand, n))           # Q : (-k + vv/2)
        self.trg2_c = np.zeros(self.n_cand)
        src = self.h_eff if mode == "pricing" else self.hval
        kv = (-self.kval + 0.5 * np.einsum("ni,nj->nij", self.vval, self.vval))
        for c, q in enumerate(cands):
            a = np.einsum("nad,de,nbe->nab", self.sig, q, self.sig)
            self.diff_c[c] = np.moveaxis(a, 0, -1)
            self.vel_c[c] = np.moveaxis(
                self.bval + np.einsum("ij,nijl->nl", q, src), 0, -1)
            self.const_c[c] = np.einsum("ij,nij->n", q, kv)
        self.f_base = -self.rval  # pricing driver; generic mode overrides per sweep

        # per-axis gradient cap for the quadratic term (z truncation)
        if math.isfinite(self.cap):
            signorm = np.sqrt(np.sum(self.sig**2, axis=(1, 2)))
            with np.errstate(divide="ignore"):
                self.grad_cap = np.where(signorm > 0.0, self.cap / signorm, np.inf)
        else:
            self.grad_cap = None

        self._grad_scale = 1.0  # running bound on |Dw| used in the dt estimate

    # -- shaped views ----------------------------------------------------

    def _g(self, flat: np.ndarray) -> np.ndarray:
        return flat.reshape(self.shape)

    # -- stationary residual ---------------------------------------------

    def residual(self, w: np.ndarray, delta: float = 0.0, gamma1: float = -1.0,
                 gamma2_tr: np.ndarray | None = None) -> np.ndarray:
        if self.mode == "generic":
            s = self._residual_generic(w)
        elif self.grid.m == 1:
            s = self._residual_pricing_1d(w)
        else:
            s = self._residual_pricing_2d(w)
        if delta > 0.0:
            # damping: gamma1 delta u enters linearly; gamma2 adds
            # delta u tr(Q gamma2) inside the candidate max.  For the
            # candidate-max assembly that term was folded in already when
            # gamma2_tr is provided, so only gamma1 remains here.
            s = s + gamma1 * delta * w
        return s

    def _candidate_max(self, parts: list[np.ndarray]) -> np.ndarray:
        out = parts[0]
        for p in parts[1:]:
            out = np.maximum(out, p)
        return out

    def _residual_pricing_1d(self, w, delta: float = 0.0, g2tr=None):
        h = self.hs[0]
        wp = _pad_linear_1d(w)
        dm = (wp[1:-1] - wp[:-2]) / h
        dp = (wp[2:] - wp[1:-1]) / h
        wxx = (wp[2:] - 2.0 * wp[1:-1] + wp[:-2]) / h**2
        if self.grad_cap is not None:
            dpq = np.clip(dp, -self.grad_cap, self.grad_cap)
            dmq = np.clip(dm, -self.grad_cap, self.grad_cap)
        else:
            dpq, dmq = dp, dm
        quad = np.maximum(dpq, 0.0) ** 2 + np.minimum(dmq, 0.0) ** 2
        self._grad_scale = max(1.0, float(np.max(np.abs(dp))), float(np.max(np.abs(dm))))
        parts = []
        for c in range(self.n_cand):
            a = self.diff_c[c, 0, 0]
            vel = self.vel_c[c, 0]
            s = (
                0.5 * a * wxx
                + np.where(vel > 0.0, vel * dp, vel * dm)
                + 0.5 * a * quad
                + self.const_c[c]
            )
            if delta > 0.0 and g2tr is not None:
                s = s + delta * self.trg2_c[c] * w
            parts.append(s)
        return self._candidate_max(parts) + self.f_base

    def _residual_pricing_2d(self, w2, delta: float = 0.0, g2tr=None):
        h1, h2 = self.hs
        w = w2.reshape(self.shape)
        wp = _pad_linear_2d(w)
        core = wp[1:-1, 1:-1]
        dm1 = (core - wp[:-2, 1:-1]) / h1
        dp1 = (wp[2:, 1:-1] - core) / h1
        dm2 = (core - wp[1:-1, :-2]) / h2
        dp2 = (wp[1:-1, 2:] - core) / h2
        wxx = (wp[2:, 1:-1] - 2.0 * core + wp[:-2, 1:-1]) / h1**2
        wyy = (wp[1:-1, 2:] - 2.0 * core + wp[1:-1, :-2]) / h2**2
        wxy = (wp[2:, 2:] - wp[2:, :-2] - wp[:-2, 2:] + wp[:-2, :-2]) / (4.0 * h1 * h2)
        wxc = 0.5 * (dm1 + dp1)
        wyc = 0.5 * (dm2 + dp2)
        god1 = np.maximum(dp1, 0.0) ** 2 + np.minimum(dm1, 0.0) ** 2
        god2 = np.maximum(dp2, 0.0) ** 2 + np.minimum(dm2, 0.0) ** 2
        self._grad_scale = max(
            1.0,
            float(np.max(np.abs(dp1))), float(np.max(np.abs(dm1))),
            float(np.max(np.abs(dp2))), float(np.max(np.abs(dm2))),
        )
        parts = []
        for c in range(self.n_cand):
            a11 = self._g(self.diff_c[c, 0, 0])
            a12 = self._g(self.diff_c[c, 0, 1])
            a22 = self._g(self.diff_c[c, 1, 1])
            v1 = self._g(self.vel_c[c, 0])
            v2 = self._g(self.vel_c[c, 1])
            s = (
                0.5 * (a11 * wxx + 2.0 * a12 * wxy + a22 * wyy)
                + np.where(v1 > 0.0, v1 * dp1, v1 * dm1)
                + np.where(v2 > 0.0, v2 * dp2, v2 * dm2)
                + 0.5 * (a11 * god1 + a22 * god2)
                + a12 * wxc * wyc
                + self._g(self.const_c[c])
            )
            if delta > 0.0 and g2tr is not None:
                s = s + delta * self.trg2_c[c] * w
            parts.append(s)
        return (self._candidate_max(parts) + self._g(self.f_base)).ravel()

    def _residual_generic(self, w: np.ndarray) -> np.ndarray:
        """Literal assembly: upwind by drift sign, then exact G on one H."""
        m = self.grid.m
        if m == 1:
            h = self.hs[0]
            wp = _pad_linear_1d(w)
            dm = (wp[1:-1] - wp[:-2]) / h
            dp = (wp[2:] - wp[1:-1]) / h
            grad = np.where(self.bval[:, 0] > 0.0, dp, dm)[:, None]
        else:
            w2 = w.reshape(self.shape)
            wp = _pad_linear_2d(w2)
            core = wp[1:-1, 1:-1]
            g1 = np.where(
                self._g(self.bval[:, 0]) > 0.0,
                (wp[2:, 1:-1] - core) / self.hs[0],
                (core - wp[:-2, 1:-1]) / self.hs[0],
            )
            g2 = np.where(
                self._g(self.bval[:, 1]) > 0.0,
                (wp[1:-1, 2:] - core) / self.hs[1],
                (core - wp[1:-1, :-2]) / self.hs[1],
            )
            grad = np.stack([g1.ravel(), g2.ravel()], axis=-1)
        hess = nodal_hessian(w.reshape(self.shape), self.grid).reshape(-1, m, m)
        hmat = _hamiltonian_batch(
            self.model, self.pts, grad, hess, w, mode="generic", precomputed=self.pre
        )
        gvals, _ = g_value_batch(hmat, self.model.uncertainty)
        z = np.einsum("nlj,nl->nj", self.sig, grad)
        fval = self.model.f(self.pts, w, z) if self.model.f is not None else 0.0
        self._grad_scale = max(1.0, float(np.max(np.abs(grad))))
        return gvals + np.einsum("nl,nl->n", self.bval, grad) + fval

    # -- time-step control -----------------------------------------------

    def stable_dt(self, delta: float = 0.0) -> float:
        """Positivity-preserving pseudo-time step for the current state."""
        gscale = min(self._grad_scale * 1.5, self.cap if math.isfinite(self.cap) else
                     self._grad_scale * 1.5)
        denom = 1e-300
        for c in range(self.n_cand):
            load = np.zeros(self.pts.shape[0])
            for ax in range(self.grid.m):
                a = self.diff_c[c, ax, ax]
                load = load + a / self.hs[ax] ** 2 + np.abs(self.vel_c[c, ax]) / self.hs[ax]
                load = load + a * gscale / self.hs[ax]
                if self.grid.m == 2:
                    other = 1 - ax
                    load = load + np.abs(self.diff_c[c, ax, other]) / (
                        self.hs[ax] * self.hs[other])
            denom = max(denom, float(np.max(load)))
        denom += abs(delta) * 2.0
        return 0.9 / denom


# ---------------------------------------------------------------------------
# residual reporting


@dataclass(frozen=True)
class ResidualReport:
    """Centered-difference residual of a solution, interior statistics."""

    values: np.ndarray
    linf_interior: float
    l2_interior: float
    linf_full: float

    def to_dict(self) -> dict:
        return {
            "linf_interior": self.linf_interior,
            "l2_interior": self.l2_interior,
            "linf_full": self.linf_full,
        }


def _interior_mask(shape: tuple) -> np.ndarray:
    mask = np.ones(shape, dtype=bool)
    for ax in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[ax] = slice(0, _BAND)
        mask[tuple(sl)] = False
        sl[ax] = slice(shape[ax] - _BAND, shape[ax])
        mask[tuple(sl)] = False
    return mask


def _stationary_residual_field(
    values: np.ndarray, model: ModelSpec, grid: Grid, lam: float, mode: str
) -> np.ndarray:
    pts = grid.points()
    grad = nodal_gradient(values, grid).reshape(-1, grid.m)
    hess = nodal_hessian(values, grid).reshape(-1, grid.m, grid.m)
    hmat = _hamiltonian_batch(model, pts, grad, hess, values.ravel(), mode=mode)
    gvals, _ = g_value_batch(hmat, model.uncertainty)
    bval = model.eval_b(pts)
    drift = np.einsum("nl,nl->n", bval, grad)
    if mode == "pricing":
        fval = -model.eval_r(pts)
    else:
        z = np.einsum("nlj,nl->nj", model.eval_sigma(pts), grad)
        fval = model.f(pts, values.ravel(), z) if model.f is not None else 0.0
    return (gvals + drift + fval - lam).reshape(grid.shape)


def pde_residual(
    solution,
    model: ModelSpec,
    grid: Grid | None = None,
    lam: float | None = None,
    mode: str = "pricing",
    max_time_slices: int = 65,
) -> ResidualReport:
    """Recompute the PDE residual with central differences.

    Accepts an :class:`ErgodicSolution` (uses its lam), a stationary
    :class:`PdeSolution` (lam defaults to 0), or a raw value array with an
    explicit grid.  For parabolic solutions the residual includes the
    discrete time derivative and is evaluated on at most
    ``max_time_slices`` interior time levels.
    """
    mode = _normalize_mode(mode)
    if isinstance(solution, ErgodicSolution):
        grid = solution.grid
        lam = solution.lam if lam is None else lam
        values = solution.u.values
        kind = "stationary"
    elif isinstance(solution, PdeSolution):
        grid = solution.grid
        values = solution.values
        kind = solution.kind
        lam = 0.0 if lam is None else lam
    else:
        if grid is None:
            raise ShapeError("raw value arrays need an explicit grid")
        values = np.asarray(solution, dtype=float)
        kind = "stationary" if values.shape == grid.shape else "parabolic"
        lam = 0.0 if lam is None else lam

    mask = _interior_mask(grid.shape)
    if kind == "stationary":
        field = _stationary_residual_field(values, model, grid, lam, mode)
        interior = field[mask]
        return ResidualReport(
            values=field,
            linf_interior=float(np.max(np.abs(interior))),
            l2_interior=float(np.sqrt(np.mean(interior**2))),
            linf_full=float(np.max(np.abs(field))),
        )

    n_t = values.shape[0] - 1
    if n_t < 2:
        raise ShapeError("parabolic residual needs at least two time steps")
    dt = grid.dt
    qs = np.unique(np.linspace(1, n_t - 1, min(max_time_slices, n_t - 1)).astype(int))
    fields = []
    for q in qs:
        spatial = _stationary_residual_field(values[q], model, grid, 0.0, mode)
        wt = (values[q + 1] - values[q - 1]) / (2.0 * dt)
        fields.append(wt + spatial)
    field = np.stack(fields, axis=0)
    interior = field[:, mask]
    return ResidualReport(
        values=field,
        linf_interior=float(np.max(np.abs(interior))),
        l2_interior=float(np.sqrt(np.mean(interior**2))),
        linf_full=float(np.max(np.abs(field))),
    )


# ---------------------------------------------------------------------------
# solvers


def _check_finite(w: np.ndarray, sweep: int) -> None:
    if not np.all(np.isfinite(w)):
        bad = int(np.argmax(~np.isfinite(w)))
        raise DivergenceError(
            "solution became non-finite", where=f"node {bad}, sweep {sweep}"
        )


def solve_parabolic(
    model: ModelSpec,
    grid: Grid,
    terminal,
    mode: str = "pricing",
    gradient_cap: float = math.inf,
) -> PdeSolution:
    """Backward terminal-value solve; grid must carry horizon/time_steps.

    The time step must satisfy the diffusion stability bound
    dt <= h^2/(sig_hi2 m_sigma^2 m * 1.05); a stricter positivity bound
    including first-order terms is only warned about, with runtime
    divergence detection as the backstop.
    """
    if grid.horizon is None:
        raise ShapeError("parabolic solves need a grid with horizon/time_steps")
    pts = grid.points()
    if isinstance(terminal, np.ndarray):
        if terminal.shape != grid.shape:
            raise ShapeError(f"terminal array must have grid shape {grid.shape}")
        w_term = terminal.astype(float)
    else:
        w_term = as_coefficient(terminal)(pts).reshape(grid.shape)

    if grid.horizon == 0.0 or grid.time_steps == 0:
        hist = w_term[None, ...].copy()
        sol = PdeSolution(grid=grid, kind="parabolic", values=hist, sweeps=0)
        sol.residual_linf = 0.0
        sol.residual_l2 = 0.0
        return sol

    dt = grid.dt
    bound = grid.diffusion_cfl(model)
    if dt > bound * (1.0 + 1e-12):
        raise CflError(
            f"time step {dt:.6g} violates the stability bound {bound:.6g}; "
            f"increase time_steps to at least {int(math.ceil(grid.horizon / bound))}"
        )
    stepper = _Stepper(model, grid, mode=mode, gradient_cap=gradient_cap)
    strict = stepper.stable_dt()
    if dt > strict:
        warnings.warn(
            f"time step {dt:.3g} exceeds the positivity bound {strict:.3g}; "
            "the march stays consistent but loses the discrete comparison property",
            stacklevel=2,
        )

    n_t = grid.time_steps
    hist = np.empty((n_t + 1,) + grid.shape)
    hist[n_t] = w_term
    w = w_term.ravel().copy()
    for q in range(n_t - 1, -1, -1):
        s = stepper.residual(w, delta=0.0)
        w = w + dt * s
        _check_finite(w, n_t - q)
        hist[q] = w.reshape(grid.shape)

    sol = PdeSolution(grid=grid, kind="parabolic", values=hist, sweeps=n_t)
    rep = pde_residual(sol, model, mode=mode)
    sol.residual_linf = rep.linf_interior
    sol.residual_l2 = rep.l2_interior
    return sol


def _gamma2_matrix(gamma2, d: int) -> np.ndarray:
    if gamma2 is None:
        return np.zeros((d, d))
    g2 = np.asarray(gamma2, dtype=float)
    if g2.ndim == 0:
        g2 = g2 * np.eye(d)
    if g2.shape != (d, d):
        raise ShapeError(f"gamma2 must be a ({d}, {d}) matrix")
    return 0.5 * (g2 + g2.T)


def solve_discounted(
    model: ModelSpec,
    grid: Grid,
    delta: float,
    gamma1: float = -1.0,
    gamma2=None,
    mode: str = "pricing",
    tol_inner: float = 1e-10,
    max_sweeps: int = 500_000,
    warm_start: np.ndarray | None = None,
    anchor_index: tuple | None = None,
    gradient_cap: float = math.inf,
    _stepper: _Stepper | None = None,
) -> PdeSolution:
    """Solve the damped stationary equation by pseudo-time marching.

    Requires delta > 0 and the normalization gamma1 + 2 G(gamma2) = -1.
    Iterates until the sweep update has sup norm below ``tol_inner``.

    In pricing mode with gamma2 = 0 the operator is invariant under
    constant shifts except for the linear damping, so the iteration is
    split into a shape component anchored to zero and an exactly solved
    level c = S(shape)(anchor) / (-gamma1 delta).  This removes the
    1/delta convergence bottleneck and keeps every differenced array
    O(1) even though the solution level grows like 1/delta.  Other modes
    march the full state with a damped level correction.
    """
    from .gcore import g_value

    delta = float(delta)
    if delta <= 0.0:
        raise ShapeError(f"delta must be positive, got {delta}")
    g2 = _gamma2_matrix(gamma2, model.d)
    norm = gamma1 + 2.0 * g_value(g2, model.uncertainty).value
    if abs(norm + 1.0) > 1e-12:
        raise ShapeError(
            f"damping normalization gamma1 + 2 G(gamma2) must equal -1, got {norm}"
        )

    stepper = _stepper or _Stepper(model, grid, mode=mode, gradient_cap=gradient_cap)
    for c, q in enumerate(stepper.cands):
        stepper.trg2_c[c] = float(np.tensordot(q, g2))
    has_g2 = bool(np.any(g2))

    anchor = anchor_index or grid.anchor_index()
    anchor_flat = int(np.ravel_multi_index(anchor, grid.shape))
    n = stepper.pts.shape[0]
    if warm_start is None:
        phi = np.zeros(n)
    else:
        phi = np.asarray(warm_start, dtype=float).ravel().copy()
        if phi.size != n:
            raise ShapeError("warm start has the wrong size for this grid")
        phi -= phi[anchor_flat]

    exact_level = (mode == "pricing") and not has_g2

    def raw_residual(state: np.ndarray) -> np.ndarray:
        if stepper.mode == "generic":
            return stepper._residual_generic(state) + gamma1 * delta * state
        if grid.m == 1:
            s = stepper._residual_pricing_1d(state, delta, g2 if has_g2 else None)
        else:
            s = stepper._residual_pricing_2d(state, delta, g2 if has_g2 else None)
        return s + gamma1 * delta * state

    dt = stepper.stable_dt(delta)
    sweeps = 0
    update = math.inf

    if exact_level:
        level = 0.0
        while sweeps < max_sweeps:
            s = raw_residual(phi)
            level = s[anchor_flat] / (-gamma1 * delta)
            s_shape = s - s[anchor_flat]
            phi = phi + dt * s_shape
            sweeps += 1
            if sweeps % 16 == 0 or sweeps < 4:
                _check_finite(phi, sweeps)
            update = dt * float(np.max(np.abs(s_shape)))
            if update < tol_inner:
                break
            if sweeps % 64 == 0:
                dt = stepper.stable_dt(delta)
        else:
            raise IterationError(
                f"damped stationary solve did not converge in {max_sweeps} sweeps",
                last_residual=update,
            )
        _check_finite(phi, sweeps)
        level = raw_residual(phi)[anchor_flat] / (-gamma1 * delta)
        w = phi + level
    else:
        w = phi
        while sweeps < max_sweeps:
            s = raw_residual(w)
            shift = 0.0
            if sweeps % 8 == 0:
                shift = 0.5 * s[anchor_flat] / delta
            w = w + dt * s + shift
            sweeps += 1
            if sweeps % 16 == 0 or sweeps < 4:
                _check_finite(w, sweeps)
            update = dt * float(np.max(np.abs(s))) + abs(shift)
            if update < tol_inner:
                break
            if sweeps % 64 == 0:
                dt = stepper.stable_dt(delta)
        else:
            raise IterationError(
                f"damped stationary solve did not converge in {max_sweeps} sweeps",
                last_residual=update,
            )
        _check_finite(w, sweeps)

    sol = PdeSolution(
        grid=grid, kind="stationary", values=w.reshape(grid.shape),
        sweeps=sweeps, converged=True,
    )
    return sol


def solve_ergodic(
    model: ModelSpec,
    grid: Grid,
    delta0: float = 0.5,
    tol: float = 1e-6,
    gamma1: float = -1.0,
    gamma2=None,
    mode: str = "pricing",
    tol_inner: float = 1e-10,
    max_sweeps: int = 500_000,
    max_halvings: int = 20,
    anchor: Sequence[float] | None = None,
    gradient_cap: float = math.inf,
    check: bool = True,
) -> ErgodicSolution:
    """Eigenpair (u, lam) by vanishing-damping continuation.

    Solves the damped equation at delta_k = delta0 / 2^k (warm-started),
    tracks lam_k = delta_k * u_k(anchor), and stops once consecutive lam
    values differ by less than ``tol``.  Returns u anchored to zero.  A
    non-Cauchy trace after ``max_halvings`` halvings raises
    :class:`ConvergenceError`.

    When ``check`` is true a coarse dissipativity diagnostic runs first
    and a failing margin produces a warning (not an error).
    """
    if delta0 <= 0.0:
        raise ShapeError(f"delta0 must be positive, got {delta0}")
    if check:
        from .model import check_assumptions

        try:
            rep = check_assumptions(model, grid.bounds, [12] * grid.m)
            if not rep.clauses["iv"]:
                warnings.warn(
                    f"dissipativity margin is not positive (gap = {rep.gap:.4g}); "
                    "the long-horizon limit may be unreliable",
                    stacklevel=2,
                )
        except Exception:  # diagnostics must never block the solve
            warnings.warn("assumption diagnostics failed; continuing", stacklevel=2)

    anchor_idx = grid.anchor_index(anchor)
    anchor_flat = int(np.ravel_multi_index(anchor_idx, grid.shape))
    anchor_point = np.array([ax[i] for ax, i in zip(grid.axes(), anchor_idx)])

    stepper = _Stepper(model, grid, mode=mode, gradient_cap=gradient_cap)
    trace: list[tuple[float, float]] = []
    warm = None
    lam_prev = math.nan
    total_sweeps = 0
    sol = None
    for k in range(max_halvings + 1):
        delta_k = delta0 / 2.0**k
        sol = solve_discounted(
            model, grid, delta_k, gamma1=gamma1, gamma2=gamma2, mode=mode,
            tol_inner=tol_inner, max_sweeps=max_sweeps, warm_start=warm,
            anchor_index=anchor_idx, gradient_cap=gradient_cap, _stepper=stepper,
        )
        total_sweeps += sol.sweeps
        lam_k = delta_k * float(sol.values.ravel()[anchor_flat])
        trace.append((delta_k, lam_k))
        if k >= 1 and abs(lam_k - lam_prev) < tol:
            break
        lam_prev = lam_k
        warm = sol.values.ravel()
    else:
        raise ConvergenceError(
            f"damping trace is not Cauchy after {max_halvings} halvings: "
            f"last increments {abs(trace[-1][1] - trace[-2][1]):.3e}"
        )

    lam = trace[-1][1]
    u_vals = sol.values - sol.values.ravel()[anchor_flat]
    u_sol = PdeSolution(
        grid=grid, kind="stationary", values=u_vals, sweeps=total_sweeps, converged=True,
    )
    rep = pde_residual(u_sol, model, lam=lam, mode=mode)
    u_sol.residual = rep.values
    u_sol.residual_linf = rep.linf_interior
    u_sol.residual_l2 = rep.l2_interior

    return ErgodicSolution(
        u=u_sol,
        lam=float(lam),
        delta_trace=tuple(trace),
        gamma1=float(gamma1),
        gamma2=_gamma2_matrix(gamma2, model.d),
        anchor_index=anchor_idx,
        anchor_point=anchor_point,
    )
