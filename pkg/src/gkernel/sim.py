"""Path simulation under controlled volatility scenarios.

The driving noise under volatility uncertainty is represented scenario
by scenario: a control picks a covariance matrix Q_t inside the
ambiguity set at every step, the quadratic covariation accrues as
Q_t dt, and the noise increment is sqrtm(Q_t) sqrt(dt) xi with standard
normal xi.  The state follows the Euler scheme

    dX = b(X) dt + sum_ij h_ij(X) dQV_ij + sigma(X) dB,

with all coefficients evaluated at the left endpoint.

Each path owns a counter-based random stream keyed by (seed, path id),
so results are independent of chunking and identical whether paths are
generated in one block or streamed.  Expectation-style estimators
(``upper_price_mc``, ``long_term_yield_mc``) stream path chunks and
never hold full histories; ``simulate_gsde`` returns full histories and
guards against oversized requests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coefficients import as_coefficient
from .errors import DivergenceError, InvalidSetError, ShapeError
from .gcore import UncertaintySet, g_value_batch
from .model import ModelSpec
from .pde import _hamiltonian_batch

__all__ = [
    "VolControl",
    "ConstantControl",
    "PiecewiseControl",
    "FeedbackControl",
    "ScenarioBatch",
    "simulate_gsde",
    "worst_case_policy",
    "extreme_controls",
    "PriceEstimate",
    "upper_price_mc",
    "YieldEstimate",
    "long_term_yield_mc",
]

_MAX_BATCH_FLOATS = 2.5e8  # full-history batches above this must stream instead
_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# controls


class VolControl:
    """Chooses the covariance scenario Q_t at each step.

    Subclasses implement ``matrices(t, x)`` returning one (d, d) matrix
    per row of ``x``.
    """

    label = "control"

    def matrices(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def validate(self, sigma_set: UncertaintySet) -> None:
        """Static controls check set membership up front; others opt out."""


class ConstantControl(VolControl):
    def __init__(self, q, label: str | None = None):
        q = np.asarray(q, dtype=float)
        if q.ndim == 0:
            q = q.reshape(1, 1)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ShapeError(f"covariance scenario must be square, got shape {q.shape}")
        self.q = 0.5 * (q + q.T)
        self.label = label or "constant"

    def matrices(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.q, (x.shape[0],) + self.q.shape)

    def validate(self, sigma_set: UncertaintySet) -> None:
        if not sigma_set.contains(self.q):
            raise InvalidSetError(
                f"control {self.label!r} uses a covariance outside the ambiguity set"
            )


class PiecewiseControl(VolControl):
    """Deterministic piecewise-constant scenario, left-closed in time."""

    def __init__(self, times: Sequence[float], mats: Sequence, label: str | None = None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size == 0 or times[0] != 0.0:
            raise ShapeError("piecewise control needs breakpoints starting at 0")
        if np.any(np.diff(times) <= 0.0):
            raise ShapeError("piecewise breakpoints must be strictly increasing")
        ms = [np.asarray(m, dtype=float) for m in mats]
        ms = [m.reshape(1, 1) if m.ndim == 0 else m for m in ms]
        if len(ms) != times.size:
            raise ShapeError("piecewise control needs one matrix per breakpoint")
        self.times = times
        self.mats = np.stack([0.5 * (m + m.T) for m in ms])
        self.label = label or "piecewise"

    def matrices(self, t: float, x: np.ndarray) -> np.ndarray:
        idx = int(np.searchsorted(self.times, t, side="right") - 1)
        idx = max(idx, 0)
        return np.broadcast_to(self.mats[idx], (x.shape[0],) + self.mats[idx].shape)

    def validate(self, sigma_set: UncertaintySet) -> None:
        for i, m in enumerate(self.mats):
            if not sigma_set.contains(m):
                raise InvalidSetError(
                    f"piecewise control segment {i} lies outside the ambiguity set"
                )


class FeedbackControl(VolControl):
    def __init__(self, fn: Callable[[float, np.ndarray], np.ndarray], label: str = "feedback"):
        self.fn = fn
        self.label = label

    def matrices(self, t: float, x: np.ndarray) -> np.ndarray:
        q = np.asarray(self.fn(t, x), dtype=float)
        if q.shape[0] != x.shape[0] or q.ndim != 3 or q.shape[1] != q.shape[2]:
            raise ShapeError(
                f"feedback control returned shape {q.shape} for {x.shape[0]} paths"
            )
        return q


def worst_case_policy(solution, model: ModelSpec, mode: str = "pricing") -> FeedbackControl:
    """Feedback control selecting the maximizing covariance of G(H).

    ``solution`` is an ergodic or stationary/parabolic solution exposing
    ``gradient_at``/``hessian_at``; the selected matrix is always one of
    the extreme candidates of the ambiguity set.  Outside the solution
    grid the interpolants extend with frozen boundary derivatives, so the
    policy stays well defined on the whole simulation range.
    """

    def fn(t: float, x: np.ndarray) -> np.ndarray:
        grad = solution.gradient_at(x, t)
        hess = solution.hessian_at(x, t)
        uval = solution.value_at(x, t)
        hmat = _hamiltonian_batch(model, x, grad, hess, uval, mode=mode)
        _, argmax = g_value_batch(hmat, model.uncertainty)
        return argmax

    return FeedbackControl(fn, label="worst_case")


def extreme_controls(sigma_set: UncertaintySet) -> list[ConstantControl]:
    """Constant controls at the extreme points of the ambiguity set."""
    out = []
    if sigma_set.kind == "interval":
        labels = ["upper", "lower"] if not sigma_set.degenerate else ["upper"]
        for q, lab in zip(sigma_set.candidates()[: len(labels)], labels):
            out.append(ConstantControl(q, label=lab))
    else:
        for i, q in enumerate(sigma_set.candidates()):
            out.append(ConstantControl(q, label=f"member_{i}"))
    return out


# ---------------------------------------------------------------------------
# path generation


def _path_rng(seed: int, path_id: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, path_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunk_draws(seed: int, path_lo: int, path_hi: int, n_steps: int, d: int) -> np.ndarray:
    out = np.empty((path_hi - path_lo, n_steps, d))
    for i, p in enumerate(range(path_lo, path_hi)):
        out[i] = _path_rng(seed, p).standard_normal((n_steps, d))
    return out


def _sqrt_psd(q: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root, batched over the leading axis."""
    vals, vecs = np.linalg.eigh(q)
    vals = np.clip(vals, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", vecs, np.sqrt(vals), vecs)


@dataclass
class ScenarioBatch:
    """Full path histories for one control scenario.

    Arrays are indexed (path, step, ...): ``noise`` the standard-normal
    increments driving each step, ``B`` the accumulated noise path,
    ``QV`` its quadratic covariation, ``X`` the state, ``Q`` the
    covariance scenario applied on each step (one entry per step, not
    per node).  ``times`` has length n_steps + 1 and starts at 0.
    """

    times: np.ndarray
    noise: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    control_label: str
    seed: int
    path_offset: int = 0

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def n_steps(self) -> int:
        return self.X.shape[1] - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def path_slice(self, lo: int, hi: int) -> "ScenarioBatch":
        """View onto a contiguous range of paths (no copies)."""
        return ScenarioBatch(
            times=self.times, noise=self.noise[lo:hi], B=self.B[lo:hi],
            QV=self.QV[lo:hi], X=self.X[lo:hi], Q=self.Q[lo:hi],
            control_label=self.control_label, seed=self.seed,
            path_offset=self.path_offset + lo,
        )


def _resolve_steps(T: float, dt: float) -> int:
    if dt <= 0.0 or T <= 0.0:
        raise ShapeError("need T > 0 and dt > 0")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ShapeError(f"dt={dt} must divide the horizon T={T}")
    return n_steps


def simulate_gsde(
    model: ModelSpec,
    control: VolControl,
    x0,
    T: float,
    dt: float,
    n_paths: int,
    seed: int = 0,
    path_offset: int = 0,
    chunk_size: int | None = None,
) -> ScenarioBatch:
    """Euler scheme under a covariance control; returns full histories.

    Path ``p`` draws from a dedicated stream keyed by (seed,
    path_offset + p), so splitting a run across calls with shifted
    offsets reproduces the single-call result bit for bit.
    """
    n_steps = _resolve_steps(T, dt)
    if n_paths < 1:
        raise ShapeError("need n_paths >= 1")
    m, d = model.m, model.d
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (m,):
        raise ShapeError(f"x0 must have {m} coordinates")
    total = n_paths * (n_steps + 1) * (m + 2 * d + 2 * d * d)
    if total > _MAX_BATCH_FLOATS:
        raise ShapeError(
            f"full-history batch would hold ~{total:.2g} floats; "
            "use the streaming estimators for runs of this size"
        )
    control.validate(model.uncertainty)

    times = dt * np.arange(n_steps + 1)
    noise = np.empty((n_paths, n_steps, d))
    B = np.zeros((n_paths, n_steps + 1, d))
    QV = np.zeros((n_paths, n_steps + 1, d, d))
    X = np.empty((n_paths, n_steps + 1, m))
    Q = np.empty((n_paths, n_steps, d, d))
    X[:, 0] = x0

    if chunk_size is None:
        chunk_size = max(1, min(n_paths, int(2.5e7 / max(1, n_steps * d))))
    sqdt = math.sqrt(dt)
    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        draws = _chunk_draws(seed, path_offset + lo, path_offset + hi, n_steps, d)
        noise[lo:hi] = draws
        x = X[lo:hi, 0].copy()
        for k in range(n_steps):
            q = control.matrices(times[k], x)
            db = np.einsum("nij,nj->ni", _sqrt_psd(q), draws[:, k]) * sqdt
            dqv = q * dt
            bval = model.eval_b(x)
            hval = model.eval_h(x)
            sig = model.eval_sigma(x)
            x = (
                x
                + bval * dt
                + np.einsum("nijl,nij->nl", hval, dqv)
                + np.einsum("nld,nd->nl", sig, db)
            )
            B[lo:hi, k + 1] = B[lo:hi, k] + db
            QV[lo:hi, k + 1] = QV[lo:hi, k] + dqv
            X[lo:hi, k + 1] = x
            Q[lo:hi, k] = q

    return ScenarioBatch(
        times=times, noise=noise, B=B, QV=QV, X=X, Q=Q,
        control_label=control.label, seed=seed, path_offset=path_offset,
    )


# ---------------------------------------------------------------------------
# streaming deflator estimators


def _deflator_scan(
    model: ModelSpec,
    control: VolControl,
    x0: np.ndarray,
    dt: float,
    n_steps: int,
    path_lo: int,
    path_hi: int,
    seed: int,
    checkpoint_steps: Sequence[int],
    payoff: Callable[[np.ndarray], np.ndarray] | None,
) -> dict:
    """March one chunk without history; return deflated sums per checkpoint.

    The deflator accrues d ln D = -r dt - k : dQV - v . dB at the left
    endpoint.  At each checkpoint the (payoff-weighted) deflator sum and
    sum of squares are recorded.
    """
    m, d = model.m, model.d
    n = path_hi - path_lo
    draws = _chunk_draws(seed, path_lo, path_hi, n_steps, d)
    x = np.broadcast_to(x0, (n, m)).copy()
    lnD = np.zeros(n)
    sqdt = math.sqrt(dt)
    marks = set(int(s) for s in checkpoint_steps)
    out = {}
    for k in range(n_steps):
        t = k * dt
        q = control.matrices(t, x)
        db = np.einsum("nij,nj->ni", _sqrt_psd(q), draws[:, k]) * sqdt
        dqv = q * dt
        rval = model.eval_r(x)
        kval = model.eval_k(x)
        vval = model.eval_v(x)
        lnD = lnD - rval * dt - np.einsum("nij,nij->n", kval, dqv) - np.einsum(
            "ni,ni->n", vval, db)
        bval = model.eval_b(x)
        hval = model.eval_h(x)
        sig = model.eval_sigma(x)
        x = (
            x
            + bval * dt
            + np.einsum("nijl,nij->nl", hval, dqv)
            + np.einsum("nld,nd->nl", sig, db)
        )
        step = k + 1
        if step in marks:
            w = np.exp(lnD)
            if payoff is not None:
                w = w * payoff(x)
            out[step] = (float(np.sum(w)), float(np.sum(w * w)))
    return out


def _streaming_deflated_means(
    model, control, x0, T, n_steps, n_paths, seed, checkpoint_steps, payoff,
    chunk_size=None,
) -> dict:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    control.validate(model.uncertainty)
    dt = T / n_steps
    if chunk_size is None:
        chunk_size = max(1, min(n_paths, int(2.5e7 / max(1, n_steps * model.d))))
    sums = {int(s): [0.0, 0.0] for s in checkpoint_steps}
    for lo in range(0, n_paths, chunk_size):
        hi = min(lo + chunk_size, n_paths)
        part = _deflator_scan(
            model, control, x0, dt, n_steps, lo, hi, seed, checkpoint_steps, payoff
        )
        for s, (a, b) in part.items():
            sums[s][0] += a
            sums[s][1] += b
    out = {}
    for s, (a, b) in sums.items():
        mean = a / n_paths
        var = max(b / n_paths - mean**2, 0.0)
        se = math.sqrt(var / n_paths)
        out[s] = (mean, se)
    return out


@dataclass(frozen=True)
class PriceEstimate:
    """Worst-case price estimate with the per-control table behind it."""

    estimate: float
    stderr: float
    control: str
    table: dict
    n_paths: int
    horizon: float

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "control": self.control,
            "n_paths": self.n_paths,
            "horizon": self.horizon,
            "table": {k: {"mean": v[0], "stderr": v[1]} for k, v in self.table.items()},
        }


def upper_price_mc(
    model: ModelSpec,
    payoff,
    T: float,
    controls: Sequence[VolControl] | None = None,
    dt: float = 1e-3,
    n_paths: int = 10_000,
    seed: int = 0,
    x0=None,
    chunk_size: int | None = None,
) -> PriceEstimate:
    """Upper (worst-case) price of a terminal payoff by simulation.

    Evaluates E[D_T payoff(X_T)] under each control in ``controls``
    (default: the extreme constant scenarios of the ambiguity set), all
    sharing one noise seed (common random numbers), and reports the
    largest estimate together with the full per-control table.
    ``payoff`` may be a coefficient expression or a callable on terminal
    states; None means the constant 1.  ``x0`` defaults to the origin.
    """
    n_steps = _resolve_steps(T, dt)
    pay = None
    if payoff is not None:
        pay = payoff if callable(payoff) else as_coefficient(payoff)
    if controls is None:
        controls = extreme_controls(model.uncertainty)
    if not controls:
        raise ShapeError("need at least one control scenario to price under")
    if x0 is None:
        x0 = np.zeros(model.m)

    table = {}
    best = (-math.inf, math.nan, "")
    for ctl in controls:
        res = _streaming_deflated_means(
            model, ctl, x0, T, n_steps, n_paths, seed, [n_steps], pay, chunk_size
        )
        mean, se = res[n_steps]
        table[ctl.label] = (mean, se)
        if mean > best[0]:
            best = (mean, se, ctl.label)
    return PriceEstimate(
        estimate=best[0], stderr=best[1], control=best[2],
        table=table, n_paths=n_paths, horizon=T,
    )


@dataclass(frozen=True)
class YieldEstimate:
    """Log-expectation growth of the deflator across horizons.

    ``rates[i]`` is ln E[D_{T_i}] / T_i; ``lam_fit`` and ``transient_fit``
    are the least-squares intercept/slope of rates against 1/T.
    """

    horizons: tuple
    log_means: tuple
    rates: tuple
    stderrs: tuple
    lam_fit: float
    transient_fit: float
    control: str

    def to_dict(self) -> dict:
        return {
            "horizons": list(self.horizons),
            "log_means": list(self.log_means),
            "rates": list(self.rates),
            "stderrs": list(self.stderrs),
            "lam_fit": self.lam_fit,
            "transient_fit": self.transient_fit,
            "control": self.control,
        }


def long_term_yield_mc(
    model: ModelSpec,
    horizons: Sequence[float],
    control: VolControl,
    dt: float = 1e-2,
    n_paths: int = 10_000,
    seed: int = 0,
    x0=None,
    chunk_size: int | None = None,
) -> YieldEstimate:
    """Estimate the long-run growth rate of E[D_T] under one scenario.

    Simulates once to the largest horizon, reads E[D_T] at each horizon,
    and fits rate(T) = lam + c / T by least squares.  With at least two
    horizons the intercept separates the transient from the long-run
    rate.
    """
    horizons = sorted(float(t) for t in horizons)
    if len(horizons) < 2:
        raise ShapeError("need at least two horizons to separate the transient")
    if x0 is None:
        x0 = np.zeros(model.m)
    t_max = horizons[-1]
    n_steps = _resolve_steps(t_max, dt)
    steps = []
    for t in horizons:
        s = int(round(t / dt))
        if abs(s * dt - t) > 1e-9 * max(1.0, t):
            raise ShapeError(f"dt must divide horizon {t}")
        steps.append(s)

    res = _streaming_deflated_means(
        model, control, x0, t_max, n_steps, n_paths, seed, steps, None, chunk_size
    )
    log_means, rates, ses = [], [], []
    for t, s in zip(horizons, steps):
        mean, se = res[s]
        if not math.isfinite(mean) or mean <= 0.0:
            raise DivergenceError(
                f"deflator mean {mean!r} at horizon {t} is outside the domain "
                "of the logarithm; the run has numerically degenerated",
                where=f"T={t}",
            )
        log_means.append(math.log(mean))
        rates.append(math.log(mean) / t)
        ses.append(se / (mean * t))  # delta method on ln(mean)/t
    a = np.stack([np.ones(len(horizons)), 1.0 / np.asarray(horizons)], axis=-1)
    coef, *_ = np.linalg.lstsq(a, np.asarray(rates), rcond=None)
    return YieldEstimate(
        horizons=tuple(horizons),
        log_means=tuple(log_means),
        rates=tuple(rates),
        stderrs=tuple(ses),
        lam_fit=float(coef[0]),
        transient_fit=float(coef[1]),
        control=control.label,
    )
