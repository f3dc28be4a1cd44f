"""Model containers for robust kernel analysis, and their diagnostics.

A ``ModelSpec`` collects the coefficient functions of the state dynamics

    dX = b(X) dt + sum_ij h_ij(X) d<B^i, B^j> + sigma(X) dB,

the pricing-kernel loadings (short rate r, covariation loading k, noise
loading v), and the covariance ambiguity set of the d-dimensional driver.
All coefficients map the state x in R^m to scalars; vector and matrix
coefficients are entrywise tuples of :class:`~gkernel.coefficients.CoefficientFn`.

``check_assumptions`` estimates, over a finite sample box, the regularity
and dissipativity constants that the long-horizon theory rests on, and
reports the margin ("gap") by which the dissipativity rate dominates the
nonlinearity of the diffusion.  ``truncation_level`` converts those
constants into the gradient cap used to tame quadratic terms.
``equilibrium_model`` produces rate and risk loadings from a consumption
equilibrium.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientFn, Constant, as_coefficient
from .errors import DomainError, EvaluationError, ShapeError
from .gcore import UncertaintySet, g_value_batch

__all__ = [
    "ModelSpec",
    "AssumptionReport",
    "check_assumptions",
    "derived_dij",
    "truncation_level",
    "LogUtility",
    "PowerUtility",
    "CustomUtility",
    "EquilibriumSpec",
    "EquilibriumPoint",
    "equilibrium_model",
]

_PAIR_CAP = 200_000


def _coeff_grid(entries, shape, what: str):
    """Coerce a nested sequence of coefficient sources to a tuple tree."""
    if len(shape) == 0:
        return as_coefficient(entries)
    expected = shape[0]
    if entries is None or isinstance(entries, (int, float, str, CoefficientFn)):
        raise ShapeError(f"{what} must be a sequence of length {expected}")
    seq = list(entries)
    if len(seq) != expected:
        raise ShapeError(f"{what} has length {len(seq)}, expected {expected}")
    return tuple(_coeff_grid(e, shape[1:], what) for e in seq)


def _eval_checked(fn: CoefficientFn, x: np.ndarray, label: str) -> np.ndarray:
    out = fn(x)
    bad = ~np.isfinite(out)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise EvaluationError(
            f"{label} evaluated to a non-finite value at x = {x[idx].tolist()}"
        )
    return out


@dataclass(frozen=True)
class ModelSpec:
    """State dynamics plus kernel loadings plus covariance ambiguity.

    Attributes:
        m: state dimension (1 or 2 at desk scale).
        d: driving-noise dimension.
        b: drift, m entries.
        sigma: diffusion, m x d entries (row = state coordinate).
        r: short rate.
        h: covariation drift loading, d x d entries each of length m
           (``None`` means identically zero).
        k: covariation loading of the kernel, d x d (``None`` = zero).
        v: noise loading of the kernel, d entries (``None`` = zero).
        uncertainty: covariance ambiguity set of the driver.
        f, g: optional generic drivers ``f(x, y, z)`` and ``g[i][j](x, y, z)``
            for the generic-driver PDE mode; when absent the pricing-kernel
            drivers derived from (r, k, v) apply.
    """

    m: int
    d: int
    b: tuple
    sigma: tuple
    r: CoefficientFn
    h: tuple | None
    k: tuple | None
    v: tuple | None
    uncertainty: UncertaintySet
    f: Callable | None = None
    g: tuple | None = None
    label: str = ""

    @classmethod
    def build(
        cls,
        m: int,
        d: int,
        b,
        sigma,
        r,
        uncertainty: UncertaintySet,
        h=None,
        k=None,
        v=None,
        f=None,
        g=None,
        label: str = "",
    ) -> "ModelSpec":
        m = int(m)
        d = int(d)
        if m < 1 or d < 1:
            raise ShapeError("state and noise dimensions must be at least 1")
        if uncertainty.dim != d:
            raise ShapeError(
                f"ambiguity set has dimension {uncertainty.dim}, model noise dimension is {d}"
            )
        b_t = _coeff_grid(b, (m,), "drift b")
        sig_t = _coeff_grid(sigma, (m, d), "diffusion sigma")
        r_t = as_coefficient(r)
        h_t = None if h is None else _coeff_grid(h, (d, d, m), "loading h")
        k_t = None if k is None else _coeff_grid(k, (d, d), "loading k")
        v_t = None if v is None else _coeff_grid(v, (d,), "loading v")
        return cls(
            m=m, d=d, b=b_t, sigma=sig_t, r=r_t, h=h_t, k=k_t, v=v_t,
            uncertainty=uncertainty, f=f, g=g, label=label,
        )

    # -- vectorized evaluation (n states at a time) ----------------------

    def eval_b(self, x: np.ndarray) -> np.ndarray:
        return np.stack([_eval_checked(fn, x, f"b[{i}]") for i, fn in enumerate(self.b)], axis=-1)

    def eval_sigma(self, x: np.ndarray) -> np.ndarray:
        rows = []
        for l, row in enumerate(self.sigma):
            rows.append(np.stack(
                [_eval_checked(fn, x, f"sigma[{l}][{j}]") for j, fn in enumerate(row)], axis=-1))
        return np.stack(rows, axis=-2)  # (n, m, d)

    def eval_r(self, x: np.ndarray) -> np.ndarray:
        return _eval_checked(self.r, x, "r")

    def eval_k(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.k is None:
            return np.zeros((n, self.d, self.d))
        out = np.empty((n, self.d, self.d))
        for i in range(self.d):
            for j in range(self.d):
                out[:, i, j] = _eval_checked(self.k[i][j], x, f"k[{i}][{j}]")
        return out

    def eval_v(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.v is None:
            return np.zeros((n, self.d))
        return np.stack([_eval_checked(fn, x, f"v[{j}]") for j, fn in enumerate(self.v)], axis=-1)

    def eval_h(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.h is None:
            return np.zeros((n, self.d, self.d, self.m))
        out = np.empty((n, self.d, self.d, self.m))
        for i in range(self.d):
            for j in range(self.d):
                for l in range(self.m):
                    out[:, i, j, l] = _eval_checked(self.h[i][j][l], x, f"h[{i}][{j}][{l}]")
        return out

    def eval_dij(self, x: np.ndarray) -> np.ndarray:
        """Coupling between diffusion columns and the noise loading.

        Entry (i, j) is the m-vector (sigma_col_i * v_j + sigma_col_j * v_i)/2;
        it shifts the covariation loading of the state once the kernel's
        noise term is absorbed into the driver.
        """
        sig = self.eval_sigma(x)  # (n, m, d)
        v = self.eval_v(x)        # (n, d)
        a = np.einsum("nli,nj->nijl", sig, v)
        return 0.5 * (a + np.swapaxes(a, 1, 2))

    def eval_h_effective(self, x: np.ndarray) -> np.ndarray:
        """h - d_ij: the covariation drift seen by the valuation PDE."""
        return self.eval_h(x) - self.eval_dij(x)

    def has_generic_drivers(self) -> bool:
        return self.f is not None or self.g is not None


def derived_dij(model: ModelSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Return the map x -> d_ij(x) with shape (n, d, d, m).

    The output is symmetric in (i, j) by construction.
    """
    return model.eval_dij


# ---------------------------------------------------------------------------
# assumption checking


@dataclass(frozen=True)
class AssumptionReport:
    """Finite-sample estimates of the regularity/dissipativity constants.

    ``clauses`` records pass/fail for: (i) symmetry of h and k, (ii) finite
    Lipschitz-type constants, (iii) strict dissipativity eta_hat > 0,
    (iv) positive gap between eta_hat and the diffusion-nonlinearity price.
    """

    m: int
    d: int
    n_points: int
    n_pairs: int
    c1: float
    c_sigma: float
    m_sigma: float
    eta_hat: float
    gap: float
    symmetry_dev: float
    clauses: dict
    box: tuple

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "n_points": self.n_points,
            "n_pairs": self.n_pairs,
            "c1": self.c1,
            "c_sigma": self.c_sigma,
            "m_sigma": self.m_sigma,
            "eta_hat": self.eta_hat,
            "gap": self.gap,
            "symmetry_dev": self.symmetry_dev,
            "clauses": dict(self.clauses),
            "box": [list(bb) for bb in self.box],
            "passed": self.passed,
        }


def _sample_box(box, nodes) -> np.ndarray:
    axes = [np.linspace(lo, hi, int(n)) for (lo, hi), n in zip(box, nodes)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def check_assumptions(model: ModelSpec, box, nodes) -> AssumptionReport:
    """Estimate regularity and dissipativity constants over a sample box.

    Args:
        model: the model to diagnose.
        box: sequence of (lo, hi) per state coordinate.
        nodes: sample count per coordinate (>= 10 each).

    The Lipschitz-type constant ``c1`` aggregates difference quotients of
    b, r, k, the symmetrized product v_i v_j, h and d_ij; ``c_sigma`` and
    ``m_sigma`` bound the diffusion's variation and size.  ``eta_hat`` is
    the worst-case dissipativity rate: the most adverse value over sample
    pairs of

        -[ G( (Dsig)^T (Dsig) + 2 <Dx, D(h - d)> ) + <Dx, Db> ] / |Dx|^2.

    The gap subtracts the nonlinearity price
    (1 + sig_hi^2)/2 * (c_sigma d + 4 sqrt(2 c_sigma c1 d sig_hi m_sigma / sig_lo)).
    """
    box = [tuple(map(float, bb)) for bb in box]
    if len(box) != model.m:
        raise ShapeError(f"box has {len(box)} axes, model state dimension is {model.m}")
    nodes = [int(n) for n in (nodes if isinstance(nodes, (list, tuple)) else [nodes] * model.m)]
    if any(n < 10 for n in nodes):
        raise ShapeError("assumption sampling needs at least 10 nodes per axis")

    x = _sample_box(box, nodes)
    n = x.shape[0]

    bval = model.eval_b(x)
    sig = model.eval_sigma(x)
    rval = model.eval_r(x)
    kval = model.eval_k(x)
    vval = model.eval_v(x)
    hval = model.eval_h(x)
    dval = model.eval_dij(x)
    htil = hval - dval
    vv = np.einsum("ni,nj->nij", vval, vval)

    sym_dev = 0.0
    if model.d > 1:
        sym_dev = max(
            float(np.max(np.abs(hval - np.swapaxes(hval, 1, 2)))),
            float(np.max(np.abs(kval - np.swapaxes(kval, 1, 2)))),
        )
    clause_i = sym_dev <= 1e-12

    ii, jj = np.triu_indices(n, k=1)
    if ii.size > _PAIR_CAP:
        stride = int(np.ceil(ii.size / _PAIR_CAP))
        ii, jj = ii[::stride], jj[::stride]

    dx = x[ii] - x[jj]
    dist = np.linalg.norm(dx, axis=1)
    keep = dist > 0.0
    ii, jj, dx, dist = ii[keep], jj[keep], dx[keep], dist[keep]

    def _pair_norm(arr):  # L2 over all trailing axes of the difference
        diff = arr[ii] - arr[jj]
        return np.sqrt(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1))

    c1_num = (
        _pair_norm(bval)
        + np.abs(rval[ii] - rval[jj])
        + np.sum(np.abs(kval[ii] - kval[jj]).reshape(ii.size, -1), axis=1)
        + 0.5 * np.sum(np.abs(vv[ii] - vv[jj]).reshape(ii.size, -1), axis=1)
        + np.sum(np.abs(hval[ii] - hval[jj]).reshape(ii.size, -1), axis=1)
        + np.sum(np.abs(dval[ii] - dval[jj]).reshape(ii.size, -1), axis=1)
    )
    c1 = float(np.max(c1_num / dist))
    c_sigma = float(np.max(_pair_norm(sig) / dist))
    m_sigma = float(np.max(np.sqrt(np.sum(sig.reshape(n, -1) ** 2, axis=1))))

    dsig = sig[ii] - sig[jj]                       # (P, m, d)
    gram = np.einsum("pli,plj->pij", dsig, dsig)   # (Dsig)^T (Dsig), d x d PSD
    dhtil = htil[ii] - htil[jj]                    # (P, d, d, m)
    cross = 2.0 * np.einsum("pl,pijl->pij", dx, dhtil)
    mat = gram + 0.5 * (cross + np.swapaxes(cross, 1, 2))
    gvals, _ = g_value_batch(mat, model.uncertainty)
    drift_pair = np.einsum("pl,pl->p", dx, bval[ii] - bval[jj])
    eta_hat = float(np.min(-(gvals + drift_pair) / dist**2))

    sig_lo2, sig_hi2 = model.uncertainty.lo, model.uncertainty.hi
    if model.uncertainty.kind == "finite":
        from .gcore import ellipticity_constants

        sig_lo2, sig_hi2 = ellipticity_constants(model.uncertainty)
    sig_lo, sig_hi = math.sqrt(sig_lo2), math.sqrt(sig_hi2)
    price = 0.5 * (1.0 + sig_hi2) * (
        c_sigma * model.d
        + 4.0 * math.sqrt(2.0 * c_sigma * c1 * model.d * sig_hi * m_sigma / sig_lo)
    )
    gap = eta_hat - price

    clause_ii = all(map(math.isfinite, (c1, c_sigma, m_sigma)))
    clauses = {
        "i": bool(clause_i),
        "ii": bool(clause_ii),
        "iii": bool(eta_hat > 0.0),
        "iv": bool(gap > 0.0),
    }
    return AssumptionReport(
        m=model.m,
        d=model.d,
        n_points=n,
        n_pairs=int(ii.size),
        c1=c1,
        c_sigma=c_sigma,
        m_sigma=m_sigma,
        eta_hat=eta_hat,
        gap=float(gap),
        symmetry_dev=sym_dev,
        clauses=clauses,
        box=tuple(box),
    )


def truncation_level(
    mu: float,
    eta: float,
    c_sigma: float,
    c3: float,
    c_phi: float,
    sig_hi: float,
    sig_lo: float,
    m_sigma: float,
) -> float:
    """Gradient cap M for taming quadratic terms in the valuation PDE.

    M = (eta + mu - (1+sig_hi^2) c_sigma c3
         + 4 c_phi (1+sig_hi^2) c_sigma c3 sig_hi m_sigma / sig_lo)
        / (4 (1+sig_hi^2) c_sigma c3).

    When ``c_sigma * c3 == 0`` the quadratic term needs no taming and the
    level is +inf.  Exact numerator cancellation gives the boundary value 0;
    a negative numerator signals that the dissipativity margin is too small
    for a meaningful cap.
    """
    prod = c_sigma * c3
    if prod == 0.0:
        return math.inf
    if prod < 0.0:
        raise DomainError(f"c_sigma * c3 must be nonnegative, got {prod}")
    if sig_lo <= 0.0:
        raise DomainError(f"sig_lo must be positive, got {sig_lo}")
    one_plus = 1.0 + sig_hi**2
    denom = 4.0 * one_plus * prod
    if denom <= 0.0:
        raise DomainError(f"denominator 4(1+sig_hi^2) c_sigma c3 = {denom} is not positive")
    numer = eta + mu - one_plus * prod + 4.0 * c_phi * one_plus * prod * sig_hi * m_sigma / sig_lo
    if numer < 0.0:
        raise DomainError(
            f"numerator {numer} is negative: eta + mu = {eta + mu} too small "
            "against the quadratic-term price"
        )
    return numer / denom


# ---------------------------------------------------------------------------
# consumption-equilibrium constructor


class LogUtility:
    """u(c) = ln c."""

    def derivatives(self, w: float) -> tuple[float, float, float]:
        if w <= 0.0:
            raise DomainError(f"log utility needs positive consumption, got {w}")
        return 1.0 / w, -1.0 / w**2, 2.0 / w**3


class PowerUtility:
    """Constant relative risk aversion gamma > 0 (gamma = 1 is log)."""

    def __init__(self, gamma: float):
        self.gamma = float(gamma)
        if self.gamma <= 0.0:
            raise DomainError(f"risk aversion must be positive, got {gamma}")

    def derivatives(self, w: float) -> tuple[float, float, float]:
        if w <= 0.0:
            raise DomainError(f"power utility needs positive consumption, got {w}")
        g = self.gamma
        return w**-g, -g * w ** (-g - 1.0), g * (g + 1.0) * w ** (-g - 2.0)


class CustomUtility:
    """Derivatives supplied directly as coefficient functions of consumption."""

    def __init__(self, uprime, udprime, utprime):
        self.uprime = as_coefficient(uprime)
        self.udprime = as_coefficient(udprime)
        self.utprime = as_coefficient(utprime)

    def derivatives(self, w: float) -> tuple[float, float, float]:
        return (self.uprime.at([w]), self.udprime.at([w]), self.utprime.at([w]))


@dataclass(frozen=True)
class EquilibriumSpec:
    """Consumption equilibrium inputs: utility, endowment dynamics, patience.

    ``endowment_vol`` has one entry per noise coordinate.  ``beta`` is the
    subjective discount rate and must be positive.
    """

    utility: object
    endowment_drift: CoefficientFn
    endowment_vol: tuple
    beta: float

    @classmethod
    def build(cls, utility, endowment_drift, endowment_vol, beta: float) -> "EquilibriumSpec":
        beta = float(beta)
        if beta <= 0.0:
            raise DomainError(f"discount rate beta must be positive, got {beta}")
        vol = tuple(as_coefficient(s) for s in (
            endowment_vol if isinstance(endowment_vol, (list, tuple)) else [endowment_vol]
        ))
        return cls(
            utility=utility,
            endowment_drift=as_coefficient(endowment_drift),
            endowment_vol=vol,
            beta=beta,
        )


@dataclass(frozen=True)
class EquilibriumPoint:
    """Equilibrium rate and loadings at one endowment level.

    ``portfolio`` maps an inverse-covariance-like d x d matrix to the
    hedge vector proportional to it.

    Note: the rate formula below treats the endowment drift and volatility
    as level coefficients exactly as supplied.  A dimensional-consistency
    argument for proportional (per-unit-of-endowment) coefficients would
    insert extra powers of the endowment level; callers wanting that
    convention should rescale their inputs (see README).
    """

    rate: float
    risk_load: np.ndarray
    portfolio: Callable[[np.ndarray], np.ndarray]


def equilibrium_model(spec: EquilibriumSpec, w: float) -> EquilibriumPoint:
    """Rate, noise loading, and portfolio builder at endowment level w.

    rate = u'''(w) <sigma, sigma> / 2 - (u''/u')(w) b(w) - beta
    risk_load = -(u''/u')(w) * w * sigma(w)
    portfolio(eta) = -(u''/u')(w) * w * (eta @ sigma(w))
    """
    up, upp, uppp = spec.utility.derivatives(float(w))
    if up <= 0.0:
        raise DomainError(f"marginal utility must be positive at w = {w}, got {up}")
    if upp >= 0.0:
        raise DomainError(f"utility must be strictly concave at w = {w}, got u'' = {upp}")
    ra = -upp / up  # positive by the checks above
    bw = spec.endowment_drift.at([w])
    sig = np.array([s.at([w]) for s in spec.endowment_vol])
    rate = 0.5 * uppp * float(sig @ sig) + ra * bw - spec.beta
    risk_load = ra * float(w) * sig

    def portfolio(eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (sig.size, sig.size):
            raise ShapeError(f"portfolio matrix must be {(sig.size, sig.size)}, got {eta.shape}")
        return ra * float(w) * (eta @ sig)

    return EquilibriumPoint(rate=float(rate), risk_load=risk_load, portfolio=portfolio)
