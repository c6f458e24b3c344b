"""Continuum chaos objects of the pinning model and their second moments.

The limit kernels ``phi_k``, the partially integrated kernels
``psi_{m,k}``, their traces and ``|H|``-inner products, closed-form
simplex integrals, truncation bounds and the assembled chaos series for the
second moments of the Skorohod and Stratonovich limits.

Integrals over ``[0,1]^d`` with integrable power singularities are estimated
by importance sampling with explicit proposal densities:

* *anchor* proposal for a new coordinate: pick an anchor uniformly among 0
  and the points already placed, then step by ``Beta(alpha, 1)`` (signed,
  except from 0). Its density matches the ``|x - a|^(alpha - 1)`` poles
  of ``phi``;
* *jitter* proposal for the partner of a kernel pair: add a signed
  ``Beta(e, 1)`` step with density ``(e/2)|x|^(e-1)`` on ``[-1, 1]``, with
  ``e = 2H - 1`` for ``|t - t'|^(2H-2)`` and ``e = alpha + 2H - 2`` inside a
  trace.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ._rng import stream
from .errors import DomainError, ProposalMismatch, SingularPoint
from .renewal import Regime
from .wick import GridFunction

__all__ = [
    "RegimeKernel",
    "MCSpec",
    "ChaosSeriesResult",
    "TraceResult",
    "phi_k",
    "phi_k_conditioned",
    "phi_integral",
    "dirichlet_moment",
    "dirichlet_moment_mc",
    "l1h_norm_phi",
    "psi_mk",
    "psi_11_exact",
    "inner_product_psi",
    "trace_norm2",
    "trace_psi",
    "trace1_phi2_exact",
    "hnorm2_phi1_exact",
    "trace_bound",
    "hu_meyer_coefficient",
    "skorohod_tail_bound",
    "series_summable",
    "skorohod_summability",
    "stratonovich_summability",
    "calibrate_C",
    "second_moment_skorohod",
    "second_moment_stratonovich",
]

STRAT_MAX_M = 4


@dataclass(frozen=True)
class RegimeKernel:
    """Regime data of the limit kernels.

    ``mean_inverse`` is ``1 / E[tau_1]`` in the finite-mean regime and 1 in
    the marginal one; it is unused for ``SubUnit``.
    """

    regime: Regime
    alpha: float
    mean_inverse: float = 1.0

    @property
    def C_alpha(self):
        a = self.alpha
        return a * math.sin(math.pi * a) / math.pi

    @classmethod
    def sub_unit(cls, alpha):
        if not 0 < alpha < 1:
            raise DomainError("SubUnit regime needs 0 < alpha < 1")
        return cls(Regime.SUB_UNIT, float(alpha))

    @classmethod
    def from_law(cls, law):
        if law.regime is Regime.FINITE_MEAN:
            return cls(law.regime, law.alpha, 1.0 / law.mean)
        return cls(law.regime, law.alpha, 1.0)

    @property
    def constant(self):
        """Per-point value of ``phi`` outside the SubUnit regime."""
        return self.mean_inverse


@dataclass
class MCSpec:
    """Monte Carlo settings for the chaos integrals."""

    nodes: int = 20000
    ess_floor: float = 0.01
    chunk: int = 50000

    def __post_init__(self):
        if self.nodes < 1000:
            raise DomainError("Monte Carlo chaos integrals need at least 1000 nodes")


@dataclass
class ChaosSeriesResult:
    """Truncated chaos series with per-term table and rigorous tail budget."""

    beta_hat: float
    h_hat: float
    R: int
    terms: dict = field(default_factory=dict)
    tail_bound: float = 0.0
    value: float = 0.0
    se: float = 0.0
    C: float = math.nan
    kind: str = "skorohod"
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_uncertainty(self):
        return self.se + self.tail_bound

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "k", "kprime", "value", "se"])
            for (m, k, kp), (v, s) in sorted(self.terms.items()):
                w.writerow([m, k, kp, f"{v:.17g}", f"{s:.17g}"])

    def summary(self):
        return {
            "kind": self.kind,
            "beta_hat": self.beta_hat,
            "h_hat": self.h_hat,
            "R": self.R,
            "value": self.value,
            "se": self.se,
            "tail_bound": self.tail_bound,
            "calibrated_C": self.C,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# kernels


def _log_phi_sorted(pts, alpha, C):
    """``log phi`` for an array of points (..., k) in the SubUnit regime."""
    s = np.sort(pts, axis=-1)
    gaps = np.diff(s, axis=-1, prepend=0.0)
    with np.errstate(divide="ignore"):
        return s.shape[-1] * math.log(C) + (alpha - 1.0) * np.sum(np.log(gaps), axis=-1), s


def phi_k(points, rk):
    """Limit kernel ``phi_k`` at the given points (last axis = coordinates)."""
    t = np.asarray(points, dtype=float)
    k = t.shape[-1] if t.ndim else 0
    if k == 0:
        return 1.0
    if rk.regime is not Regime.SUB_UNIT:
        return rk.constant ** k * np.ones(t.shape[:-1]) if t.ndim > 1 else rk.constant ** k
    if np.any((t <= 0) | (t >= 1)):
        raise DomainError("phi_k needs points in (0, 1)")
    lp, s = _log_phi_sorted(t, rk.alpha, rk.C_alpha)
    if np.any(np.diff(s, axis=-1) == 0):
        raise SingularPoint("phi_k is singular at coinciding points")
    out = np.exp(lp)
    return out if t.ndim > 1 else float(out)


def phi_k_conditioned(points, rk):
    """Kernel of the conditioned limit: ``phi_k`` times ``(1 - t_max)^(alpha-1)``."""
    t = np.asarray(points, dtype=float)
    k = t.shape[-1] if t.ndim else 0
    base = phi_k(t, rk)
    if k == 0 or rk.regime is not Regime.SUB_UNIT:
        return base
    top = np.max(t, axis=-1)
    if np.any(top >= 1):
        raise SingularPoint("conditioned kernel is singular at t = 1")
    return base * (1.0 - top) ** (rk.alpha - 1.0)


def dirichlet_moment(exponents, t=1.0):
    """``int_{0<s_1<...<s_m<t} prod (s_i - s_{i-1})^{a_i} ds``.

    Equals ``prod Gamma(1 + a_i) / Gamma(m + sum a + 1) * t^(m + sum a)``.
    """
    a = np.asarray(exponents, dtype=float).ravel()
    if np.any(a <= -1):
        raise DomainError("Dirichlet exponents must exceed -1")
    m = a.size
    lg = float(np.sum(gammaln(1.0 + a)) - gammaln(m + a.sum() + 1.0))
    return math.exp(lg) * t ** (m + a.sum())


def dirichlet_moment_mc(exponents, t, nodes, rng):
    """Stick-breaking Monte Carlo estimate of :func:`dirichlet_moment`.

    Gaps are drawn left to right as ``g_i = r_{i-1} V_i`` with
    ``V_i ~ Beta(1 + a_i, 1)`` and ``r_i`` the remaining length, so the
    weight ``prod r_{i-1}^(1 + a_i) / (1 + a_i)`` is bounded.
    Returns ``(mean, se)``.
    """
    a = np.asarray(exponents, dtype=float).ravel()
    if np.any(a <= -1):
        raise DomainError("Dirichlet exponents must exceed -1")
    r = np.full(nodes, float(t))
    logw = np.zeros(nodes)
    for ai in a:
        logw += (1.0 + ai) * np.log(r) - math.log1p(ai)
        V = rng.random(nodes) ** (1.0 / (1.0 + ai))
        r = r * (1.0 - V)
    w = np.exp(logw)
    mean = float(w.mean())
    if np.ptp(w) <= 1e-13 * abs(mean):
        # a single gap gives a constant weight
        return mean, 0.0
    return mean, float(w.std(ddof=1) / math.sqrt(nodes))


def phi_integral(k, rk):
    """``int_{[0,1]^k} phi_k = psi_{0,k}``, exactly."""
    if k == 0:
        return 1.0
    if rk.regime is not Regime.SUB_UNIT:
        return rk.constant ** k
    a = rk.alpha
    return math.exp(math.lgamma(k + 1) + k * math.log(rk.C_alpha)
                    + k * math.lgamma(a) - math.lgamma(k * a + 1))


def l1h_norm_phi(m, rk, H):
    """``||phi_m||_{L^{1/H}([0,1]^m)}`` in closed form."""
    if rk.regime is not Regime.SUB_UNIT:
        return rk.constant ** m
    a = rk.alpha
    if not a + H > 1:
        raise DomainError("the L^{1/H} norm of phi_m is finite only when alpha + H > 1")
    e = (a - 1.0) / H
    lg = (math.lgamma(m + 1) + (m / H) * math.log(rk.C_alpha)
          + m * math.lgamma(1.0 + e) - math.lgamma(m * (1.0 + e) + 1.0))
    return math.exp(H * lg)


def psi_11_exact(t, rk):
    """Closed form of ``psi_{1,1}(t) = int_0^1 phi_2(t, s) ds`` (SubUnit)."""
    a, C = rk.alpha, rk.C_alpha
    t = np.asarray(t, dtype=float)
    B = math.exp(2 * math.lgamma(a) - math.lgamma(2 * a))
    return C * C * (B * t ** (2 * a - 1) + t ** (a - 1) * (1 - t) ** a / a)


def hnorm2_phi1_exact(rk, H):
    """``||phi_1||^2_H = C^2 2 B(alpha, 2H-1) / (2 alpha + 2H - 2)``."""
    a, C = rk.alpha, rk.C_alpha
    B = math.exp(math.lgamma(a) + math.lgamma(2 * H - 1) - math.lgamma(a + 2 * H - 1))
    return C * C * 2 * B / (2 * a + 2 * H - 2)


def trace1_phi2_exact(rk, H):
    """``Tr^1 phi_2 = 2 C^2 Gamma(alpha) Gamma(alpha + 2H - 2) / Gamma(2 alpha + 2H - 1)``."""
    a = rk.alpha
    return 2 * rk.C_alpha ** 2 * dirichlet_moment([a - 1, a + 2 * H - 3], 1.0)


def trace_bound(m, alpha, H, with_constant=None):
    """Bound ``(2m)! Gamma(a)^m Gamma(a+2H-2)^m / Gamma(m(2H+2a-2)+1)`` on ``||Tr^j phi_m||^2``.

    With ``with_constant = C_alpha`` the factor ``C_alpha^(2m)`` carried by
    ``phi_m`` is included, which gives a tighter bound that is still valid.
    """
    return math.exp(_log_trace_bound(m, alpha, H, with_constant))


def _log_trace_bound(m, alpha, H, with_constant=None):
    if not alpha + 2 * H > 2:
        raise DomainError("traces are finite only when alpha + 2H > 2")
    lg = (math.lgamma(2 * m + 1) + m * math.lgamma(alpha) + m * math.lgamma(alpha + 2 * H - 2)
          - math.lgamma(m * (2 * H + 2 * alpha - 2) + 1))
    if with_constant is not None:
        lg += 2 * m * math.log(with_constant)
    return lg


def hu_meyer_coefficient(n, j):
    """``n! / (j! (n-2j)! 2^j)`` as an exact integer."""
    n, j = int(n), int(j)
    if not 0 <= j <= n // 2:
        raise DomainError("need 0 <= j <= n/2")
    return math.factorial(n) // (math.factorial(j) * math.factorial(n - 2 * j) * 2 ** j)


def _log_skorohod_shape(n, alpha, H):
    return 2 * H * (math.lgamma(n + 1) - math.lgamma(n * (alpha + H - 1) / H + 1))


def skorohod_tail_bound(m, k, alpha, H, C):
    """``C^(m+k) [(m+k)!]^(2H) / Gamma((m+k)(alpha+H-1)/H + 1)^(2H)``."""
    if not alpha + H > 1:
        raise DomainError("the bound needs alpha + H > 1")
    n = m + k
    return math.exp(n * math.log(C) + _log_skorohod_shape(n, alpha, H)) if n else 1.0


def series_summable(a, b, c):
    """Hypothesis check for ``sum A^(m+k) m^(ak) / (m^(bm) k^(ck)) < inf``: positivity and ``c > a``."""
    return bool(a > 0 and b > 0 and c > 0 and c > a)


def skorohod_summability(alpha):
    """Both families of dominating terms in the Skorohod tail are summable."""
    first = series_summable(1 - alpha, alpha - 0.5, 1.0)
    second = series_summable(1 - alpha, alpha, 0.5)
    return first and second


def stratonovich_summability(alpha, H):
    zeta = 4 - 2 * H - 2 * alpha
    return series_summable(zeta, 1 - zeta, 2.0) and series_summable(zeta, 2 - zeta, 1.0)


# ---------------------------------------------------------------------------
# importance sampling


def _anchor_draw(points, alpha, rng):
    """New coordinate by the anchor proposal; returns the draws."""
    n, c = points.shape
    idx = rng.integers(0, c + 1, size=n)
    step = rng.random(n) ** (1.0 / alpha)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    anchor = np.where(idx == 0, 0.0, points[np.arange(n), np.maximum(idx - 1, 0)] if c else 0.0)
    sign = np.where(idx == 0, 1.0, sign)
    return anchor + sign * step


def _anchor_logdens(y, points, alpha):
    """Log density of the anchor proposal at ``y`` given existing ``points``."""
    n, c = points.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where((y > 0) & (y <= 1), alpha * np.abs(y) ** (alpha - 1), 0.0)
        if c:
            d = np.abs(y[:, None] - points)
            dens = dens + np.sum(np.where(d <= 1, 0.5 * alpha * d ** (alpha - 1), 0.0), axis=1)
        return np.log(dens / (c + 1))


def _jitter(n, e, rng):
    step = rng.random(n) ** (1.0 / e)
    return np.where(rng.random(n) < 0.5, -step, step)


def _jitter_logdens(d, e):
    with np.errstate(divide="ignore"):
        return math.log(e / 2) + (e - 1) * np.log(np.abs(d))


class _Side:
    """One side of a bilinear integral: ``int phi_{p+2j+k}(t, s, x) prod K(s-pairs) ds dx``."""

    def __init__(self, rk, H, j, k):
        self.rk, self.H, self.j, self.k = rk, H, j, k
        self.e_pair = rk.alpha + 2 * H - 2 if j else None

    def sample(self, fixed, rng):
        """Returns ``(log integrand / proposal)`` for each row of ``fixed``."""
        rk, H = self.rk, self.H
        a = rk.alpha
        n = fixed.shape[0]
        pts = fixed
        logq = np.zeros(n)
        logK = np.zeros(n)
        for _ in range(self.j):
            s1 = _anchor_draw(pts, a, rng)
            logq += _anchor_logdens(s1, pts, a)
            d = _jitter(n, self.e_pair, rng)
            s2 = s1 + d
            logq += _jitter_logdens(d, self.e_pair)
            with np.errstate(divide="ignore"):
                logK += (2 * H - 2) * np.log(np.abs(d))
            pts = np.column_stack([pts, s1, s2])
        for _ in range(self.k):
            x = _anchor_draw(pts, a, rng)
            logq += _anchor_logdens(x, pts, a)
            pts = np.column_stack([pts, x])
        inside = np.all((pts > 0) & (pts < 1), axis=1)
        lphi, _ = _log_phi_sorted(np.where(inside[:, None], pts, 0.5), a, rk.C_alpha)
        lw = np.where(inside, lphi + logK - logq, -np.inf)
        return lw


def _finish(lw, nodes, ess_floor=0.01):
    w = np.exp(lw)
    w = np.where(np.isfinite(w), w, 0.0)
    s1, s2 = w.sum(), np.dot(w, w)
    ess = s1 * s1 / s2 if s2 > 0 else 0.0
    if not ess >= ess_floor * nodes:
        raise ProposalMismatch(ess, nodes)
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(nodes)), float(ess)


def _check_subunit_mc(rk, H, mc_spec):
    if not rk.alpha + H > 1:
        raise DomainError("the chaos kernels need alpha + H > 1 (H in (1/2,1), alpha + H > 1)")


def psi_mk(points, k, rk, mc_spec=None, rng=None):
    """``psi_{m,k}(t) = int_{[0,1]^k} phi_{m+k}(t, s) ds``; returns ``(value, se)``."""
    t = np.atleast_1d(np.asarray(points, dtype=float))
    m = t.size
    if rk.regime is not Regime.SUB_UNIT:
        return rk.constant ** (m + k), 0.0
    if k == 0:
        return (phi_k(t, rk) if m else 1.0), 0.0
    if m == 0:
        return phi_integral(k, rk), 0.0
    mc = mc_spec or MCSpec()
    rng = rng if rng is not None else np.random.default_rng(0)
    side = _Side(rk, None, 0, k)
    lw = side.sample(np.repeat(t[None, :], mc.nodes, axis=0), rng)
    v, se, _ = _finish(lw, mc.nodes, mc.ess_floor)
    return v, se


def _constant_regime_norm(m, j, k, kp, rk, H):
    c = rk.constant
    kern = 1.0 / (H * (2 * H - 1))
    p = m - 2 * j
    return c ** (2 * m + k + kp) * kern ** (2 * j + p)


def trace_norm2(m, k, j, rk, H, mc_spec=None, rng=None, kprime=None):
    """``<Tr^j psi_{m,k}, Tr^j psi_{m,k'}>`` over ``|H|^{tensor (m-2j)}``; returns ``(value, se)``.

    With ``kprime = None`` the squared norm (``k' = k``) is estimated.
    """
    kp = k if kprime is None else kprime
    if not 0 <= 2 * j <= m:
        raise DomainError("need 0 <= j <= m/2")
    if rk.regime is not Regime.SUB_UNIT:
        return _constant_regime_norm(m, j, k, kp, rk, H), 0.0
    _check_subunit_mc(rk, H, mc_spec)
    if j > 0 and not rk.alpha + 2 * H > 2:
        raise DomainError("traces are finite only when alpha + 2H > 2")
    if m == 0:
        return phi_integral(k, rk) * phi_integral(kp, rk), 0.0
    mc = mc_spec or MCSpec()
    rng = rng if rng is not None else np.random.default_rng(0)
    roles = _Roles(m - 2 * j, j, k, kp)
    lw = []
    done = 0
    while done < mc.nodes:
        n = min(mc.chunk, mc.nodes - done)
        lw.append(roles.sample(rk, H, n, rng))
        done += n
    v, se, _ = _finish(np.concatenate(lw), mc.nodes, mc.ess_floor)
    return v, se


class _Roles:
    """Role-aware Dirichlet proposal for ``<Tr^j psi_{m,k}, Tr^j psi_{m,k'}>``.

    The ``2m + k + k'`` coordinates (free ``t`` and ``t'``, trace pairs on
    both sides, integrated ``x`` and ``x'``) are placed in a uniformly random
    order; the spacings are Dirichlet with an exponent per gap chosen from
    the roles of its two endpoints: ``alpha - 1`` when both belong to the
    same side, ``2H - 2`` when they are kernel partners, and the sum when
    both apply. The proposal density thus mirrors every local singularity
    of the integrand.
    """

    def __init__(self, p, j, k, kp):
        side, partner = [], []
        # left: t_1..t_p, s pairs, x ; right: t'_1..t'_p, s' pairs, x'
        nl = p + 2 * j + k
        for sd, kk in ((0, k), (1, kp)):
            off = 0 if sd == 0 else nl
            for i in range(p):
                side.append(sd)
                partner.append(nl + i if sd == 0 else i)
            for i in range(j):
                a, b = off + p + 2 * i, off + p + 2 * i + 1
                side += [sd, sd]
                partner += [b, a]
            for _ in range(kk):
                side.append(sd)
                partner.append(-1)
        self.p, self.j, self.nl = p, j, nl
        self.side = np.array(side)
        self.partner = np.array(partner)
        self.n = len(side)
        self.lognfact = math.lgamma(self.n + 1)

    def sample(self, rk, H, nodes, rng):
        a = rk.alpha
        n = self.n
        perm = np.argsort(rng.random((nodes, n)), axis=1)
        sd = self.side[perm]
        same = sd[:, 1:] == sd[:, :-1]
        part = self.partner[perm[:, :-1]] == perm[:, 1:]
        e = np.empty((nodes, n))
        e[:, 0] = a
        e[:, 1:] = 1.0 + (a - 1.0) * same + (2 * H - 2) * part
        G = rng.standard_gamma(np.concatenate([e, np.ones((nodes, 1))], axis=1))
        tot = G.sum(axis=1)
        gaps = G[:, :n] / tot[:, None]
        pos = np.cumsum(gaps, axis=1)
        with np.errstate(divide="ignore"):
            lg = np.log(gaps)
        logdens = (gammaln(e.sum(axis=1) + 1.0)
                   - gammaln(e).sum(axis=1) + ((e - 1.0) * lg).sum(axis=1))
        x = np.empty((nodes, n))
        np.put_along_axis(x, perm, pos, axis=1)
        nl, p, j = self.nl, self.p, self.j
        L, R = x[:, :nl], x[:, nl:]
        lphi_l, _ = _log_phi_sorted(L, a, rk.C_alpha)
        lphi_r, _ = _log_phi_sorted(R, a, rk.C_alpha)
        with np.errstate(divide="ignore"):
            lk = (2 * H - 2) * np.log(np.abs(L[:, :p] - R[:, :p])).sum(axis=1)
            for side in (L, R):
                for i in range(j):
                    lk += (2 * H - 2) * np.log(np.abs(side[:, p + 2 * i + 1] - side[:, p + 2 * i]))
        lw = lphi_l + lphi_r + lk + self.lognfact - logdens
        return np.where(np.isfinite(lw), lw, -np.inf)


def inner_product_psi(m, k, kprime, rk, H, mc_spec=None, rng=None):
    """``<psi_{m,k}, psi_{m,k'}>_{|H|^{tensor m}}``; returns ``(value, se)``."""
    if m == 0:
        return phi_integral(k, rk) * phi_integral(kprime, rk), 0.0
    return trace_norm2(m, k, 0, rk, H, mc_spec, rng, kprime=kprime)


@dataclass
class TraceResult:
    """Monte Carlo representation of ``Tr^j psi_{m,k}`` and its squared norm."""

    func: GridFunction
    norm2: float
    se: float


def trace_psi(m, k, j, rk, H, mc_spec=None, rng=None, N=16):
    """``Tr^j psi_{m,k}``: pointwise estimator wrapped as a GridFunction, plus its norm.

    The pointwise estimator integrates the ``2j`` paired coordinates and the
    ``k`` free ones by importance sampling at each query point.
    """
    if rk.regime is Regime.SUB_UNIT and not rk.alpha + 2 * H > 2:
        raise DomainError("traces are finite only when alpha + 2H > 2")
    mc = mc_spec or MCSpec()
    rng = rng if rng is not None else np.random.default_rng(0)
    norm2, se = trace_norm2(m, k, j, rk, H, mc, rng)
    p = m - 2 * j
    side = _Side(rk, H, j, k)
    nodes = mc.nodes

    def at(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(pts.shape[0])
        for i, row in enumerate(pts):
            if rk.regime is not Regime.SUB_UNIT:
                out[i] = _constant_regime_norm(m, j, k, k, rk, H) ** 0.5
                continue
            lw = side.sample(np.repeat(row[None, :], nodes, axis=0), rng)
            out[i] = _finish(lw, nodes, mc.ess_floor)[0]
        return out

    return TraceResult(GridFunction(m=max(p, 1), N=N, func=at), norm2, se)


# ---------------------------------------------------------------------------
# series assembly


def calibrate_C(rk, H, mc_spec=None, seed=0, max_order=6):
    """Smallest ``C`` making ``||psi_{m,k}||^2 + 3 SE <= C^(m+k) shape(m+k)`` for ``m+k <= max_order``.

    Returns ``(C, table)`` with ``table[(m,k)] = (norm2, se)``.
    """
    a = rk.alpha
    table = {}
    C = 0.0
    for n in range(1, max_order + 1):
        for m in range(0, n + 1):
            k = n - m
            v, se = inner_product_psi(m, k, k, rk, H, mc_spec, stream(seed, "calib", m, k))
            table[(m, k)] = (v, se)
            shape = math.exp(_log_skorohod_shape(n, a, H))
            C = max(C, ((v + 3 * se) / shape) ** (1.0 / n))
    return C, table


def _log_coeff(m, k, kp, beta_hat, h_hat):
    """log of ``beta^(2m) h^(k+k') / (m! k! k'!)``; ``None`` when zero."""
    if (beta_hat == 0 and m) or (h_hat == 0 and (k or kp)):
        return None
    lb = 2 * m * math.log(abs(beta_hat)) if m else 0.0
    lh = (k + kp) * math.log(abs(h_hat)) if (k + kp) else 0.0
    return lb + lh - math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(kp + 1)


def _skorohod_tail(beta_hat, h_hat, alpha, H, C, R, M_max=400):
    """Crude-but-rigorous budget for all ``(m,k,k')`` outside ``m, k, k' <= R``.

    Uses ``|<psi_{m,k}, psi_{m,k'}>| <= sqrt(B(m,k) B(m,k'))``.
    """
    total = 0.0
    for m in range(0, M_max + 1):
        if beta_hat == 0 and m:
            break
        lc = 2 * m * math.log(abs(beta_hat)) - math.lgamma(m + 1) if m else 0.0
        kmax = 0 if h_hat == 0 else M_max
        ks = np.arange(kmax + 1)
        la = np.array([
            (k * math.log(abs(h_hat)) if k else 0.0) - math.lgamma(k + 1)
            + 0.5 * (m + k) * math.log(C) + 0.5 * _log_skorohod_shape(m + k, alpha, H)
            for k in ks
        ])
        full = np.exp(la).sum()
        inner = np.exp(la[ks <= R]).sum() if m <= R else 0.0
        contrib = math.exp(lc) * (full * full - inner * inner)
        total += contrib
        if m > R + 5 and math.exp(lc) * full * full < 1e-300:
            break
    return total


def second_moment_skorohod(beta_hat, h_hat, rk, H, R=None, mc_spec=None, seed=0,
                           budget=1e-3, C=None, R_max=8):
    """Chaos series for ``E[tilde Z^2]`` of the Skorohod limit.

    ``sum_{m <= R} sum_{k, k' <= R} beta^(2m) h^(k+k') / (m! k! k'!) <psi_{m,k}, psi_{m,k'}>``.
    When ``R`` is None the smallest ``R`` whose tail budget is below
    ``budget`` is used.
    """
    a = rk.alpha
    if rk.regime is Regime.SUB_UNIT and not (a > 0.5 and a + H > 1):
        raise DomainError("the Skorohod series needs alpha > 1/2 and alpha + H > 1")
    mc = mc_spec or MCSpec()
    diagnostics = {}
    if rk.regime is Regime.SUB_UNIT:
        if C is None:
            C, calib = calibrate_C(rk, H, mc, seed)
            diagnostics["calibration"] = {f"{m},{k}": list(v) for (m, k), v in calib.items()}
        diagnostics["summable"] = skorohod_summability(a)
        if R is None:
            R = next((r for r in range(0, R_max + 1)
                      if _skorohod_tail(beta_hat, h_hat, a, H, C, r) < budget), R_max)
        tail = _skorohod_tail(beta_hat, h_hat, a, H, C, R)
    else:
        R = 8 if R is None else R
        C = math.nan
        tail = 0.0
    terms = {}
    value = 0.0
    var = 0.0
    kr = range(R + 1)
    for m in range(R + 1):
        for k in kr:
            for kp in kr:
                if kp < k:
                    continue
                lc = _log_coeff(m, k, kp, beta_hat, h_hat)
                if lc is None:
                    continue
                v, se = inner_product_psi(m, k, kp, rk, H, mc, stream(seed, "ip", m, k, kp))
                mult = 1 if k == kp else 2
                terms[(m, k, kp)] = (v, se)
                value += mult * math.exp(lc) * v
                var += (mult * math.exp(lc) * se) ** 2
    if rk.regime is not Regime.SUB_UNIT:
        # constant kernels sum to a product of exponentials; the remainder is exact
        c = rk.constant
        kern = 1.0 / (H * (2 * H - 1))
        tail = math.exp(2 * h_hat * c + beta_hat ** 2 * c * c * kern) - value
    return ChaosSeriesResult(beta_hat, h_hat, R, terms, tail, value, math.sqrt(var), C,
                             "skorohod", diagnostics)


def _strat_norm(m, k, rk, H, mc, seed):
    """``|||psi_{m,k}|||_m`` from trace norms; returns ``(value, se, parts)``."""
    tot, var = 0.0, 0.0
    parts = {}
    for j in range(m // 2 + 1):
        coef = math.factorial(m) ** 2 / (math.factorial(j) ** 2 * 4 ** j * math.factorial(m - 2 * j))
        v, se = trace_norm2(m, k, j, rk, H, mc, stream(seed, "tr", m, k, j))
        parts[j] = (v, se)
        tot += coef * v
        var += (coef * se) ** 2
    root = math.sqrt(max(tot, 0.0))
    se_root = math.sqrt(var) / (2 * root) if root > 0 else 0.0
    return root, se_root, parts


def second_moment_stratonovich(beta_hat, h_hat, rk, H, R=2, mc_spec=None, seed=0, M_max=200):
    """Upper bound for ``E[Z^2]`` of the Stratonovich limit.

    ``||Z||_2 <= |sum_k h^k/k! psi_{0,k}| + sum_{m>=1,k} beta^m h^k / (m! k!) |||psi_{m,k}|||_m``
    for ``m, k <= R``; outside that range ``|||psi_{m,k}|||_m^2`` is bounded by
    ``2^m (m+1)! Tr^m psi_{2m,2k}`` and the trace bound. The reported value
    is the square of the truncated sum; ``tail_bound`` is the increase of the
    square when the tail is added.
    """
    a = rk.alpha
    if H <= 0.5 or H >= 1 or (rk.regime is Regime.SUB_UNIT and not a + H > 1.5):
        raise DomainError("the Stratonovich series needs H in (1/2,1) and alpha + H > 3/2")
    if R > STRAT_MAX_M:
        raise DomainError(f"Stratonovich terms are limited to m <= {STRAT_MAX_M}")
    mc = mc_spec or MCSpec()
    terms = {}
    s0 = sum(h_hat ** k / math.factorial(k) * phi_integral(k, rk) for k in range(R + 1))
    S, var = abs(s0), 0.0
    for k in range(R + 1):
        terms[(0, k, k)] = (phi_integral(k, rk) ** 2, 0.0)
    for m in range(1, R + 1):
        if beta_hat == 0:
            break
        for k in range(R + 1):
            if h_hat == 0 and k:
                continue
            c = beta_hat ** m * h_hat ** k / (math.factorial(m) * math.factorial(k))
            v, se, _ = _strat_norm(m, k, rk, H, mc, seed)
            terms[(m, k, k)] = (v * v, 2 * v * se)
            S += c * v
            var += (c * se) ** 2
    # tail
    T = 0.0
    Ca = rk.C_alpha if rk.regime is Regime.SUB_UNIT else None
    for m in range(0, M_max + 1):
        for k in range(0, M_max + 1):
            if m <= R and k <= R:
                continue
            if (beta_hat == 0 and m) or (h_hat == 0 and k):
                continue
            lc = (m * math.log(abs(beta_hat)) if m else 0.0) + (k * math.log(abs(h_hat)) if k else 0.0)
            lc -= math.lgamma(m + 1) + math.lgamma(k + 1)
            if m == 0:
                lb = math.log(phi_integral(k, rk))
            else:
                n = m + k
                if rk.regime is Regime.SUB_UNIT:
                    lbt = 0.5 * _log_trace_bound(2 * n, a, H, with_constant=Ca)
                else:
                    lbt = 2 * n * math.log(rk.constant) + n * math.log(1 / (H * (2 * H - 1)))
                lb = 0.5 * (m * math.log(2) + math.lgamma(m + 2) + lbt)
            # a divergent tail is reported as an infinite budget
            T += math.exp(lc + lb) if lc + lb < 700 else math.inf
    zeta = 4 - 2 * H - 2 * a
    diagnostics = {"zeta": zeta, "summable": stratonovich_summability(a, H),
                   "norm_lower": S, "norm_tail": T}
    se = 2 * S * math.sqrt(var)
    return ChaosSeriesResult(beta_hat, h_hat, R, terms, (S + T) ** 2 - S * S, S * S, se,
                             math.nan, "stratonovich", diagnostics)
