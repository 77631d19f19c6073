"""Special functions behind the detector statistics.

The incomplete gamma function uses the usual series / continued-fraction
split; the non-central chi-square survival function and density are Poisson
mixtures of their central counterparts, which handles odd degrees of freedom
as well as even ones. A Marcum-Q evaluation is kept as an independent route
for even degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ive

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000

# Guard on 1 - sum(weights); the truncated Poisson mass itself is ~1e-20,
# the slack absorbs summation rounding.
_MIXTURE_TAIL = 1e-12
# Cap on elements per vectorized block (rows x mixture terms).
_BLOCK_ELEMS = 2_000_000


@dataclass(frozen=True)
class Chi2Spec:
    """Scaled (non-)central chi-square: sum of ``dof`` squared N(m_l, scale)."""

    dof: int
    scale: float
    noncentrality: float = 0.0

    def __post_init__(self):
        if int(self.dof) != self.dof or self.dof < 1:
            raise ValueError("degrees of freedom must be a positive integer")
        if not self.scale > 0:
            raise ValueError("scale (noise variance) must be positive")
        if np.any(np.asarray(self.noncentrality) < 0):
            raise ValueError("non-centrality must be non-negative")


def dilog(x):
    """Dilogarithm ``Li2(x) = sum_k x**k / k**2`` on ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)) or np.any(np.isnan(x)):
        raise ValueError("dilog is only defined here on [0, 1]")
    out = np.vectorize(_dilog_scalar, otypes=[float])(x)
    return float(out) if out.ndim == 0 else out


def _dilog_series(x: float) -> float:
    total, term, k = 0.0, 1.0, 0
    while True:
        k += 1
        term *= x
        inc = term / (k * k)
        total += inc
        if inc < 1e-17 * max(total, 1e-300) or k > 200:
            return total


def _dilog_scalar(x: float) -> float:
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return math.pi**2 / 6.0
    if x <= 0.5:
        return _dilog_series(x)
    # Euler reflection keeps the series argument below 1/2.
    return math.pi**2 / 6.0 - math.log(x) * math.log1p(-x) - _dilog_series(1.0 - x)


def _lower_series(s, x):
    """Regularized lower incomplete gamma by power series (use for x < s + 1)."""
    total = np.ones_like(x)
    term = np.ones_like(x)
    ap = s.copy()
    active = np.ones(x.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        ap = ap + 1.0
        term = np.where(active, term * x / ap, term)
        total = np.where(active, total + term, total)
        active &= np.abs(term) > np.abs(total) * _EPS
        if not active.any():
            break
    else:  # pragma: no cover - guarded by iteration cap
        raise ArithmeticError("incomplete gamma series did not converge")
    with np.errstate(divide="ignore"):
        log_pre = -x + s * np.log(x) - gammaln(s + 1.0)
    return np.exp(log_pre) * total


def _upper_cf(s, x):
    """Regularized upper incomplete gamma by modified Lentz continued fraction."""
    b = x + 1.0 - s
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b = b + 2.0
        d_new = an * d + b
        d_new = np.where(np.abs(d_new) < _TINY, _TINY, d_new)
        c_new = b + an / c
        c_new = np.where(np.abs(c_new) < _TINY, _TINY, c_new)
        d_new = 1.0 / d_new
        step = d_new * c_new
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        h = np.where(active, h * step, h)
        active &= np.abs(step - 1.0) > _EPS
        if not active.any():
            break
    else:  # pragma: no cover
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    return np.exp(-x + s * np.log(x) - gammaln(s)) * h


def reg_upper_gamma(s, x):
    """Regularized upper incomplete gamma ``Q(s, x) = Gamma(s, x) / Gamma(s)``.

    Broadcasts over ``s`` and ``x``; ``s > 0``, ``x >= 0``.
    """
    s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
    if np.any(~(s > 0)):
        raise ValueError("shape parameter must be positive")
    if np.any(~(x >= 0)):
        raise ValueError("argument must be non-negative")
    s = s.astype(float, copy=True)
    x = x.astype(float, copy=True)
    out = np.ones(x.shape)
    pos = x > 0
    use_series = pos & (x < s + 1.0)
    use_cf = pos & ~use_series
    if use_series.any():
        out[use_series] = 1.0 - _lower_series(s[use_series], x[use_series])
    if use_cf.any():
        out[use_cf] = _upper_cf(s[use_cf], x[use_cf])
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _gamma_log_density(s: float, x: float) -> float:
    """log of the Gamma(s, 1) density at x."""
    return (s - 1.0) * math.log(x) - x - math.lgamma(s)


def _wilson_hilferty(s: float, p: float) -> float:
    """Approximate x with Q(s, x) = p via the cube-root normal approximation."""
    from statistics import NormalDist

    z = NormalDist().inv_cdf(1.0 - p)
    t = 1.0 - 1.0 / (9.0 * s) + z / (3.0 * math.sqrt(s))
    return max(s * t**3, 1e-3 * s)


def reg_lower_gamma(s, x):
    """Regularized lower incomplete gamma ``P(s, x) = 1 - Q(s, x)``.

    Computed directly (not as ``1 - Q``) where the series applies, so it
    keeps full relative accuracy for small ``x``.
    """
    s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
    if np.any(~(s > 0)):
        raise ValueError("shape parameter must be positive")
    if np.any(~(x >= 0)):
        raise ValueError("argument must be non-negative")
    s = s.astype(float, copy=True)
    x = x.astype(float, copy=True)
    out = np.zeros(x.shape)
    pos = x > 0
    use_series = pos & (x < s + 1.0)
    use_cf = pos & ~use_series
    if use_series.any():
        out[use_series] = _lower_series(s[use_series], x[use_series])
    if use_cf.any():
        out[use_cf] = 1.0 - _upper_cf(s[use_cf], x[use_cf])
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def inv_reg_upper_gamma(s: float, p: float) -> float:
    """Solve ``Q(s, x) = p`` for ``x``.

    Newton iteration on ``log Q`` (or on ``log P`` when ``p > 1/2``, where
    ``Q`` is too close to one to carry information) inside a maintained
    bracket, falling back to bisection whenever a Newton step leaves it.
    """
    s = float(s)
    p = float(p)
    if not s > 0:
        raise ValueError("shape parameter must be positive")
    if not 0.0 < p <= 1.0:
        raise ValueError("probability must lie in (0, 1]")
    if p == 1.0:
        return 0.0
    lower = p > 0.5
    # f(x) = log(tail(x)) - log(target) is decreasing in x for both branches.
    if lower:
        log_t = math.log1p(-p)

        def f_and_slope(x):
            v = max(reg_lower_gamma(s, x), 1e-320)
            return log_t - math.log(v), -math.exp(_gamma_log_density(s, x)) / v
    else:
        log_t = math.log(p)

        def f_and_slope(x):
            v = max(reg_upper_gamma(s, x), 1e-320)
            return math.log(v) - log_t, -math.exp(_gamma_log_density(s, x)) / v

    lo, hi = 0.0, max(_wilson_hilferty(s, p), 1e-8)
    while f_and_slope(hi)[0] > 0.0:
        lo, hi = hi, 2.0 * hi + 1.0
    if lower:
        # Small-x start from P(s, x) ~ x**s / Gamma(s + 1).
        x0 = math.exp((log_t + math.lgamma(s + 1.0)) / s)
        x = x0 if lo < x0 < hi else hi
    else:
        x = hi
    for _ in range(400):
        fx, slope = f_and_slope(x)
        if fx == 0.0:
            return x
        if fx > 0.0:
            lo = x
        else:
            hi = x
        x_new = x - fx / slope if slope != 0.0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * x or hi - lo <= 1e-15 * hi:
            return x_new
        x = x_new
    raise ArithmeticError("inverse incomplete gamma did not converge")


def _poisson_upper_index(lam: float) -> int:
    """Index beyond which the Poisson(lam) mass is below the mixture tail."""
    return int(math.ceil(lam + 12.0 * math.sqrt(lam) + 40.0))


def _mixture_weights(lam, n_terms):
    """Poisson(lam) probabilities for j = 0..n_terms-1 along the last axis."""
    j = np.arange(n_terms)
    lam = lam[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = -lam + j * np.log(lam) - gammaln(j + 1.0)
    logw = np.where(lam == 0.0, np.where(j == 0, 0.0, -np.inf), logw)
    return np.exp(logw)


def _blocks(n: int, n_terms: int):
    step = max(1, _BLOCK_ELEMS // max(n_terms, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def noncentral_chi2_sf(x, dof: int, scale: float, noncentrality=0.0):
    """Survival function ``P{Y > x}`` of a scaled non-central chi-square.

    ``Y = sum_{l=1}^{dof} (nu_l + m_l)**2`` with ``nu_l ~ N(0, scale)`` and
    ``noncentrality = sum m_l**2``. Broadcasts over ``x`` and
    ``noncentrality``. With zero non-centrality this is exactly
    ``reg_upper_gamma(dof/2, x/(2*scale))``.
    """
    Chi2Spec(dof, scale)
    x, mu = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(noncentrality, dtype=float))
    if np.any(~(x >= 0)):
        raise ValueError("threshold must be non-negative")
    if np.any(~(mu >= 0)):
        raise ValueError("non-centrality must be non-negative")
    shape = x.shape
    y = (x / (2.0 * scale)).ravel()
    lam = (mu / (2.0 * scale)).ravel()
    a = dof / 2.0
    out = np.empty(y.shape)
    n_terms = _poisson_upper_index(float(lam.max())) if lam.size else 1
    for blk in _blocks(y.size, n_terms):
        yb, lb = y[blk], lam[blk]
        nb = _poisson_upper_index(float(lb.max()))
        w = _mixture_weights(lb, nb)
        tail = 1.0 - w.sum(axis=1)
        # log-weights are O(lam) in size, so their rounding grows with lam.
        if np.any(tail > _MIXTURE_TAIL * max(1.0, float(lb.max()) / 100.0)):  # pragma: no cover - guard
            raise ArithmeticError("Poisson mixture truncated too early")
        q0 = np.asarray(reg_upper_gamma(a, yb), dtype=float).reshape(-1)
        # Q(a + j + 1, y) = Q(a + j, y) + y**(a+j) e**-y / Gamma(a + j + 1);
        # the increments are positive so the upward recurrence is stable.
        j = np.arange(nb - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_inc = (a + j) * np.log(yb[:, None]) - yb[:, None] - gammaln(a + j + 1.0)
        inc = np.where(yb[:, None] > 0.0, np.exp(log_inc), 0.0)
        q = np.empty((yb.size, nb))
        q[:, 0] = q0
        q[:, 1:] = q0[:, None] + np.cumsum(inc, axis=1)
        q = np.minimum(q, 1.0)
        # Renormalise: the dropped mass is negligible, the rounding in sum(w) is not.
        out[blk] = (w * q).sum(axis=1) / w.sum(axis=1)
    out = np.clip(out, 0.0, 1.0).reshape(shape)
    return float(out) if out.ndim == 0 else out


def noncentral_chi2_cdf(x, dof: int, scale: float, noncentrality=0.0):
    """``1 - noncentral_chi2_sf``."""
    return 1.0 - np.asarray(noncentral_chi2_sf(x, dof, scale, noncentrality))


def central_chi2_pdf(x, dof: int, scale: float):
    """Density of a sum of ``dof`` squared N(0, scale) variables."""
    Chi2Spec(dof, scale)
    x = np.asarray(x, dtype=float)
    a = dof / 2.0
    with np.errstate(divide="ignore"):
        log_pdf = (a - 1.0) * np.log(x) - x / (2.0 * scale) - a * np.log(2.0 * scale) - gammaln(a)
    out = np.where(x > 0, np.exp(log_pdf), 0.0)
    return float(out) if out.ndim == 0 else out


def noncentral_chi2_pdf(x, dof: int, scale: float, noncentrality=0.0):
    """Density of the scaled non-central chi-square, as a Poisson mixture.

    Term ``j`` is the central density with ``dof + 2j`` degrees of freedom
    weighted by ``Poisson(j; noncentrality / (2*scale))``; this is the
    power-series expansion of the modified-Bessel form, term by term.
    """
    Chi2Spec(dof, scale)
    x, mu = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(noncentrality, dtype=float))
    shape = x.shape
    xs = x.ravel()
    lam = (mu / (2.0 * scale)).ravel()
    out = np.zeros(xs.shape)
    n_terms = _poisson_upper_index(float(lam.max())) if lam.size else 1
    for blk in _blocks(xs.size, n_terms):
        xb, lb = xs[blk], lam[blk]
        nb = _poisson_upper_index(float(lb.max()))
        w = _mixture_weights(lb, nb)
        a = dof / 2.0 + np.arange(nb)
        with np.errstate(divide="ignore"):
            log_g = (
                (a - 1.0) * np.log(xb[:, None])
                - xb[:, None] / (2.0 * scale)
                - a * math.log(2.0 * scale)
                - gammaln(a)
            )
        g = np.where(xb[:, None] > 0, np.exp(log_g), 0.0)
        out[blk] = (w * g).sum(axis=1)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def noncentral_chi2_pdf_bessel(x, dof: int, scale: float, noncentrality: float):
    """Closed-form density with the modified Bessel function of the first kind.

    Only for ``noncentrality > 0`` and ``x > 0``; used to cross-check
    :func:`noncentral_chi2_pdf`.
    """
    x = np.asarray(x, dtype=float)
    mu = float(noncentrality)
    if mu <= 0:
        raise ValueError("Bessel form needs positive non-centrality")
    z = np.sqrt(mu * x) / scale
    v = dof / 2.0 - 1.0
    # ive(v, z) = I_v(z) exp(-z); fold the exponent back in log space.
    log_pdf = (
        (dof - 2.0) / 4.0 * np.log(x / mu)
        - math.log(2.0 * scale)
        - (x + mu) / (2.0 * scale)
        + z
        + np.log(ive(v, z))
    )
    return np.exp(log_pdf)


def marcum_q(m: int, a: float, b: float) -> float:
    """Generalized Marcum Q function for integer order ``m >= 1``.

    Uses the Neumann series in ``I_k(ab)``; the complement form is chosen
    when ``a > b`` so the summed terms stay small.
    """
    if int(m) != m or m < 1:
        raise ValueError("Marcum Q order must be a positive integer")
    a, b = float(a), float(b)
    if b == 0.0:
        return 1.0
    if a == 0.0:
        return float(reg_upper_gamma(m, b * b / 2.0))
    z = a * b
    # ive carries exp(-z); combine with exp(-(a^2+b^2)/2) => exp(-(a-b)^2/2).
    pre = math.exp(-0.5 * (a - b) ** 2)
    if a < b:
        total = 0.0
        k = 1 - m
        while True:
            term = (a / b) ** k * ive(k, z)
            total += term
            if k > 0 and term < 1e-18 * max(total, 1e-300):
                break
            k += 1
            if k > 100_000:  # pragma: no cover
                raise ArithmeticError("Marcum Q series did not converge")
        return min(max(pre * total, 0.0), 1.0)
    total = 0.0
    k = m
    while True:
        term = (b / a) ** k * ive(k, z)
        total += term
        if term < 1e-18 * max(total, 1e-300):
            break
        k += 1
        if k > 100_000:  # pragma: no cover
            raise ArithmeticError("Marcum Q series did not converge")
    return min(max(1.0 - pre * total, 0.0), 1.0)
