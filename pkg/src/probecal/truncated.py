"""Robust samplers for truncated full conditionals.

Two primitives back the Gibbs sweeps: interval-truncated normal draws for
the latent log observed depths, and upper-truncated variance draws induced
by Uniform(0, upper) priors on standard deviations.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaincc, gammainccinv, ndtr, ndtri

from .errors import RejectionOverflow

#: Standardized-bound magnitude beyond which the interval is treated as a
#: tail and sampled by exponential-proposal rejection.
TAIL_THRESHOLD = 5.0
_MAX_REJECTION_ROUNDS = 1000


def _tail_draws(rng, alpha, beta):
    """Sample standard normals restricted to [alpha, beta], alpha >= TAIL_THRESHOLD.

    Exponential proposal with rate near alpha, restricted to the interval by
    inverse-CDF so no proposal mass is wasted outside [alpha, beta].
    """
    n = alpha.shape[0]
    lam = 0.5 * (alpha + np.sqrt(alpha * alpha + 4.0))
    # P(X <= t) for the proposal Exp(lam) shifted to alpha, capped at beta.
    cap = -np.expm1(-lam * (beta - alpha))  # may be 1.0 for wide intervals
    out = np.empty(n)
    todo = np.arange(n)
    for _ in range(_MAX_REJECTION_ROUNDS):
        u = rng.random(todo.shape[0])
        w = rng.random(todo.shape[0])
        x = alpha[todo] - np.log1p(-u * cap[todo]) / lam[todo]
        accept = np.log(w) <= -0.5 * (x - lam[todo]) ** 2
        out[todo[accept]] = x[accept]
        todo = todo[~accept]
        if todo.size == 0:
            return out
    raise RejectionOverflow("truncated-normal tail sampler failed to accept")


def trunc_norm(rng, mean, sd, lo, hi):
    """Draw N(mean, sd^2) truncated to [lo, hi), elementwise.

    Bounds may be -inf/+inf.  Central intervals use inverse-CDF sampling;
    intervals lying entirely beyond TAIL_THRESHOLD standard deviations use a
    rejection sampler that cannot loop forever on extreme censoring.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), mean.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), mean.shape)
    with np.errstate(invalid="ignore"):
        a = (lo - mean) / sd
        b = (hi - mean) / sd
    a = np.where(np.isneginf(lo), -np.inf, a)
    b = np.where(np.isposinf(hi), np.inf, b)

    out = np.empty(mean.shape)
    right = a >= TAIL_THRESHOLD
    left = b <= -TAIL_THRESHOLD
    central = ~(right | left)

    if central.any():
        ca, cb = a[central], b[central]
        fa, fb = ndtr(ca), ndtr(cb)
        u = rng.random(ca.shape[0])
        z = ndtri(fa + u * (fb - fa))
        # Guard against rounding on near-zero-mass intervals.
        out[central] = np.clip(z, ca, cb)
    if right.any():
        out[right] = _tail_draws(rng, a[right], b[right])
    if left.any():
        out[left] = -_tail_draws(rng, -b[left], -a[left])
    return mean + sd * out


def _grid_sd_draw(rng, nu, ss, upper, n_grid=8192):
    """Inverse-CDF draw of sigma on (0, upper] from density sigma^-nu * exp(-ss/(2 sigma^2)).

    Fallback for nu <= 1, where the precision-space gamma shape is not positive.
    """
    grid = np.linspace(upper / n_grid, upper, n_grid)
    logpdf = -nu * np.log(grid) - ss / (2.0 * grid * grid)
    logpdf -= logpdf.max()
    cdf = np.cumsum(np.exp(logpdf))
    cdf /= cdf[-1]
    return float(np.interp(rng.random(), cdf, grid))


def sample_sd_conditional(rng, nu, ss, upper=10.0):
    """Draw a standard deviation from its Gibbs full conditional.

    The Uniform(0, upper) prior on sigma with nu Gaussian residuals carrying
    summed squares ss induces an inverse-gamma full conditional on sigma^2
    with shape (nu - 1)/2 and scale ss/2, truncated to sigma < upper.  Sampled
    by inverse CDF on the gamma-distributed precision, so no rejection loop
    is involved; RejectionOverflow signals a non-finite result (pathological
    state such as non-finite ss).
    """
    if not np.isfinite(ss) or ss < 0:
        raise RejectionOverflow(f"invalid residual sum of squares: {ss}")
    if nu == 0 and ss == 0:
        return float(rng.uniform(0.0, upper))
    shape = 0.5 * (nu - 1.0)
    if shape <= 0:
        return _grid_sd_draw(rng, nu, ss, upper)
    if ss == 0.0:
        # Degenerate conditional concentrates at 0+ (improper at the origin).
        return 1e-12
    scale = 0.5 * ss
    # sigma^2 = scale / g with g ~ Gamma(shape) restricted to g > scale/upper^2.
    # Worked in the upper-tail domain: Q(g) = P(Gamma > g) keeps resolution
    # even when the admissible region is far in the tail (huge ss).
    q_keep = gammaincc(shape, scale / (upper * upper))
    if q_keep == 0.0:
        return _grid_sd_draw(rng, nu, ss, upper)
    g = gammainccinv(shape, q_keep * rng.random())
    var = scale / g
    sd = float(np.sqrt(var))
    if not np.isfinite(sd) or sd <= 0.0:
        raise RejectionOverflow(
            f"truncated variance draw is not finite (nu={nu}, ss={ss})")
    return min(sd, upper)
