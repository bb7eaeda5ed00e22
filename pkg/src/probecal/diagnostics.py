"""Convergence diagnostics, Monte Carlo standard errors, and model comparison."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.stats import f as f_dist

from .data import EXAMINERS, CalibrationDataset
from .errors import InsufficientChains, NumericalUnderflow
from .inference import FitIndex, ModelSpec, PosteriorSamples, cell_probs

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class Psrf:
    """Potential scale reduction factor with its upper credible bound."""

    parameter: str
    point: float
    upper: float


def psrf_from_chains(chains: np.ndarray) -> tuple[float, float]:
    """Corrected scale-reduction point estimate and 97.5% upper bound.

    `chains` is (n_chains, n_draws).  Degenerate input (zero within-chain
    variance everywhere) reports 1.0 by convention.
    """
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    if m < 2:
        raise InsufficientChains("need at least 2 chains")
    if n < 10:
        raise InsufficientChains("need at least 10 retained draws per chain")
    s2 = chains.var(axis=1, ddof=1)
    xbar = chains.mean(axis=1)
    W = s2.mean()
    B = n * xbar.var(ddof=1)
    if W <= 0.0:
        return 1.0, 1.0
    muhat = xbar.mean()
    var_w = s2.var(ddof=1) / m
    var_b = 2.0 * B * B / (m - 1)
    cov_wb = (n / m) * (np.cov(s2, xbar * xbar, ddof=1)[0, 1]
                        - 2.0 * muhat * np.cov(s2, xbar, ddof=1)[0, 1])
    sig2hat = ((n - 1) * W + B) / n
    Vhat = sig2hat + B / (m * n)
    var_V = (((n - 1) ** 2 * var_w + (1 + 1 / m) ** 2 * var_b
              + 2 * (n - 1) * (1 + 1 / m) * cov_wb) / n ** 2)
    df_V = 2 * Vhat * Vhat / var_V if var_V > 0 else np.inf
    df_adj = (df_V + 3) / (df_V + 1)
    r2_fixed = (n - 1) / n
    r2_random = (1 + 1 / m) * (B / W) / n
    point = float(np.sqrt(df_adj * (r2_fixed + r2_random)))
    if var_w > 0:
        w_df = 2 * W * W / var_w
        upper = float(np.sqrt(df_adj * (r2_fixed
                                        + f_dist.ppf(0.975, m - 1, w_df)
                                        * r2_random)))
    else:
        upper = point
    return point, upper


def gelman_rubin(samples: PosteriorSamples, parameter: str) -> Psrf:
    """Scale-reduction diagnostic for one monitored scalar parameter."""
    point, upper = psrf_from_chains(samples.chains(parameter))
    return Psrf(parameter, point, upper)


def batch_means_se(draws: np.ndarray, functional: Union[str, Callable] = "mean",
                   q: float = 0.5) -> float:
    """Batch-means Monte Carlo standard error of a chain functional.

    Batch size is floor(sqrt(n)); the nonconforming tail is dropped.  For
    functional="mean" this is the classical batch-means MCSE of the sample
    mean; functional="quantile" uses batched quantiles around the full-chain
    quantile estimate (q defaults to the median).  A callable receives each
    batch and the full chain.
    """
    x = np.asarray(draws, dtype=float).reshape(-1)
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 draws")
    if np.all(x == x[0]):
        return 0.0
    b = int(np.floor(np.sqrt(n)))
    a = n // b
    x = x[:a * b].reshape(a, b)
    if functional == "mean":
        vals = x.mean(axis=1)
    elif functional == "quantile":
        vals = np.quantile(x, q, axis=1)
    elif callable(functional):
        vals = np.array([functional(batch) for batch in x])
    else:
        raise ValueError(f"unknown functional {functional!r}")
    var_bm = b * ((vals - vals.mean()) ** 2).sum() / (a - 1)
    return float(np.sqrt(var_bm / (a * b)))


@dataclass(frozen=True)
class Dic3Report:
    """Deviance information criterion using the averaged predictive density."""

    variant: int
    expected_deviance: float   # -4 E[log f(U | params) | U]
    plugin: float              # +2 log fhat(U)
    dic3: float

    def to_json(self) -> dict:
        return {"variant": self.variant,
                "expected_deviance": self.expected_deviance,
                "plugin": self.plugin, "dic3": self.dic3}


def dic3(samples: PosteriorSamples, data: CalibrationDataset,
         spec: Optional[ModelSpec] = None, thin: int = 1) -> Dic3Report:
    """DIC3 from retained draws: per-record censored-cell probabilities are
    averaged over the run for the plug-in density, and their logs averaged
    for the expected deviance.
    """
    if spec is None:
        spec = samples.spec
    index = FitIndex(data)
    log_theta = samples.pooled_log_theta()
    sigma = np.stack([samples.pooled(f"sigma_{e}") for e in EXAMINERS], axis=1)
    draw_ids = range(0, samples.n_draws, thin)
    beta_gathers = []
    for exam in samples.beta:
        code = EXAMINERS.index(exam)
        site_idx, rep_idx, pos = index.bias_rec[exam]
        beta_gathers.append((exam, site_idx, rep_idx, pos))

    sum_log = 0.0
    sum_f = np.zeros((index.L, 2))
    n_used = 0
    for d in draw_ids:
        lt = log_theta[d].astype(float)
        mean = np.repeat(lt[:, None], 2, axis=1)
        for exam, site_idx, rep_idx, pos in beta_gathers:
            mean[site_idx, rep_idx] += samples.pooled_beta(exam)[d][pos]
        sd = sigma[d][index.exam]
        probs = cell_probs(index.lo, index.hi, mean, sd)
        sum_log += float(np.log(np.maximum(probs, _LOG_FLOOR)).sum())
        sum_f += probs
        n_used += 1
    if n_used == 0:
        raise ValueError("no draws available")
    fhat = sum_f / n_used
    if np.any(fhat <= 0.0):
        bad = np.argwhere(fhat <= 0.0)[0]
        raise NumericalUnderflow(
            f"averaged predictive density is zero for site {bad[0]}, "
            f"replicate {bad[1] + 1}")
    expected_dev = -4.0 * (sum_log / n_used)
    plugin = 2.0 * float(np.log(fhat).sum())
    return Dic3Report(spec.variant, expected_dev, plugin, expected_dev + plugin)
