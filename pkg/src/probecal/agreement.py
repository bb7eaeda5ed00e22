"""Agreement indices over recorded-depth pairs and their predictive estimates.

All indices operate on 16x16 joint count tables over the recorded categories
0..15 for an ordered pair of raters.  Weighted kappa uses quadratic distance
weights w[u1, u2] = 1 - (u1 - u2)^2 / (N - 1)^2 with N = 16 categories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics
from .data import (EXAMINERS, N_CATEGORIES, PAIR_LABELS, CalibrationDataset,
                   canonical_pair)
from .errors import DegenerateMarginals, DimensionMismatch, MissingPair

#: Quadratic agreement weights on the 16 recorded categories.
KAPPA_WEIGHTS = 1.0 - (np.subtract.outer(np.arange(N_CATEGORIES),
                                         np.arange(N_CATEGORIES)) ** 2
                       ) / float((N_CATEGORIES - 1) ** 2)

#: Row order mirroring the full agreement table: examiner pairs, then each
#: examiner against censored true pocket depth.
TABLE_ROWS = PAIR_LABELS + tuple(f"{e}/PD" for e in EXAMINERS)


def joint_counts(u_row, u_col) -> np.ndarray:
    """16x16 count matrix from paired recorded depths."""
    u_row = np.asarray(u_row, dtype=np.int64)
    u_col = np.asarray(u_col, dtype=np.int64)
    if u_row.shape != u_col.shape:
        raise DimensionMismatch("paired depth vectors differ in length")
    if u_row.size and (u_row.min() < 0 or u_row.max() >= N_CATEGORIES
                       or u_col.min() < 0 or u_col.max() >= N_CATEGORIES):
        raise ValueError("recorded depths outside 0..15")
    flat = np.bincount(u_row * N_CATEGORIES + u_col,
                       minlength=N_CATEGORIES * N_CATEGORIES)
    return flat.reshape(N_CATEGORIES, N_CATEGORIES)


def weighted_kappa(counts: np.ndarray) -> float:
    """Quadratically weighted kappa of a 16x16 joint count table.

    Raises DegenerateMarginals when chance agreement equals 1, which happens
    exactly when all mass sits in a single diagonal cell.
    """
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty count table")
    nz = np.argwhere(counts > 0)
    if len(nz) == 1 and nz[0, 0] == nz[0, 1]:
        raise DegenerateMarginals(
            f"all mass in cell ({nz[0,0]}, {nz[0,1]}): chance agreement is 1")
    p = counts / total
    p_obs = float((KAPPA_WEIGHTS * p).sum())
    p_chance = float((KAPPA_WEIGHTS * np.outer(p.sum(axis=1), p.sum(axis=0))).sum())
    return (p_obs - p_chance) / (1.0 - p_chance)


def percent_agreement(counts: np.ndarray, tolerance: int = 0) -> float:
    """Percent of paired mass with |u1 - u2| <= tolerance (tolerance 0 or 1)."""
    if tolerance not in (0, 1):
        raise ValueError("tolerance must be 0 or 1")
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty count table")
    mass = np.trace(counts)
    if tolerance == 1:
        mass += np.trace(counts, offset=1) + np.trace(counts, offset=-1)
    return 100.0 * float(mass) / float(total)


def index_triple(counts: np.ndarray) -> tuple[float, float, float]:
    """(kappa_w, P_exact, P_+-1) with kappa NaN when degenerate."""
    try:
        kw = weighted_kappa(counts)
    except DegenerateMarginals:
        kw = np.nan
    return kw, percent_agreement(counts, 0), percent_agreement(counts, 1)


# ---------------------------------------------------------------------------
# dataset-level estimates


class _PairStructure:
    """Precomputed grouping of a dataset's sites by examiner pair.

    For inter pairs the first-listed examiner of the canonical label is the
    row coordinate; for intra pairs replicate 1 is the row.
    """

    def __init__(self, data: CalibrationDataset):
        labels = data.pair_labels()
        self.pairs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for pair in PAIR_LABELS:
            sites = np.flatnonzero(labels == pair)
            if sites.size == 0:
                continue
            if pair[0] == pair[1]:
                row_rep = np.zeros(sites.size, dtype=np.int64)
            else:
                row_code = EXAMINERS.index(pair[0])
                row_rep = (data.examiners[sites, 0] != row_code).astype(np.int64)
            self.pairs[pair] = (sites, row_rep)
        # All measurements of each examiner, for the examiner-vs-truth rows.
        self.exam_meas: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for code, exam in enumerate(EXAMINERS):
            site_idx, rep_idx = np.nonzero(data.examiners == code)
            if site_idx.size:
                self.exam_meas[exam] = (site_idx, rep_idx)

    def rows(self) -> list[str]:
        out = [p for p in PAIR_LABELS if p in self.pairs]
        out += [f"{e}/PD" for e in EXAMINERS if e in self.exam_meas]
        return out


def pair_counts(data: CalibrationDataset, pair: str) -> np.ndarray:
    """Pooled 16x16 joint counts for one examiner pair."""
    structure = _PairStructure(data)
    if pair not in structure.pairs:
        raise MissingPair(f"no sites for pair {pair!r}")
    sites, row_rep = structure.pairs[pair]
    u_row = data.depths[sites, row_rep]
    u_col = data.depths[sites, 1 - row_rep]
    return joint_counts(u_row, u_col)


@dataclass
class AgreementRow:
    """One table row: point estimates and predictive summaries per index."""

    pair: str
    observed: Optional[dict] = None       # {"kappa_w": ..., "p_exact": ..., "p_pm1": ...}
    predictive: Optional[dict] = None     # index -> {"median","lo","hi"}
    n_dropped: dict = field(default_factory=dict)
    mcse: Optional[dict] = None           # index -> batch-means MCSE of the median

    def to_json(self) -> dict:
        out = {"pair": self.pair}
        if self.observed is not None:
            out["observed"] = self.observed
        if self.predictive is not None:
            out["predictive"] = self.predictive
        if self.n_dropped:
            out["n_dropped"] = self.n_dropped
        if self.mcse is not None:
            out["mcse"] = self.mcse
        return out


@dataclass
class AgreementTable:
    rows: list[AgreementRow]
    n_rep: int = 0
    resampled: bool = False

    def row(self, pair: str) -> AgreementRow:
        for r in self.rows:
            if r.pair == pair:
                return r
        raise MissingPair(f"no table row for {pair!r}")

    def to_json(self) -> dict:
        return {"n_rep": self.n_rep, "resampled": self.resampled,
                "rows": [r.to_json() for r in self.rows]}


_INDEX_NAMES = ("kappa_w", "p_exact", "p_pm1")


def observed_agreement(data: CalibrationDataset) -> AgreementTable:
    """Point estimates of all indices per examiner pair present in the data.

    Degenerate kappa (all mass in one diagonal cell) is reported as NaN.
    """
    structure = _PairStructure(data)
    rows = []
    for pair in PAIR_LABELS:
        if pair not in structure.pairs:
            continue
        sites, row_rep = structure.pairs[pair]
        counts = joint_counts(data.depths[sites, row_rep],
                              data.depths[sites, 1 - row_rep])
        kw, pex, ppm = index_triple(counts)
        rows.append(AgreementRow(pair, observed={
            "kappa_w": kw, "p_exact": pex, "p_pm1": ppm}))
    return AgreementTable(rows)


def _beta_per_record(samples, data, draw: int) -> np.ndarray:
    """Bias per (site, replicate) for one pooled posterior draw."""
    beta_rec = np.zeros(data.depths.shape)
    for exam, mat in samples.beta.items():
        code = EXAMINERS.index(exam)
        sites = samples.examiner_sites[exam]
        pos_of_site = np.full(data.n_sites, -1, dtype=np.int64)
        pos_of_site[sites] = np.arange(sites.size)
        site_idx, rep_idx = np.nonzero(data.examiners == code)
        vals = samples.pooled_beta(exam)[draw]
        beta_rec[site_idx, rep_idx] = vals[pos_of_site[site_idx]]
    return beta_rec


def posterior_predictive_agreement(samples, data: CalibrationDataset,
                                   spec=None, n_rep: int = 10_000,
                                   seed: int = 0,
                                   regenerate_theta: bool = True
                                   ) -> AgreementTable:
    """Predictive point and interval agreement estimates per table row.

    Each replicate consumes one retained posterior draw (in pooled chain
    order; sampled with replacement and flagged when n_rep exceeds the
    retained draw count) and simulates a full recorded dataset under the
    fitted model at the observed design: new subject effects, site depths
    and measurement noise from that draw's parameters, with the draw's
    site-level biases and examiner scales.  Examiner-vs-truth rows compare
    the replicate's simulated records against the censored depths of the
    same replicate, so truth and measurement stay coherent within it.  With
    regenerate_theta=False the replicate keeps the draw's fitted site depths
    and only redraws measurement noise (narrower intervals that condition on
    the realized depth configuration).  Summaries are the median and
    equal-tailed 95% interval across replicates; replicates with a
    degenerate kappa are dropped for that index and counted.
    """
    if spec is None:
        spec = samples.spec
    structure = _PairStructure(data)
    row_names = structure.rows()
    n_draws = samples.n_draws
    if n_draws == 0:
        raise ValueError("no retained draws")
    resampled = n_rep > n_draws
    master = np.random.Philox(key=seed)
    if resampled:
        chooser = np.random.Generator(master.jumped(0))
        draw_ids = chooser.integers(0, n_draws, size=n_rep)
    else:
        draw_ids = np.arange(n_rep)

    log_theta = samples.pooled_log_theta()
    mu = samples.pooled("mu")
    sigma_b = samples.pooled("sigma_b")
    sigma_eps = samples.pooled("sigma_eps")
    sigma = np.stack([samples.pooled(f"sigma_{e}") for e in EXAMINERS], axis=1)
    subj_index = np.searchsorted(np.unique(data.subjects), data.subjects)
    n_subjects = data.n_subjects
    # Per-record bias gather indices, precomputed once per examiner.
    gathers = []
    for exam in samples.beta:
        code = EXAMINERS.index(exam)
        sites = samples.examiner_sites[exam]
        pos_of_site = np.full(data.n_sites, -1, dtype=np.int64)
        pos_of_site[sites] = np.arange(sites.size)
        site_idx, rep_idx = np.nonzero(data.examiners == code)
        gathers.append((exam, site_idx, rep_idx, pos_of_site[site_idx]))

    values = np.full((n_rep, len(row_names), 3), np.nan)
    for r in range(n_rep):
        d = int(draw_ids[r])
        rng = np.random.Generator(master.jumped(r + 1))
        if regenerate_theta:
            b = sigma_b[d] * rng.standard_normal(n_subjects)
            lt = (mu[d] + b[subj_index]
                  + sigma_eps[d] * rng.standard_normal(data.n_sites))
        else:
            lt = log_theta[d].astype(float)
        beta_rec = np.zeros(data.depths.shape)
        for exam, site_idx, rep_idx, pos in gathers:
            beta_rec[site_idx, rep_idx] = samples.pooled_beta(exam)[d][pos]
        sd_rec = sigma[d][data.examiners]
        log_obs = lt[:, None] + beta_rec + sd_rec * rng.standard_normal(beta_rec.shape)
        u = np.clip(np.floor(np.exp(log_obs)), 0, N_CATEGORIES - 1).astype(np.int64)
        pd_cat = np.clip(np.floor(np.exp(lt)), 0, N_CATEGORIES - 1).astype(np.int64)
        for j, name in enumerate(row_names):
            if "/" in name:
                site_idx, rep_idx = structure.exam_meas[name[0]]
                counts = joint_counts(u[site_idx, rep_idx], pd_cat[site_idx])
            else:
                sites, row_rep = structure.pairs[name]
                counts = joint_counts(u[sites, row_rep], u[sites, 1 - row_rep])
            values[r, j] = index_triple(counts)

    observed = {row.pair: row.observed for row in observed_agreement(data).rows}
    rows = []
    for j, name in enumerate(row_names):
        pred, dropped, mcse = {}, {}, {}
        for i, idx_name in enumerate(_INDEX_NAMES):
            seq = values[:, j, i]
            ok = seq[~np.isnan(seq)]
            dropped[idx_name] = int(np.isnan(seq).sum())
            if ok.size == 0:
                pred[idx_name] = {"median": np.nan, "lo": np.nan, "hi": np.nan}
                continue
            lo, med, hi = np.percentile(ok, [2.5, 50.0, 97.5])
            pred[idx_name] = {"median": float(med), "lo": float(lo), "hi": float(hi)}
            # MCSE of the median estimate; percents on the proportion scale.
            scaled = ok if idx_name == "kappa_w" else ok / 100.0
            if ok.size >= 10:
                mcse[idx_name] = diagnostics.batch_means_se(
                    scaled, functional="quantile", q=0.5)
        rows.append(AgreementRow(name, observed=observed.get(name),
                                 predictive=pred, n_dropped=dropped, mcse=mcse))
    return AgreementTable(rows, n_rep=n_rep, resampled=resampled)
