"""Synthetic calibration datasets and the Monte Carlo truth oracle.

The generative model: a site's log pocket depth is mu + subject effect +
site noise; each of the two observed log depths adds an examiner bias (a
deterministic function of the examiner, the site position, and the site's
true depth) and examiner-scale Gaussian error; recorded depths are the
floor of the observed depth, capped at 15 mm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .agreement import index_triple, joint_counts
from .data import (EXAMINERS, HYGIENISTS, LOCATIONS, MAX_DEPTH_MM,
                   N_CATEGORIES, PAIR_LABELS, QUADRANTS, CalibrationDataset,
                   canonical_pair, tooth_arch, tooth_type)
from .errors import DesignError

#: Teeth in each quadrant under the 1-28 numbering.
QUADRANT_TEETH = {"UR": range(1, 8), "UL": range(8, 15),
                  "LL": range(15, 22), "LR": range(22, 29)}


@dataclass(frozen=True)
class BiasRule:
    """Additive log-scale examiner bias applied where every condition holds.

    Conditions are conjunctive; absent fields do not constrain.  Multiple
    rules matching the same (examiner, site, depth) sum their magnitudes.
    """

    examiner: str
    magnitude: float
    min_depth_mm: Optional[float] = None
    locations: Optional[tuple[str, ...]] = None
    arches: Optional[tuple[str, ...]] = None
    tooth_types: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.examiner not in EXAMINERS:
            raise ValueError(f"unknown examiner {self.examiner!r}")
        for loc in self.locations or ():
            if loc not in LOCATIONS:
                raise ValueError(f"unknown location {loc!r}")

    def site_mask(self, teeth: np.ndarray, loc_codes: np.ndarray) -> np.ndarray:
        """Boolean mask of sites matching the static (non-depth) conditions."""
        mask = np.ones(teeth.shape, dtype=bool)
        if self.locations is not None:
            codes = [LOCATIONS.index(l) for l in self.locations]
            mask &= np.isin(loc_codes, codes)
        if self.arches is not None:
            arch = np.array([tooth_arch(int(t)) for t in teeth])
            mask &= np.isin(arch, self.arches)
        if self.tooth_types is not None:
            ttype = np.array([tooth_type(int(t)) for t in teeth])
            mask &= np.isin(ttype, self.tooth_types)
        return mask


@dataclass(frozen=True)
class Design:
    """Assignment of examiner pairs to the four quadrants of each subject.

    One 4-tuple of canonical pair labels per subject, ordered (UR, UL, LL,
    LR); the first character of a label is replicate 1.
    """

    assignments: tuple[tuple[str, str, str, str], ...]

    def __post_init__(self):
        for subj in self.assignments:
            if len(subj) != 4:
                raise DesignError("each subject needs exactly 4 quadrant pairs")
            for label in subj:
                if (len(label) != 2 or label[0] not in EXAMINERS
                        or label[1] not in EXAMINERS):
                    raise DesignError(f"bad pair label {label!r}")
                if label != canonical_pair(label[0], label[1]):
                    raise DesignError(f"pair label {label!r} not canonical")

    @property
    def n_subjects(self) -> int:
        return len(self.assignments)

    def pair_quadrants(self) -> dict[str, list[tuple[int, str]]]:
        """pair label -> list of (subject index, quadrant code)."""
        out: dict[str, list[tuple[int, str]]] = {}
        for si, subj in enumerate(self.assignments):
            for qi, label in enumerate(subj):
                out.setdefault(label, []).append((si, QUADRANTS[qi]))
        return out


#: Balanced standard design: pair quotas 5/5/5 for the reference pairs and 3
#: for all others, every pair in distinct subjects, and each examiner seeing
#: equal numbers of upper/lower and left/right quadrants.
_STANDARD_TABLE = (
    ("AS", "BS", "SS", "CS"),
    ("AS", "SS", "CS", "BS"),
    ("CS", "AS", "SS", "BS"),
    ("CS", "AB", "BS", "AS"),
    ("BS", "CS", "AS", "CC"),
    ("AB", "AA", "BC", "AC"),
    ("BB", "AC", "AB", "BC"),
    ("CC", "BC", "BB", "AA"),
    ("BB", "CC", "AC", "AA"),
)


def standard_design() -> Design:
    """The bundled nine-subject balanced design."""
    return Design(_STANDARD_TABLE)


def randomized_design(seed: int) -> Design:
    """A seeded variant of the standard design.

    Permutes subjects and optionally mirrors arches and/or sides; all three
    operations preserve the quota and balance constraints.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = [list(r) for r in _STANDARD_TABLE]
    rng.shuffle(rows)
    if rng.random() < 0.5:  # left-right mirror: swap UR<->UL and LL<->LR
        rows = [[r[1], r[0], r[3], r[2]] for r in rows]
    if rng.random() < 0.5:  # upper-lower mirror: swap UR<->LR and UL<->LL
        rows = [[r[3], r[2], r[1], r[0]] for r in rows]
    return Design(tuple(tuple(r) for r in rows))


def default_bias_rules() -> tuple[BiasRule, ...]:
    """The bundled biased-examiner scenario.

    B reads deep pockets (>= 4 mm) too shallow by 0.5 on the log scale; C
    reads everything too deep by 0.25 except distolingual sites of mandibular
    posterior teeth, where a -1.0 shift applies on top (net -0.75).
    """
    return (BiasRule("B", -0.5, min_depth_mm=4.0),
            BiasRule("C", 0.25),
            BiasRule("C", -1.0, locations=("DL",), arches=("mandibular",),
                     tooth_types=("molar", "premolar")))


@dataclass(frozen=True)
class TruthParams:
    """Ground-truth generative parameters for simulation and the oracle."""

    mu: float = 1.0
    sigma_b: float = 0.2
    sigma_eps: float = 0.3
    sigma: Mapping[str, float] = field(
        default_factory=lambda: {"A": 0.1, "B": 0.25, "C": 0.15, "S": 0.07})
    bias_rules: tuple[BiasRule, ...] = field(default_factory=default_bias_rules)
    n_subjects: int = 9
    design: Design = field(default_factory=standard_design)

    def __post_init__(self):
        sds = [self.sigma_b, self.sigma_eps] + [self.sigma[e] for e in EXAMINERS]
        if any(not s > 0 for s in sds):
            raise ValueError("all standard deviations must be > 0")
        if self.design.n_subjects != self.n_subjects:
            raise DesignError(
                f"design covers {self.design.n_subjects} subjects, "
                f"params say {self.n_subjects}")


def default_truth_params() -> TruthParams:
    """Nine fully dentate subjects under the bundled biased scenario."""
    return TruthParams()


def _bias_columns(params: TruthParams, examiner: str, teeth, loc_codes):
    """Split an examiner's rules into static bias and depth-triggered terms.

    Returns (static (n,), thresholds (R,), magnitudes (n, R)) so that the
    bias at depth theta is static + magnitudes @ [theta >= thresholds].
    """
    teeth = np.asarray(teeth)
    loc_codes = np.asarray(loc_codes)
    static = np.zeros(teeth.shape[0])
    thresholds, mags = [], []
    for rule in params.bias_rules:
        if rule.examiner != examiner:
            continue
        mask = rule.site_mask(teeth, loc_codes)
        if rule.min_depth_mm is None:
            static[mask] += rule.magnitude
        else:
            thresholds.append(rule.min_depth_mm)
            col = np.zeros(teeth.shape[0])
            col[mask] = rule.magnitude
            mags.append(col)
    mag_matrix = (np.stack(mags, axis=1) if mags
                  else np.zeros((teeth.shape[0], 0)))
    return static, np.asarray(thresholds), mag_matrix


@dataclass
class SimulationTruth:
    """Latent record accompanying a simulated dataset."""

    theta: np.ndarray      # (L,) true pocket depths, mm
    obs_depth: np.ndarray  # (L, 2) observed (continuous) probing depths, mm
    subjects: np.ndarray
    teeth: np.ndarray
    locations: np.ndarray


def simulate_dataset(params: TruthParams, seed: int
                     ) -> tuple[CalibrationDataset, SimulationTruth]:
    """Generate one recorded dataset plus its latent truth, deterministically.

    Sites are every (tooth, location) of every design subject; each site gets
    the two measurements of its quadrant's examiner pair.
    """
    design = params.design
    subjects, teeth, locs, exams = [], [], [], []
    for si, subj_row in enumerate(design.assignments):
        for tooth in range(1, 29):
            quad = QUADRANTS.index(
                next(q for q in QUADRANTS
                     if tooth in QUADRANT_TEETH[q]))
            pair = subj_row[quad]
            for li in range(len(LOCATIONS)):
                subjects.append(si + 1)
                teeth.append(tooth)
                locs.append(li)
                exams.append((EXAMINERS.index(pair[0]), EXAMINERS.index(pair[1])))
    subjects = np.asarray(subjects)
    teeth = np.asarray(teeth)
    locs = np.asarray(locs)
    exams = np.asarray(exams)
    L = subjects.shape[0]

    rng = np.random.Generator(np.random.Philox(key=seed))
    b = params.sigma_b * rng.standard_normal(design.n_subjects)
    eps = params.sigma_eps * rng.standard_normal(L)
    log_theta = params.mu + b[subjects - 1] + eps
    theta = np.exp(log_theta)

    bias = np.zeros((L, 2))
    for exam in HYGIENISTS:
        static, thresholds, mags = _bias_columns(params, exam, teeth, locs)
        if thresholds.size:
            hits = theta[:, None] >= thresholds[None, :]
            depth_part = (mags * hits).sum(axis=1)
        else:
            depth_part = 0.0
        value = static + depth_part
        for k in (0, 1):
            mask = exams[:, k] == EXAMINERS.index(exam)
            bias[mask, k] = value[mask]

    sigma_vec = np.array([params.sigma[e] for e in EXAMINERS])
    gamma = sigma_vec[exams] * rng.standard_normal((L, 2))
    obs = np.exp(log_theta[:, None] + bias + gamma)
    recorded = np.minimum(np.floor(obs), MAX_DEPTH_MM).astype(np.int64)

    data = CalibrationDataset(subjects, teeth, locs, exams, recorded)
    truth = SimulationTruth(theta=theta, obs_depth=obs, subjects=subjects.copy(),
                            teeth=teeth.copy(), locations=locs.copy())
    return data, truth


# ---------------------------------------------------------------------------
# Monte Carlo truth oracle


@dataclass(frozen=True)
class TruthRow:
    pair: str
    kappa_w: float
    p_exact: float
    p_pm1: float
    se_kappa: float
    se_exact: float
    se_pm1: float
    n_draws: int


def _parse_pair(pair) -> tuple[str, str]:
    if isinstance(pair, (tuple, list)):
        first, second = pair
        second = "PD" if second in (None, "PD", "truth") else second
        return first, second
    if "/" in pair:
        first, second = pair.split("/")
        return first, second
    if len(pair) == 2:
        return pair[0], pair[1]
    raise ValueError(f"cannot parse pair {pair!r}")


def _pair_site_features(params: TruthParams, first: str, second: str):
    """Candidate site list (with measurement multiplicity for truth rows)."""
    by_pair = params.design.pair_quadrants()
    teeth, locs = [], []
    if second == "PD":
        labels = [p for p in by_pair if first in p]
    else:
        labels = [canonical_pair(first, second)]
    for label in labels:
        if label not in by_pair:
            continue
        weight = 2 if (second == "PD" and label[0] == label[1]) else 1
        for _, quad in by_pair[label]:
            for tooth in QUADRANT_TEETH[quad]:
                for li in range(len(LOCATIONS)):
                    for _ in range(weight):
                        teeth.append(tooth)
                        locs.append(li)
    if not teeth:
        raise DesignError(f"design assigns no sites to pair {first}{second}")
    return np.asarray(teeth), np.asarray(locs)


def truth_agreement(params: TruthParams, pair, n_draws: int = 10_000_000,
                    seed: int = 0, chunk: int = 250_000,
                    coupling: str = "site") -> TruthRow:
    """Monte Carlo ground-truth agreement indices for one table row.

    Draws (site, theta, both measurements) i.i.d. from the generative model,
    censors to recorded categories, and evaluates the indices on the pooled
    joint table; standard errors come from per-chunk index values.  A table
    whose mass is a single diagonal cell reports kappa 1.0 (perfect
    concordance convention).

    coupling="site" (default) evaluates bias conditions on the drawn site and
    depth, shared by both measurements, exactly as simulate_dataset does.
    coupling="independent" instead activates each condition independently per
    measurement with its marginal probability — the normal-mixture
    approximation sometimes used to derive published true values; it is
    provided for cross-checking such tables, not as the oracle.
    """
    if n_draws < 100_000:
        raise ValueError("n_draws must be at least 1e5")
    if coupling not in ("site", "independent"):
        raise ValueError(f"unknown coupling {coupling!r}")
    first, second = _parse_pair(pair)
    label = f"{first}/{second}" if second == "PD" else canonical_pair(first, second)
    teeth, locs = _pair_site_features(params, first, second)
    ncand = teeth.shape[0]
    raters = [first] if second == "PD" else [first, second]
    cols = {e: _bias_columns(params, e, teeth, locs) for e in set(raters)
            if e != "S"}
    marginal_sd = float(np.sqrt(params.sigma_b ** 2 + params.sigma_eps ** 2))
    # Independent mode evaluates each rater against its own marginal site
    # distribution (all sites that rater measures), not the pair's sites.
    own_cols = {}
    if coupling == "independent":
        for e in set(raters):
            if e == "S":
                continue
            own_teeth, own_locs = _pair_site_features(params, e, "PD")
            own_cols[e] = _bias_columns(params, e, own_teeth, own_locs)

    def _marginal_probs(exam):
        static, thresholds, mags = own_cols[exam]
        probs = []
        for j, thr in enumerate(thresholds):
            frac = float((mags[:, j] != 0).mean())
            tail = 1.0 - float(ndtr((np.log(thr) - params.mu) / marginal_sd))
            probs.append(frac * tail)
        return np.asarray(probs)

    rng = np.random.Generator(np.random.Philox(key=seed))
    totals = np.zeros((N_CATEGORIES, N_CATEGORIES))
    chunk_vals = []
    remaining = n_draws
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        log_theta = params.mu + marginal_sd * rng.standard_normal(m)
        theta = np.exp(log_theta)
        idx = rng.integers(0, ncand, size=m)
        us = []
        for rater in raters:
            if rater == "S":
                bias_val = 0.0
            elif coupling == "site":
                static, thresholds, mags = cols[rater]
                bias_val = static[idx]
                for j, thr in enumerate(thresholds):
                    bias_val = bias_val + mags[idx, j] * (theta >= thr)
            else:
                static, thresholds, mags = own_cols[rater]
                own_idx = rng.integers(0, static.shape[0], size=m)
                bias_val = static[own_idx]
                for j, p in enumerate(_marginal_probs(rater)):
                    mag = mags[:, j][mags[:, j] != 0]
                    mag = float(mag[0]) if mag.size else 0.0
                    bias_val = bias_val + mag * (rng.random(m) < p)
            sd = params.sigma[rater]
            log_obs = log_theta + bias_val + sd * rng.standard_normal(m)
            us.append(np.clip(np.floor(np.exp(log_obs)), 0,
                              N_CATEGORIES - 1).astype(np.int64))
        if second == "PD":
            us.append(np.clip(np.floor(theta), 0, N_CATEGORIES - 1).astype(np.int64))
        counts = joint_counts(us[0], us[1])
        totals += counts
        chunk_vals.append(index_triple(counts))

    kw, pex, ppm = index_triple(totals)
    if np.isnan(kw):
        nz = np.argwhere(totals > 0)
        if len(nz) == 1 and nz[0, 0] == nz[0, 1]:
            kw = 1.0  # perfect concordance
    vals = np.asarray(chunk_vals)
    nb = vals.shape[0]

    def se(col):
        ok = col[~np.isnan(col)]
        if ok.size < 2:
            return 0.0
        return float(ok.std(ddof=1) / np.sqrt(ok.size))

    return TruthRow(label, float(kw), float(pex), float(ppm),
                    se(vals[:, 0]), se(vals[:, 1]), se(vals[:, 2]), n_draws)


#: All fourteen truth-table rows for a standard-design scenario.
TRUTH_TABLE_ROWS = PAIR_LABELS + tuple(f"{e}/PD" for e in EXAMINERS)
