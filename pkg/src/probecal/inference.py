"""Gibbs sampler for the hierarchical interval-censored probing-depth model.

Data augmentation with latent log observed depths turns the multinomial
recorded-depth likelihood into Gaussian conjugacy: every sweep redraws the
latent depths on their censoring intervals, the site/subject/overall levels
of the depth hierarchy, the variance parameters, and (Models 2-3) the
examiner-bias structure.

Model variants
  0: one shared examiner scale, no biases
  1: per-examiner scales, no biases
  2: per-examiner scales, one constant bias per non-reference examiner
  3: per-examiner scales, site-level biases under a truncated stick-breaking
     mixture (finite Dirichlet-process construction) per non-reference examiner

Model 2 is implemented as the single-atom case of the Model 3 machinery, so
the two coincide sweep-for-sweep when the truncation level is 1.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .data import EXAMINERS, HYGIENISTS, MAX_DEPTH_MM, CalibrationDataset
from .errors import ValidationError
from .truncated import sample_sd_conditional, trunc_norm


@dataclass(frozen=True)
class ModelSpec:
    """Model variant plus prior and truncation settings."""

    variant: int = 3
    prior_mu_mean: float = 0.0
    prior_mu_var: float = 1000.0
    sd_upper: float = 10.0
    dpp_truncation: int = 6
    dpp_alpha: float = 8.0
    dpp_base_mean: float = 0.0
    dpp_base_var: float = 1000.0

    def __post_init__(self):
        if self.variant not in (0, 1, 2, 3):
            raise ValueError(f"variant must be 0..3, got {self.variant}")
        if self.variant == 3 and self.dpp_truncation < 2:
            raise ValueError("dpp_truncation must be >= 2 for Model 3")
        if self.dpp_alpha <= 0:
            raise ValueError("dpp_alpha must be > 0")

    @property
    def has_bias(self) -> bool:
        return self.variant >= 2

    @property
    def n_atoms(self) -> int:
        """Mixture truncation actually used: 1 for Model 2, M for Model 3."""
        return self.dpp_truncation if self.variant == 3 else 1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def censoring_bounds(depths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-scale interval [lo, hi) containing the latent observed depth.

    Category 0 is (-inf, 0); categories 1..14 are [log u, log(u+1)); category
    15 is [log 15, inf).
    """
    depths = np.asarray(depths, dtype=float)
    with np.errstate(divide="ignore"):
        lo = np.where(depths == 0, -np.inf, np.log(np.maximum(depths, 1)))
        hi = np.where(depths == MAX_DEPTH_MM, np.inf, np.log(depths + 1))
    return lo, hi


def cell_probs(depth_lo, depth_hi, mean, sd):
    """Probability of each record's observed category given its mean and scale."""
    with np.errstate(invalid="ignore"):
        upper = np.where(np.isposinf(depth_hi), 1.0, ndtr((depth_hi - mean) / sd))
        lower = np.where(np.isneginf(depth_lo), 0.0, ndtr((depth_lo - mean) / sd))
    return upper - lower


class FitIndex:
    """Precomputed index structures shared by all sweeps over one dataset."""

    def __init__(self, data: CalibrationDataset):
        self.L = data.n_sites
        subj_ids = data.subject_ids
        self.n_subjects = subj_ids.size
        self.subj = np.searchsorted(subj_ids, data.subjects)
        self.exam = data.examiners
        self.depths = data.depths
        self.lo, self.hi = censoring_bounds(data.depths)
        # Canonical order is subject-major, so reduceat segments are contiguous.
        self.subj_offsets = np.searchsorted(self.subj, np.arange(self.n_subjects))
        self.site_counts = np.bincount(self.subj, minlength=self.n_subjects)
        self.exam_flat = self.exam.reshape(-1)
        # Bias bookkeeping per non-reference examiner.
        self.bias_sites: dict[str, np.ndarray] = {}
        self.bias_rec: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.bias_counts: dict[str, np.ndarray] = {}
        for exam in HYGIENISTS:
            code = EXAMINERS.index(exam)
            site_idx, rep_idx = np.nonzero(self.exam == code)
            sites = np.unique(site_idx)
            pos_of_site = np.zeros(self.L, dtype=np.int64) if self.L else np.empty(0, np.int64)
            if sites.size:
                pos_of_site[sites] = np.arange(sites.size)
            pos = pos_of_site[site_idx] if site_idx.size else site_idx
            self.bias_sites[exam] = sites
            self.bias_rec[exam] = (site_idx, rep_idx, pos)
            self.bias_counts[exam] = np.bincount(pos, minlength=sites.size)


@dataclass
class BiasState:
    """Truncated stick-breaking mixture state for one examiner."""

    atoms: np.ndarray    # (M,) candidate bias values
    weights: np.ndarray  # (M,) mixture weights, sum to 1
    alloc: np.ndarray    # (L_e,) atom index per site measured by the examiner


@dataclass
class ChainState:
    """Complete MCMC state of one chain."""

    mu: float
    b: np.ndarray
    log_theta: np.ndarray
    sigma_b: float
    sigma_eps: float
    sigma: np.ndarray          # (4,) scales for A, B, C, S
    latent: np.ndarray         # (L, 2) latent log observed depths
    bias: dict[str, BiasState]
    rng: np.random.Generator

    def beta_per_record(self, index: FitIndex) -> np.ndarray:
        """Bias applied to each (site, replicate) measurement."""
        out = np.zeros((index.L, 2))
        for exam, bs in self.bias.items():
            site_idx, rep_idx, pos = index.bias_rec[exam]
            if site_idx.size:
                out[site_idx, rep_idx] = bs.atoms[bs.alloc[pos]]
        return out

    def beta_per_site(self, exam: str, index: FitIndex) -> np.ndarray:
        bs = self.bias[exam]
        return bs.atoms[bs.alloc]


def init_chain(data: CalibrationDataset, spec: ModelSpec, seed) -> ChainState:
    """Overdispersed but data-anchored starting state."""
    rng = _rng_from(seed)
    return _init_chain(FitIndex(data), spec, rng)


def _rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(key=seed))


def _init_chain(index: FitIndex, spec: ModelSpec, rng) -> ChainState:
    if index.L:
        latent = np.log(index.depths + 0.5)
        mu0 = float(latent.mean())
        log_theta = latent.mean(axis=1)
        subj_sums = np.add.reduceat(log_theta, index.subj_offsets)
        subj_means = subj_sums / index.site_counts
        base_eps = float(np.std(log_theta - subj_means[index.subj]))
        base_b = float(np.std(subj_means))
        resid = latent - log_theta[:, None]
        base_sig = np.zeros(4)
        for code in range(4):
            vals = resid[index.exam == code]
            base_sig[code] = float(np.std(vals)) if vals.size else 0.0
    else:
        latent = np.zeros((0, 2))
        mu0 = 0.0
        log_theta = np.zeros(0)
        base_eps = base_b = 0.0
        base_sig = np.zeros(4)

    def jittered(base):
        scale = base if base > 1e-3 else 0.1
        return float(np.clip(scale * np.exp(0.5 * rng.standard_normal()),
                             0.01, spec.sd_upper * 0.95))

    sigma_b = jittered(base_b)
    sigma_eps = jittered(base_eps)
    if spec.variant == 0:
        pooled = jittered(float(base_sig.mean()))
        sigma = np.full(4, pooled)
    else:
        sigma = np.array([jittered(base_sig[c]) for c in range(4)])

    bias: dict[str, BiasState] = {}
    if spec.has_bias:
        M = spec.n_atoms
        for exam in HYGIENISTS:
            n_sites = index.bias_sites[exam].size
            if spec.variant == 2:
                atoms = np.zeros(1)
                weights = np.ones(1)
                alloc = np.zeros(n_sites, dtype=np.int64)
            else:
                # Base-distribution draws with the spread capped at 1: the
                # diffuse base (variance 1000) puts initial biases tens of
                # log-units out, which stalls burn-in without adding useful
                # overdispersion (chains already differ through their seeds).
                scale = min(np.sqrt(spec.dpp_base_var), 1.0)
                atoms = spec.dpp_base_mean + scale * rng.standard_normal(M)
                v = rng.beta(1.0, spec.dpp_alpha, size=M - 1)
                weights = _stick_weights(v)
                alloc = rng.integers(0, M, size=n_sites)
            bias[exam] = BiasState(atoms, weights, alloc)

    return ChainState(mu=mu0, b=np.zeros(index.n_subjects), log_theta=log_theta,
                      sigma_b=sigma_b, sigma_eps=sigma_eps, sigma=sigma,
                      latent=latent, bias=bias, rng=rng)


def _stick_weights(v: np.ndarray) -> np.ndarray:
    """Mixture weights from stick fractions; the last weight is the remainder."""
    M = v.size + 1
    prods = np.concatenate([[1.0], np.cumprod(1.0 - v)])
    w = np.empty(M)
    w[:M - 1] = v * prods[:M - 1]
    w[M - 1] = prods[M - 1]
    return w


# ---------------------------------------------------------------------------
# sweep updates


def _as_index(data) -> FitIndex:
    return data if isinstance(data, FitIndex) else FitIndex(data)


def update_latent_T(state: ChainState, data) -> ChainState:
    """Redraw latent log observed depths on their censoring intervals."""
    index = _as_index(data)
    if index.L == 0:
        return state
    mean = state.log_theta[:, None] + state.beta_per_record(index)
    sd = state.sigma[index.exam]
    state.latent = trunc_norm(state.rng, mean, sd, index.lo, index.hi)
    return state


def update_theta_level(state: ChainState, data,
                       spec: ModelSpec) -> ChainState:
    """Conjugate draws of site depths, subject effects, and the overall mean."""
    index = _as_index(data)
    rng = state.rng
    eps_prec = 1.0 / state.sigma_eps ** 2
    if index.L:
        rec_prec = 1.0 / state.sigma[index.exam] ** 2
        adj = state.latent - state.beta_per_record(index)
        post_prec = eps_prec + rec_prec.sum(axis=1)
        post_mean = ((state.mu + state.b[index.subj]) * eps_prec
                     + (adj * rec_prec).sum(axis=1)) / post_prec
        state.log_theta = post_mean + rng.standard_normal(index.L) / np.sqrt(post_prec)

    if index.n_subjects:
        resid = state.log_theta - state.mu
        sums = np.add.reduceat(resid, index.subj_offsets)
        prec = 1.0 / state.sigma_b ** 2 + index.site_counts * eps_prec
        mean = sums * eps_prec / prec
        state.b = mean + rng.standard_normal(index.n_subjects) / np.sqrt(prec)

    prec = 1.0 / spec.prior_mu_var + index.L * eps_prec
    total = float((state.log_theta - state.b[index.subj]).sum()) if index.L else 0.0
    mean = (spec.prior_mu_mean / spec.prior_mu_var + total * eps_prec) / prec
    state.mu = float(mean + rng.standard_normal() / np.sqrt(prec))
    return state


def update_variances(state: ChainState, data,
                     spec: ModelSpec) -> ChainState:
    """Truncated variance draws induced by the uniform priors on scales."""
    index = _as_index(data)
    rng = state.rng
    state.sigma_b = sample_sd_conditional(
        rng, index.n_subjects, float((state.b ** 2).sum()), spec.sd_upper)
    if index.L:
        eps_resid = state.log_theta - state.mu - state.b[index.subj]
        ss_eps = float((eps_resid ** 2).sum())
    else:
        ss_eps = 0.0
    state.sigma_eps = sample_sd_conditional(rng, index.L, ss_eps, spec.sd_upper)

    if index.L:
        resid = state.latent - state.log_theta[:, None] - state.beta_per_record(index)
        sq = (resid ** 2).reshape(-1)
    else:
        sq = np.zeros(0)
    if spec.variant == 0:
        pooled = sample_sd_conditional(rng, 2 * index.L, float(sq.sum()),
                                       spec.sd_upper)
        state.sigma = np.full(4, pooled)
    else:
        counts = np.bincount(index.exam_flat, minlength=4) if index.L else np.zeros(4, int)
        ss = (np.bincount(index.exam_flat, weights=sq, minlength=4)
              if index.L else np.zeros(4))
        state.sigma = np.array([
            sample_sd_conditional(rng, int(counts[c]), float(ss[c]), spec.sd_upper)
            for c in range(4)])
    return state


def update_dpp(state: ChainState, data, spec: ModelSpec) -> ChainState:
    """Allocation, atom, and stick updates of the bias mixtures (Models 2-3)."""
    if not spec.has_bias:
        return state
    index = _as_index(data)
    rng = state.rng
    for exam in HYGIENISTS:
        if exam not in state.bias:
            continue
        bs = state.bias[exam]
        M = bs.atoms.size
        sig2 = float(state.sigma[EXAMINERS.index(exam)]) ** 2
        site_idx, rep_idx, pos = index.bias_rec[exam]
        n_sites = index.bias_sites[exam].size
        counts = index.bias_counts[exam]
        if n_sites:
            r = state.latent[site_idx, rep_idx] - state.log_theta[site_idx]
            sums = np.bincount(pos, weights=r, minlength=n_sites)
        else:
            sums = np.zeros(0)

        if M > 1 and n_sites:
            loglik = (np.outer(sums, bs.atoms)
                      - 0.5 * np.outer(counts, bs.atoms ** 2)) / sig2
            logp = np.log(bs.weights)[None, :] + loglik
            logp -= logp.max(axis=1, keepdims=True)
            p = np.exp(logp)
            p /= p.sum(axis=1, keepdims=True)
            u = rng.random((n_sites, 1))
            bs.alloc = np.minimum((p.cumsum(axis=1) < u).sum(axis=1), M - 1)

        n_m = np.bincount(bs.alloc, minlength=M) if n_sites else np.zeros(M, int)
        c_m = (np.bincount(bs.alloc, weights=counts.astype(float), minlength=M)
               if n_sites else np.zeros(M))
        s_m = (np.bincount(bs.alloc, weights=sums, minlength=M)
               if n_sites else np.zeros(M))
        prec = 1.0 / spec.dpp_base_var + c_m / sig2
        mean = (spec.dpp_base_mean / spec.dpp_base_var + s_m / sig2) / prec
        bs.atoms = mean + rng.standard_normal(M) / np.sqrt(prec)

        if M > 1:
            tail = np.concatenate([np.cumsum(n_m[::-1])[::-1][1:], [0]])
            v = rng.beta(1.0 + n_m[:M - 1], spec.dpp_alpha + tail[:M - 1])
            bs.weights = _stick_weights(v)
    return state


def gibbs_sweep(state: ChainState, index: FitIndex, spec: ModelSpec) -> ChainState:
    update_latent_T(state, index)
    update_theta_level(state, index, spec)
    update_variances(state, index, spec)
    update_dpp(state, index, spec)
    return state


# ---------------------------------------------------------------------------
# multi-chain driver and retained samples


SCALAR_NAMES = ("mu", "sigma_b", "sigma_eps",
                "sigma_A", "sigma_B", "sigma_C", "sigma_S")


@dataclass
class PosteriorSamples:
    """Retained monitored draws of every chain, plus run metadata."""

    scalars: dict[str, np.ndarray]            # name -> (C, K)
    log_theta: np.ndarray                     # (C, K, L) float32
    beta: dict[str, np.ndarray]               # examiner -> (C, K, W) float32
    alloc: dict[str, np.ndarray]              # examiner -> (C, K, L_e) uint8
    examiner_sites: dict[str, np.ndarray]     # examiner -> (L_e,) site ids
    spec: ModelSpec
    seeds: list
    burn_in: int
    thin: int
    latent: Optional[np.ndarray] = None       # (C, K, L, 2) float32 if kept
    elapsed: float = 0.0
    censoring_violations: int = 0

    @property
    def n_chains(self) -> int:
        return self.scalars["mu"].shape[0]

    @property
    def n_keep(self) -> int:
        return self.scalars["mu"].shape[1]

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.n_keep

    @property
    def n_sites(self) -> int:
        return self.log_theta.shape[2]

    def chains(self, name: str) -> np.ndarray:
        return self.scalars[name]

    def pooled(self, name: str) -> np.ndarray:
        return self.scalars[name].reshape(-1)

    def pooled_log_theta(self) -> np.ndarray:
        return self.log_theta.reshape(self.n_draws, -1)

    def pooled_beta(self, exam: str) -> np.ndarray:
        """(D, L_e) site-level bias draws; constant-bias models broadcast."""
        mat = self.beta[exam].reshape(self.n_draws, -1)
        L_e = self.examiner_sites[exam].size
        if mat.shape[1] == L_e:
            return mat
        return np.broadcast_to(mat, (self.n_draws, L_e))

    def pooled_alloc(self, exam: str) -> np.ndarray:
        return self.alloc[exam].reshape(self.n_draws, -1)

    # -- persistence --------------------------------------------------------

    def save(self, out_dir) -> None:
        """One .npy file per monitored parameter (deterministic bytes)."""
        out_dir = Path(out_dir)
        samples_dir = out_dir / "samples"
        samples_dir.mkdir(parents=True, exist_ok=True)
        arrays = {f"scalar_{k}": v for k, v in self.scalars.items()}
        arrays["log_theta"] = self.log_theta
        for e, v in self.beta.items():
            arrays[f"beta_{e}"] = v
        for e, v in self.alloc.items():
            arrays[f"alloc_{e}"] = v
        for e, v in self.examiner_sites.items():
            arrays[f"sites_{e}"] = v
        if self.latent is not None:
            arrays["latent"] = self.latent
        for name, arr in arrays.items():
            np.save(samples_dir / f"{name}.npy", arr)
        meta = {"spec": self.spec.to_json(), "seeds": self.seeds,
                "burn_in": self.burn_in, "thin": self.thin,
                "elapsed": self.elapsed,
                "censoring_violations": self.censoring_violations}
        (out_dir / "meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, run_dir) -> "PosteriorSamples":
        run_dir = Path(run_dir)
        meta = json.loads((run_dir / "meta.json").read_text())
        arrays = {p.stem: np.load(p) for p in sorted((run_dir / "samples").glob("*.npy"))}
        scalars = {k[len("scalar_"):]: v for k, v in arrays.items()
                   if k.startswith("scalar_")}
        beta = {k[len("beta_"):]: v for k, v in arrays.items()
                if k.startswith("beta_")}
        alloc = {k[len("alloc_"):]: v for k, v in arrays.items()
                 if k.startswith("alloc_")}
        sites = {k[len("sites_"):]: v for k, v in arrays.items()
                 if k.startswith("sites_")}
        return cls(scalars=scalars, log_theta=arrays["log_theta"], beta=beta,
                   alloc=alloc, examiner_sites=sites,
                   spec=ModelSpec.from_json(meta["spec"]), seeds=meta["seeds"],
                   burn_in=meta["burn_in"], thin=meta["thin"],
                   latent=arrays.get("latent"), elapsed=meta["elapsed"],
                   censoring_violations=meta["censoring_violations"])


def _chain_seed_keys(seeds, n_chains: int) -> list:
    """Per-chain (philox key, jump count) pairs from a master seed or a list."""
    if isinstance(seeds, (int, np.integer)):
        return [(int(seeds), c) for c in range(n_chains)]
    seeds = list(seeds)
    if len(seeds) != n_chains:
        raise ValueError(f"need {n_chains} seeds, got {len(seeds)}")
    return [(int(s), 0) for s in seeds]


def _run_one_chain(args):
    (data, spec, key, jump, burn_in, n_keep, thin,
     keep_latent, validate) = args
    index = FitIndex(data)
    bitgen = np.random.Philox(key=key)
    if jump:
        bitgen = bitgen.jumped(jump)
    rng = np.random.Generator(bitgen)
    state = _init_chain(index, spec, rng)
    scalars = {name: np.empty(n_keep) for name in SCALAR_NAMES}
    log_theta = np.empty((n_keep, index.L), dtype=np.float32)
    beta = {e: np.empty((n_keep, index.bias_sites[e].size if spec.variant == 3
                         else 1), dtype=np.float32)
            for e in HYGIENISTS} if spec.has_bias else {}
    alloc = ({e: np.empty((n_keep, index.bias_sites[e].size), dtype=np.uint8)
              for e in HYGIENISTS} if spec.variant == 3 else {})
    latent = (np.empty((n_keep, index.L, 2), dtype=np.float32)
              if keep_latent else None)
    violations = 0
    total = burn_in + n_keep * thin
    kept = 0
    for sweep in range(1, total + 1):
        gibbs_sweep(state, index, spec)
        if sweep <= burn_in or (sweep - burn_in) % thin:
            continue
        scalars["mu"][kept] = state.mu
        scalars["sigma_b"][kept] = state.sigma_b
        scalars["sigma_eps"][kept] = state.sigma_eps
        for c, exam in enumerate(EXAMINERS):
            scalars[f"sigma_{exam}"][kept] = state.sigma[c]
        log_theta[kept] = state.log_theta
        for exam, bs in state.bias.items():
            if spec.variant == 3:
                beta[exam][kept] = bs.atoms[bs.alloc]
                alloc[exam][kept] = bs.alloc
            else:
                beta[exam][kept] = bs.atoms[0]
        if keep_latent:
            latent[kept] = state.latent
        if validate and index.L:
            bad = ((state.latent < index.lo) | (state.latent > index.hi)).sum()
            violations += int(bad)
        kept += 1
    return scalars, log_theta, beta, alloc, latent, violations


def run_chains(data: CalibrationDataset, spec: ModelSpec, n_chains: int,
               burn_in: int, n_keep: int, seeds, thin: int = 1,
               keep_latent: bool = False, validate_censoring: bool = False,
               n_jobs: int = 1) -> PosteriorSamples:
    """Run independent Gibbs chains and collect monitored draws.

    `seeds` is either one master seed (per-chain counter-based streams are
    derived by jumping the master stream by the chain index) or an explicit
    per-chain seed list.  Results are bit-reproducible for a given seed
    configuration regardless of n_jobs.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    keys = _chain_seed_keys(seeds, n_chains)
    t0 = time.perf_counter()
    jobs = [(data, spec, key, jump, burn_in, n_keep, thin,
             keep_latent, validate_censoring) for key, jump in keys]
    if n_jobs > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, n_chains)) as pool:
            results = list(pool.map(_run_one_chain, jobs))
    else:
        results = [_run_one_chain(j) for j in jobs]

    index = FitIndex(data)
    scalars = {name: np.stack([r[0][name] for r in results])
               for name in SCALAR_NAMES}
    log_theta = np.stack([r[1] for r in results])
    beta = {e: np.stack([r[2][e] for r in results])
            for e in results[0][2]} if results[0][2] else {}
    alloc = {e: np.stack([r[3][e] for r in results])
             for e in results[0][3]} if results[0][3] else {}
    latent = (np.stack([r[4] for r in results]) if keep_latent else None)
    violations = sum(r[5] for r in results)
    return PosteriorSamples(
        scalars=scalars, log_theta=log_theta, beta=beta, alloc=alloc,
        examiner_sites={e: index.bias_sites[e] for e in HYGIENISTS},
        spec=spec, seeds=[list(k) for k in keys], burn_in=burn_in, thin=thin,
        latent=latent, elapsed=time.perf_counter() - t0,
        censoring_violations=violations)
