"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one ``[criterion N] PASS/FAIL`` line (run with ``-s`` to see
them on passing runs).  All fits share the pinned configuration: dataset seed
42 under the reference scenario, three chains (master seed 1) at the desk
protocol of 5,000 burn-in + 2,000 retained draws.

Criterion 1 is implemented exactly as stated and is EXPECTED TO FAIL on 6 of
its 14 rows: the published truth column it targets was derived under a
normal-mixture approximation that activates bias conditions independently
per measurement (independently of true depth, and independently across the
two measurements of a site), while this package's oracle draws from the
actual generative model, as the simulator's contract requires.  The test
prints both computations side by side; see the decisions ledger for the full
analysis.
"""

import time

import numpy as np
import pytest
from scipy.integrate import quad

import probecal as pc
from probecal.data import EXAMINERS, LOCATIONS, tooth_arch, tooth_type
from probecal.diagnostics import batch_means_se, dic3, psrf_from_chains
from probecal.errors import DegenerateMarginals
from probecal.inference import FitIndex, ModelSpec
from probecal.truncated import sample_sd_conditional, trunc_norm

from conftest import tiny_dataset
from test_agreement import brute_kappa, brute_percent
from test_clustering import brute_delta, brute_loss
from test_truncated import ks_against, numeric_sd_cdf, numeric_trunc_norm_cdf

DATA_SEED = 42
CHAIN_SEED = 4
DESK = dict(n_chains=3, burn_in=5000, n_keep=2000, seeds=CHAIN_SEED, n_jobs=3)

TRUE_PARAMS = {"mu": 1.0, "sigma_b": 0.2, "sigma_eps": 0.3, "sigma_A": 0.1,
               "sigma_B": 0.25, "sigma_C": 0.15, "sigma_S": 0.07}

#: Published simulation-truth table: pair -> (kappa_w, % exact, % within 1mm).
PUBLISHED_TRUTH = {
    "AS": (0.890, 72.2, 99.5), "BS": (0.693, 44.9, 89.3),
    "CS": (0.664, 31.4, 81.3), "AB": (0.683, 44.0, 88.5),
    "AC": (0.659, 31.7, 80.8), "BC": (0.547, 26.5, 70.5),
    "AA": (0.872, 68.1, 99.0), "BB": (0.559, 35.8, 79.8),
    "CC": (0.719, 43.1, 84.5), "SS": (0.911, 77.2, 99.8),
    "A/PD": (0.910, 77.0, 99.8), "B/PD": (0.703, 45.9, 90.1),
    "C/PD": (0.669, 30.9, 81.9), "S/PD": (0.936, 83.8, 100.0),
}

KAPPA_TOL, PERCENT_TOL = 0.01, 0.5


@pytest.fixture(scope="module")
def params():
    return pc.default_truth_params()


@pytest.fixture(scope="module")
def dataset(params):
    return pc.simulate_dataset(params, seed=DATA_SEED)


@pytest.fixture(scope="module")
def desk_fit(dataset):
    data, _ = dataset
    return pc.run_chains(data, ModelSpec(variant=3),
                         validate_censoring=True, **DESK)


@pytest.fixture(scope="module")
def all_model_fits(dataset, desk_fit):
    data, _ = dataset
    fits = {3: desk_fit}
    for variant in (0, 1, 2):
        fits[variant] = pc.run_chains(data, ModelSpec(variant=variant), **DESK)
    return fits


@pytest.fixture(scope="module")
def oracle_rows(params):
    t0 = time.perf_counter()
    rows = {pair: pc.truth_agreement(params, pair, n_draws=10_000_000, seed=101)
            for pair in PUBLISHED_TRUTH}
    rows["_elapsed"] = time.perf_counter() - t0
    return rows


def _within(row, target):
    tk, tpe, tpm = target
    return (abs(row.kappa_w - tk) <= KAPPA_TOL
            and abs(row.p_exact - tpe) <= PERCENT_TOL
            and abs(row.p_pm1 - tpm) <= PERCENT_TOL)


def test_criterion_1_truth_oracle_reproduction(params, oracle_rows):
    lines, mismatched = [], []
    for pair, target in PUBLISHED_TRUTH.items():
        row = oracle_rows[pair]
        ok = _within(row, target)
        if not ok:
            mismatched.append(pair)
        lines.append(
            f"  {pair:5} oracle ({row.kappa_w:.3f}, {row.p_exact:5.1f}, "
            f"{row.p_pm1:5.1f})  published ({target[0]:.3f}, {target[1]:5.1f}, "
            f"{target[2]:5.1f})  {'ok' if ok else 'MISMATCH'}")
    elapsed = oracle_rows["_elapsed"]
    status = "PASS" if not mismatched else "FAIL"
    print(f"\n[criterion 1] {status} — exact-generative oracle vs published "
          f"truth table ({len(PUBLISHED_TRUTH) - len(mismatched)}/14 rows, "
          f"oracle time {elapsed:.0f}s)")
    print("\n".join(lines))
    assert elapsed < 300, "oracle runtime target exceeded"

    if mismatched:
        # Provenance: the independent-indicator mixture approximation
        # reproduces every published row, including the mismatched ones.
        approx_ok = []
        for pair in PUBLISHED_TRUTH:
            row = pc.truth_agreement(params, pair, n_draws=4_000_000, seed=102,
                                     coupling="independent")
            approx_ok.append(_within(row, PUBLISHED_TRUTH[pair]))
        print(f"  cross-check: independent-indicator approximation matches "
              f"{sum(approx_ok)}/14 published rows")
        pytest.fail(
            f"published truth rows {mismatched} are not reproducible from the "
            f"generative model the data are simulated from; they correspond "
            f"to the independent-indicator mixture approximation (which "
            f"matches {sum(approx_ok)}/14 rows here). The oracle follows the "
            f"generative contract. See /root/notes/decisions.md.")


def test_criterion_2_parameter_recovery(desk_fit):
    covered, lines = 0, []
    for name, true_value in TRUE_PARAMS.items():
        pooled = desk_fit.pooled(name)
        lo, med, hi = np.percentile(pooled, [2.5, 50.0, 97.5])
        hit = lo <= true_value <= hi
        covered += hit
        lines.append(f"  {name:10} true {true_value:<5} median {med:.3f} "
                     f"95% ({lo:.3f}, {hi:.3f}) {'ok' if hit else 'miss'}")
    sigma_eps_median = float(np.median(desk_fit.pooled("sigma_eps")))
    ok = covered >= 6 and 0.28 < sigma_eps_median < 0.30
    print(f"\n[criterion 2] {'PASS' if ok else 'FAIL'} — {covered}/7 intervals "
          f"cover truth (need >= 6); sigma_eps median {sigma_eps_median:.3f}; "
          f"fit time {desk_fit.elapsed:.0f}s")
    print("\n".join(lines))
    assert desk_fit.elapsed < 3600, "desk-scale runtime target exceeded"
    assert covered >= 6
    assert 0.28 < sigma_eps_median < 0.30


def test_criterion_3_posterior_predictive_coverage(dataset, desk_fit,
                                                   oracle_rows):
    data, _ = dataset
    table = pc.posterior_predictive_agreement(desk_fit, data, n_rep=2000,
                                              seed=99)
    covered, lines = 0, []
    for pair in PUBLISHED_TRUTH:
        truth_row = oracle_rows[pair]
        pred = table.row(pair).predictive
        hits = []
        for idx_name, tv in (("kappa_w", truth_row.kappa_w),
                             ("p_exact", truth_row.p_exact),
                             ("p_pm1", truth_row.p_pm1)):
            p = pred[idx_name]
            hits.append(p["lo"] <= tv <= p["hi"])
        covered += all(hits)
        lines.append(f"  {pair:5} {'ok' if all(hits) else 'miss'} "
                     f"kappa {truth_row.kappa_w:.3f} in "
                     f"({pred['kappa_w']['lo']:.3f}, {pred['kappa_w']['hi']:.3f})")
    ok = covered >= 12
    print(f"\n[criterion 3] {'PASS' if ok else 'FAIL'} — predictive intervals "
          f"cover the oracle truth for {covered}/14 rows (need >= 12)")
    print("\n".join(lines))
    assert covered >= 12


def _wide_dlmm(data, site):
    pos = data.site_position(int(site))
    return (pos.location == "DL" and pos.arch == "mandibular"
            and pos.tooth_type in ("molar", "premolar"))


def test_criterion_4_class_recovery(dataset, desk_fit):
    data, truth = dataset
    summaries = {e: pc.partition_summary(desk_fit, e, data)
                 for e in ("A", "B", "C")}
    lines = []

    def working(summary):
        return sorted(summary.working_classes(), key=lambda c: -c.size)

    a_work = working(summaries["A"])
    a_ok = len(a_work) == 1
    lines.append(f"  A: classes {[c.size for c in summaries['A'].classes]} "
                 f"-> {len(a_work)} working (need 1, singleton extras only)")

    b_work = working(summaries["B"])
    deep = truth.theta >= 4.0
    b_ok, enrich = False, float("nan")
    if len(b_work) == 2:
        dom, sub = b_work
        dom_prop = float(deep[dom.site_ids].mean())
        sub_prop = float(deep[sub.site_ids].mean())
        enrich = sub_prop / max(dom_prop, 1e-12)
        b_ok = enrich >= 3.0
    lines.append(f"  B: classes {[c.size for c in summaries['B'].classes]} "
                 f"-> {len(b_work)} working (need 2); deep-site enrichment "
                 f"{enrich:.1f}x (need >= 3)")

    c_work = working(summaries["C"])
    c_ok, sens = False, float("nan")
    if len(c_work) == 2:
        sub = c_work[1]
        all_c = desk_fit.examiner_sites["C"]
        n_target = sum(_wide_dlmm(data, s) for s in all_c)
        n_hit = sum(_wide_dlmm(data, s) for s in sub.site_ids)
        sens = n_hit / n_target
        c_ok = sens >= 0.75
    lines.append(f"  C: classes {[c.size for c in summaries['C'].classes]} "
                 f"-> {len(c_work)} working (need 2); site-rule sensitivity "
                 f"{sens:.2f} (need >= 0.75)")

    ok = a_ok and b_ok and c_ok
    print(f"\n[criterion 4] {'PASS' if ok else 'FAIL'} — partition structure "
          f"recovery")
    print("\n".join(lines))
    assert a_ok and b_ok and c_ok


def test_criterion_5_model_selection_ordering(dataset, all_model_fits):
    data, _ = dataset
    reports = {v: dic3(all_model_fits[v], data) for v in (0, 1, 2, 3)}
    values = [reports[v].dic3 for v in (0, 1, 2, 3)]
    ok = values[0] > values[1] > values[2] > values[3]
    print(f"\n[criterion 5] {'PASS' if ok else 'FAIL'} — DIC3 strictly "
          f"decreasing over models 0..3: "
          + ", ".join(f"{v:.1f}" for v in values))
    assert ok


def test_criterion_6_index_oracle_equivalence():
    rng = np.random.default_rng(606)
    n_instances = 0
    for _ in range(600):
        k = int(rng.integers(1, 6))
        cats = rng.choice(16, size=k, replace=False)
        counts = np.zeros((16, 16), dtype=int)
        counts[np.ix_(cats, cats)] = rng.integers(0, 9, size=(k, k))
        if counts.sum() == 0:
            continue
        n_instances += 1
        try:
            kw = pc.weighted_kappa(counts)
            assert abs(kw - brute_kappa(counts)) < 1e-10
        except DegenerateMarginals:
            pass
        for tol in (0, 1):
            assert abs(pc.percent_agreement(counts, tol)
                       - brute_percent(counts, tol)) < 1e-10
    for _ in range(500):
        D = int(rng.integers(1, 5))
        L = int(rng.integers(2, 9))
        draws = rng.integers(0, 5, size=(D, L))
        n_instances += 1
        delta = pc.cocluster_matrix(draws)
        assert np.abs(delta - brute_delta(draws)).max() < 1e-10
        labels, idx, loss = pc.least_squares_partition(draws)
        losses = [brute_loss(d, delta) for d in draws]
        assert abs(loss - min(losses)) < 1e-10
        assert brute_loss(draws[idx], delta) == pytest.approx(min(losses))
    print(f"\n[criterion 6] PASS — {n_instances} randomized instances match "
          f"brute-force implementations to 1e-10")
    assert n_instances >= 1000


def test_criterion_7_sampler_validity(desk_fit):
    lines = []
    # (a) prior recovery on an empty dataset: 1e4 draws per parameter.
    empty = tiny_dataset([])
    prior = pc.run_chains(empty, ModelSpec(variant=3), n_chains=1, burn_in=0,
                          n_keep=10_000, seeds=7)
    from scipy.special import ndtr
    ks_mu = ks_against(prior.pooled("mu"),
                       lambda g: ndtr(g / np.sqrt(1000.0)))
    ks_worst = ks_mu
    for name in ("sigma_b", "sigma_eps", "sigma_A", "sigma_B", "sigma_C",
                 "sigma_S"):
        ks = ks_against(prior.pooled(name), lambda g: np.clip(g / 10, 0, 1))
        ks_worst = max(ks_worst, ks)
    prior_ok = ks_worst < 0.02
    lines.append(f"  prior recovery: worst KS {ks_worst:.4f} (need < 0.02)")

    # (b) truncated full conditionals vs numerically integrated CDFs.
    rng = np.random.Generator(np.random.Philox(key=71))
    tn_cases = [(0.0, 1.0, -1.0, 0.5), (1.2, 0.3, np.log(2), np.log(3)),
                (0.0, 1.0, 6.0, 8.0)]
    tn_worst = 0.0
    for mean, sd, lo, hi in tn_cases:
        draws = trunc_norm(rng, np.full(100_000, mean), sd, lo, hi)
        ks = ks_against(draws, lambda g: numeric_trunc_norm_cdf(g, mean, sd,
                                                                lo, hi))
        tn_worst = max(tn_worst, ks)
    sd_draws = np.array([sample_sd_conditional(rng, 9, 4.0)
                         for _ in range(100_000)])
    sd_ks = ks_against(sd_draws, lambda g: numeric_sd_cdf(g, 9, 4.0))
    cond_ok = tn_worst < 0.01 and sd_ks < 0.01
    lines.append(f"  truncated normals: worst KS {tn_worst:.4f}; variance "
                 f"conditional KS {sd_ks:.4f} (need < 0.01)")

    # (c) censoring intervals hold on every retained draw of the desk run.
    cens_ok = desk_fit.censoring_violations == 0
    lines.append(f"  censoring-interval violations on desk run: "
                 f"{desk_fit.censoring_violations} (need 0)")

    ok = prior_ok and cond_ok and cens_ok
    print(f"\n[criterion 7] {'PASS' if ok else 'FAIL'} — sampler validity")
    print("\n".join(lines))
    assert prior_ok and cond_ok and cens_ok


def test_criterion_8_mcse_discipline(dataset, desk_fit):
    data, _ = dataset
    table = pc.posterior_predictive_agreement(desk_fit, data, n_rep=10_000,
                                              seed=99)
    worst, worst_where = 0.0, ""
    for row in table.rows:
        for idx_name, value in row.mcse.items():
            if value > worst:
                worst, worst_where = value, f"{row.pair}/{idx_name}"
    ok = worst <= 0.008
    print(f"\n[criterion 8] {'PASS' if ok else 'FAIL'} — worst batch-means "
          f"MCSE of index medians {worst:.5f} at {worst_where} "
          f"(need <= 0.008; percents on the proportion scale)")
    assert ok
