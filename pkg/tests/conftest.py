import numpy as np
import pytest

import probecal as pc


@pytest.fixture(scope="session")
def truth_params():
    return pc.default_truth_params()


@pytest.fixture(scope="session")
def sim_data(truth_params):
    """One reference-scenario realization shared across tests."""
    data, truth = pc.simulate_dataset(truth_params, seed=42)
    return data, truth


@pytest.fixture(scope="session")
def micro_fit(sim_data):
    """Short Model 3 run for structural (non-statistical) checks."""
    data, _ = sim_data
    spec = pc.ModelSpec(variant=3)
    samples = pc.run_chains(data, spec, n_chains=2, burn_in=300, n_keep=150,
                            seeds=9, validate_censoring=True)
    return data, samples


def tiny_dataset(depths, examiners=None, subjects=None):
    """Small dataset builder: depths is a list of (u1, u2) site pairs."""
    from probecal.data import LOCATIONS

    n = len(depths)
    subjects = subjects or [1] * n
    examiners = examiners or [("S", "S")] * n
    records = []
    for i, (pair, subj) in enumerate(zip(depths, subjects)):
        site = pc.SitePosition(1 + (i // 6) % 28, LOCATIONS[i % 6])
        for k in (0, 1):
            records.append(pc.SiteRecord(subj, site, examiners[i][k], k + 1,
                                         pair[k]))
    return pc.CalibrationDataset.from_records(records)
