"""probecal: Bayesian examiner-calibration modeling for recorded probing depths.

Simulation, MCMC inference with a truncated stick-breaking mixture on
site-level examiner biases, agreement indices with posterior-predictive
intervals, posterior partition inference, and convergence/model-comparison
diagnostics for interval-censored ordinal depth measurements.
"""

__version__ = "0.1.0"

from .agreement import (AgreementRow, AgreementTable, joint_counts,
                        observed_agreement, percent_agreement,
                        posterior_predictive_agreement, weighted_kappa)
from .clustering import (ClassSummary, PartitionSummary,
                         class_characterization, cocluster_matrix,
                         least_squares_partition, merge_classes,
                         partition_summary)
from .data import (CalibrationDataset, PairingRow, SitePosition, SiteRecord,
                   canonical_pair, load_dataset, pairing_summary, save_dataset)
from .diagnostics import (Dic3Report, Psrf, batch_means_se, dic3, gelman_rubin,
                          psrf_from_chains)
from .inference import (ChainState, FitIndex, ModelSpec, PosteriorSamples,
                        init_chain, run_chains)
from .simulate import (BiasRule, Design, SimulationTruth, TruthParams, TruthRow,
                       default_truth_params, randomized_design,
                       simulate_dataset, standard_design, truth_agreement)
