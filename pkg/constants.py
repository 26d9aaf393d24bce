"""Defines constants shared across the simulator.

This module centralizes the default hyperparameters, the mapping between
user-facing attack names and client roles, the column layout of the per-round
output files, and the colormap registry used when plotting reports. Keeping
them here lets the configuration layer, the engine and the report writer agree
on a single set of names.
"""

import matplotlib.cm as cm

# HYPERPARAMETER_DEFAULTS: value used for every HyperParams field the experiment
# document leaves out. The first block is the tuned reputation/threshold set,
# the second holds the values this simulator fixes where the method leaves them
# open, the third the local-training schedule.
HYPERPARAMETER_DEFAULTS = {
    "alpha": 0.7,
    "beta": 0.7,
    "tau_d": 2.5,
    "lambda": 0.5,
    "gamma": 0.4,
    "delta": 0.5,
    "theta_base": 0.5,
    "rho_up": 0.05,
    "rho_down": 0.15,

    "alpha_cov": 0.9,
    "tau_conv": 0.8,
    "theta_min": 0.1,
    "theta_max": 0.9,
    "sigma_ldp": 0.0,
    "c_ldp": 1.0,
    "participation_window": 10,
    "response_window": 20,
    "normalize_distance": True,
    "reference_norm_ratio": 3.0,
    "importance_scale": 10.0,

    "rounds": 200,
    "cohort_size": 10,
    "local_epochs": 5,
    "learning_rate": 0.001,
    "batch_size": 32,
    "weight_decay": 1e-3,
    "seed": 0,
}

# Neutral starting reputation and neutral first-participation consistency score.
INITIAL_REPUTATION = 0.5

# Floor applied to per-parameter variances before they are inverted.
VARIANCE_FLOOR = 1e-12

# Selection probability floor for reputation-proportional cohort sampling.
SELECTION_FLOOR = 0.05

# Smoothing factor applied to freshly computed dimension weights.
WEIGHT_SMOOTHING = 0.7

# Length of the detection history consulted by the attack-pattern analysis.
PATTERN_WINDOW = 20

# Log-normal shape of response times: steady clients vs. intermittent attackers.
RESPONSE_SIGMA_STEADY = 0.1
RESPONSE_SIGMA_ERRATIC = 0.6

# Number of classes of the synthetic task; (y + 1) mod 10 is the flip rule.
NUM_CLASSES = 10

# ATTACK_ALIASES: names accepted on the command line and in config files,
# mapped to the canonical role value. "all" and "none" are handled separately.
ATTACK_ALIASES = {
    "label_flip": "label_flip",
    "labelflip": "label_flip",
    "label_flipping": "label_flip",
    "byzantine": "byzantine",
    "byzantine_gradient": "byzantine",
    "gaussian": "byzantine",
    "scaling": "scaling",
    "gradient_scaling": "scaling",
    "adaptive": "adaptive",
    "alie": "alie",
    "sm": "sm",
    "statistical_mimicry": "sm",
}

# Order in which the "all" mode hands out attack behaviours, round-robin.
ALL_ATTACKS_ORDER = ["label_flip", "byzantine", "scaling", "adaptive", "alie", "sm"]

# ROUND_COLUMNS: fixed column order of rounds_rep<k>.csv. Never reorder;
# downstream reports index by name but replays are compared byte for byte.
ROUND_COLUMNS = [
    "round",
    "test_loss",
    "test_accuracy",
    "theta",
    "conv",
    "anomaly_rate",
    "w1",
    "w2",
    "w3",
    "n_selected",
    "n_responded",
    "trusted",
    "suspicious",
    "untrusted",
    "dropped",
    "tp",
    "fp",
    "tn",
    "fn",
    "graded_weight_mean",
    "stalled",
    "attack_pattern",
    "drift_along_direction",
    "rep_benign",
    "rep_label_flip",
    "rep_byzantine",
    "rep_scaling",
    "rep_adaptive",
    "rep_alie",
    "rep_sm",
]

# Wall-clock measurements live in their own file so the metrics file stays
# reproducible.
TIMING_COLUMNS = ["round", "aggregation_time", "server_time"]

# AGGREGATOR_PALETTE: line colormap per aggregator in accuracy-curve plots.
AGGREGATOR_PALETTE = {
    "flare": cm.viridis,
    "fedavg": cm.inferno,
    "krum": cm.plasma,
    "trimmed_mean": cm.cividis,
}
