"""User-level locally private sparse regression: mechanisms, protocols, harness."""

from .data import (
    Dataset,
    GroundTruth,
    UserShard,
    generate_correlated,
    generate_independent,
    generate_sparse_mean,
    load_csv,
)
from .estimators import MultiRoundSLR, SparseMeanEstimator, TwoRoundSLR, as_dataset
from .harness import (
    DataSpec,
    ExperimentConfig,
    MetricsRecord,
    emit,
    f1_score,
    l2_sq_error,
    run_experiment,
    summarize,
)
from .heavy_hitter import decode_index, encode_index, freq_oracle, heavy_hitter, local_rnd
from .privacy import (
    BudgetExceeded,
    BudgetLedger,
    HashPair,
    PublicRandomness,
    hadamard_entry,
    hadamard_matrix,
    laplace_sample,
    make_hash_pair,
    next_pow2,
    randomized_response_sign,
    rr_keep_probability,
    substream,
)
from .private_mean import ConcentrationInterval, Rotation, mean_scalar, range_scalar, uldp_mean
from .protocols import (
    Estimate,
    ProtocolConfig,
    ProtocolTranscript,
    local_estimate,
    multi_round_slr,
    sparse_mean,
    two_round_slr,
    uldp_sco,
)
from .selectors import (
    SelectionResult,
    SelectorConfig,
    lasso_fit,
    local_selection,
    scad_fit,
    screen,
    select_one,
)

__version__ = "0.1.0"
