"""Two-stream supervised hashing with discrete code optimization and a
bit-packed Hamming retrieval harness."""

__version__ = "0.1.0"

from dadh.data import (
    CodeMatrix,
    FeatureDataset,
    HyperParams,
    SimilarityOracle,
    Split,
    load_dataset,
    pack_codes,
    read_codes,
    read_features,
    read_labels,
    read_split,
    sign_pm1,
    split_dataset,
    write_codes,
    write_features,
    write_labels,
    write_split,
)
from dadh.encoder import (
    MlpEncoder,
    backward,
    forward,
    init_encoder,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from dadh.errors import ConfigError, DataError, NumericError
from dadh.lsh import LshModel, lsh_encode, lsh_fit
from dadh.objective import (
    ActivationCache,
    LossBreakdown,
    grad_f_rows,
    grad_g_rows,
    loss_total,
    pair_logit,
    pairwise_nll,
)
from dadh.retrieval import (
    HammingIndex,
    PrCurve,
    average_precision,
    cross_distances,
    encode_queries,
    encode_query,
    hamming_distance,
    mean_average_precision,
    precision_recall_curve,
    search,
    top_k_precision,
)
from dadh.solver import (
    SweepTrace,
    code_linear_term,
    code_objective,
    optimize_codes,
    sign_code_update,
    update_code_column,
)
from dadh.trainer import LrSchedule, TrainState, lr_at, train, train_ablated
