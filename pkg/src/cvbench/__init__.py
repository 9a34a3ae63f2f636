"""cvbench: bias/variance/cost benchmarking of CV fold-assignment strategies."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    BALANCED,
    IMBALANCED,
    ClassDistribution,
    DataError,
    Dataset,
    SubsampleSpec,
    class_distribution,
    classify_balance,
    imbalance_index,
    load_dataset,
    standardize,
    stratified_holdout_split,
    stratified_subsample,
)
from .clustering import (  # noqa: E402
    NOISE,
    ClusteringResult,
    DbscanParams,
    KMeansConfig,
    agglomerative_fit,
    dbscan_fit,
    estimate_cluster_count,
    estimate_dbscan_params,
    kmeans_fit,
    minibatch_kmeans_fit,
)
from .splitters import (  # noqa: E402
    ALL_KINDS,
    CLUSTER_KINDS,
    FoldAssignment,
    SplitError,
    SplitterSpec,
    build_folds,
    materialize_folds,
    split_cluster_unstratified,
    split_dbscv,
    split_dobscv,
    split_kfold,
    split_scbcv,
    split_scv,
)
from .learners import (  # noqa: E402
    ConfusionCounts,
    LearnerError,
    LearnerSpec,
    TrainedModel,
    accuracy,
    balanced_accuracy,
    confusion,
    f1_score,
    grid_search,
    predict,
    train,
)
from .harness import (  # noqa: E402
    EvalRecord,
    ExperimentConfig,
    HarnessError,
    audit_record,
    estimate_true_performance,
    expected_cv_estimate,
    load_records,
    run_cv_once,
    run_experiment,
)
from .stats import (  # noqa: E402
    BlockTable,
    StatsError,
    block_table,
    friedman_test,
    win_counts,
)
