"""biastrack: popularity-bias auditing for rating-based recommenders.

Pipeline: load user-item listening data, scale per-user listen counts to
[0, 1000] preferences, group users by mainstreaminess, train six rating
predictors behind one fit/predict contract, and quantify popularity bias
through recommendation-frequency correlations, GAP deltas and per-group
MAE with significance tests.
"""

__version__ = "0.1.0"

from .algorithms import (
    MODEL_KINDS,
    MostPopular,
    NMF,
    Prediction,
    RandomPredictor,
    RatingPredictor,
    UserItemAvg,
    UserKNN,
    UserKNNAvg,
    fit_model,
    make_model,
)
from .dataset import (
    Interaction,
    InteractionStore,
    RatingMatrix,
    SplitPair,
    SyntheticConfig,
    generate_synthetic,
    load_interactions,
    scale_preferences,
    split_ratings,
    write_interactions,
)
from .evaluation import (
    GapCell,
    GapReport,
    MaeReport,
    PredictionSet,
    RecommendationLists,
    TTestResult,
    delta_gap,
    group_average_popularity,
    mae,
    mae_by_group,
    rec_popularity_correlation,
    test_predictions,
    top_n,
    welch_t_test,
)
from .exceptions import (
    BiastrackError,
    ConfigError,
    DegenerateInputError,
    ParseError,
    ValidationError,
)
from .profiling import (
    CorrelationReport,
    MainstreaminessScores,
    PopularityTable,
    UserGroups,
    flag_top_popular,
    group_users,
    histogram_intersection,
    item_popularity,
    mainstreaminess_scores,
    pearson,
    profile_popular_ratio,
    profile_size_correlations,
)

__all__ = [
    "__version__",
    "BiastrackError",
    "ConfigError",
    "CorrelationReport",
    "DegenerateInputError",
    "GapCell",
    "GapReport",
    "Interaction",
    "InteractionStore",
    "MODEL_KINDS",
    "MaeReport",
    "MainstreaminessScores",
    "MostPopular",
    "NMF",
    "ParseError",
    "PopularityTable",
    "Prediction",
    "PredictionSet",
    "RandomPredictor",
    "RatingMatrix",
    "RatingPredictor",
    "RecommendationLists",
    "SplitPair",
    "SyntheticConfig",
    "TTestResult",
    "UserGroups",
    "UserItemAvg",
    "UserKNN",
    "UserKNNAvg",
    "ValidationError",
    "delta_gap",
    "fit_model",
    "flag_top_popular",
    "generate_synthetic",
    "group_average_popularity",
    "group_users",
    "histogram_intersection",
    "item_popularity",
    "load_interactions",
    "mae",
    "mae_by_group",
    "mainstreaminess_scores",
    "make_model",
    "pearson",
    "profile_popular_ratio",
    "profile_size_correlations",
    "rec_popularity_correlation",
    "scale_preferences",
    "split_ratings",
    "test_predictions",
    "top_n",
    "welch_t_test",
    "write_interactions",
]
