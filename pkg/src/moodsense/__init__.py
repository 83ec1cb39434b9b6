"""moodsense: wearable mood sampling with the full analysis chain.

Smartwatch-style sensor observations and four-outcome mood polls go in;
correlation tables, random-intercept multilevel logit models, and replicated
random-forest classification (with a GPS ablation) come out. A synthetic
cohort with known ground truth verifies every estimator.
"""

__version__ = "0.1.0"

from .core import (
    ANALYSIS_VARIABLES,
    FeatureRow,
    HolidayCalendar,
    MoodResponse,
    Observation,
    Participant,
    QUADRANTS,
    assemble_feature_row,
    assemble_feature_rows,
    clean_observations,
    decode_grid_selection,
    encode_mood_state,
    study_holidays,
    weekend_holiday_flag,
)
from .correlation import (
    CorrelationTable,
    correlation_table,
    pearson_r,
    significance_p,
)
from .forest import (
    EvalConfig,
    ExperimentReport,
    ForestConfig,
    ForestModel,
    cohen_kappa,
    gini_impurity,
    gps_ablation,
    predict_class,
    replicated_evaluation,
    train_forest,
    train_tree,
)
from .glmm import (
    FitConfig,
    FitResult,
    ModelSpec,
    fit_model,
    fit_model_rows,
    icc,
    information_criteria,
    marginal_loglik,
    marginal_loglik_grad,
    model_suite,
)
from .sampling import (
    Poll,
    PollPlan,
    SamplingConfig,
    expire_stale_polls,
    next_pending_poll,
    plan_daily_polls,
    record_response,
)
from .simulator import CohortConfig, Cohort, generate_cohort, ground_truth
from .store import Store, ingest_file
from .pipeline import PipelineConfig, export_map_layer, run_pipeline
