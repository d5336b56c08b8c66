"""villagerank: comparison-driven village livability ranking and analysis.

Pipeline: load a cohort manifest, adjudicate pairs with a simulated or
remote multimodal judge (majority-voted, side-randomized), place items by
interpolation insertion, convert the comparison log into Gaussian skill
ratings and display scores, evaluate rankings with the Spearman footrule,
and fit livability regressions with collinearity diagnostics.
"""

__version__ = "0.1.0"

from .composer import ComposeConfig, ComposeError, LayoutPlan, compose, plan_layout
from .corpus import (
    Cohort,
    CorpusError,
    Item,
    SurveyRow,
    load_manifest,
    load_survey,
    save_manifest,
)
from .econometrics import (
    FitReport,
    ModelSpec,
    RegressionError,
    build_design,
    fit_model,
    fit_ols,
    format_report,
    quad_vertex,
    vif,
)
from .judge import (
    CriteriaConfig,
    Criterion,
    JudgeError,
    JudgeKind,
    NoiseKind,
    NoiseModel,
    Outcome,
    RemoteJudge,
    RemoteJudgeConfig,
    SimulatedJudge,
    UndecidedError,
    UnparseableVerdictError,
    VotePolicy,
    Winner,
    build_compare_prompt,
    build_describe_prompt,
    parse_verdict,
    simulated_compare,
    vote,
)
from .metrics import RankPair, footrule, footrule_similarity, max_footrule
from .ranker import (
    BudgetLedger,
    ComparisonRecord,
    Phase,
    RankerConfig,
    RankerError,
    RankResult,
    ReplayAdjudicator,
    VotingAdjudicator,
    binary_insert,
    comparison_bound,
    rank_cohort,
    read_comparison_log,
    seed_ranking,
)
from .rating import (
    Rating,
    RatingError,
    RatingParams,
    ScoreStrategy,
    aggregate,
    mu_order,
    rate_log,
    to_scores,
    update_pair,
)

__all__ = [name for name in dir() if not name.startswith("_")]
