"""Rule application, score aggregation and ranking evaluation for
knowledge graph completion, plus executable checks of the probabilistic
identities the scorers rely on."""

from .kg import KnowledgeGraph, MalformedLine, SymbolTable, SymbolTables, Triple, load_triples
from .rules import (
    Atom,
    Constant,
    ParseError,
    Rule,
    RuleSet,
    UnknownDialect,
    Variable,
    load_ruleset,
    parse_rule,
    serialize_rule,
)
from .grounding import (
    BodyExplosion,
    CandidateRanking,
    FixpointBudgetExceeded,
    GenerationPolicy,
    Query,
    UndefinedConfidence,
    answer_query,
    confidence,
    forward_chain,
    ground_body,
    one_step_entails,
    predictions,
    predicts,
)
from .aggregation import (
    H_ALL,
    HStarTable,
    ScoreKey,
    key_max_plus,
    logistic_logodds,
    rank_candidates,
    score_key,
    score_max,
    score_noisy_or,
    score_noisy_or_top_h,
    strategy_from_spec,
    tune_h_star,
)
from .prob import (
    JointDistribution,
    MaxCorrSolution,
    ProbRule,
    frechet_upper,
    independent_distribution,
    marginalize,
    max_corr_distribution,
    prob_at_least_one,
    problog_entailment,
    problog_onestep,
    verify_max_marginal_query,
)
from .evaluation import EvalReport, evaluate, filtered_rank

__version__ = "0.1.0"
