"""Gradient-guided prompt search over masked language models.

The package finds fill-in-the-blank prompts automatically: trigger tokens
shared across a task are chosen by ranking vocabulary tokens with
embedding-gradient dot products and keeping whichever candidate raises
the label likelihood, while label tokens per class come from a logistic
classifier fit on mask hidden states. Oracles are pluggable: an analytic
toy model ships in-process, and any server speaking the framed-JSON
protocol can stand in for it.
"""

from .data import (
    ClassificationDataset,
    ExampleStream,
    FactDataset,
    SyntheticSpec,
    SyntheticTask,
    gen_synthetic_sentiment,
    load_classification,
    load_facts,
    split,
    subsample,
)
from .errors import (
    ConfigError,
    DataError,
    FingerprintMismatch,
    OracleError,
    PromptSearchError,
    ProtocolError,
    TransportError,
)
from .evaluation import (
    ClassProbs,
    ClassificationReport,
    FactInstance,
    RankReport,
    classification_metrics,
    classify,
    fact_rank_reports,
    inputs_for_fact,
    marginal_class_probs,
    oracle_top_token_predictor,
    per_class_precision,
    perturb_facts,
    rank_of_gold,
    ranking_metrics,
    re_accuracy,
    re_credit,
    write_classification_csv,
    write_rank_csv,
    write_summary_json,
)
from .labels import (
    LabelClassifier,
    LabelTokenSet,
    collect_mask_hiddens,
    fit_logistic,
    probe_prompts,
    score_label_tokens,
    select_label_sets,
    top_k_ids,
)
from .oracle import (
    MlmOracle,
    OracleRequest,
    OracleResponse,
    ToyMlm,
    label_log_likelihood,
    random_toy,
    toy_cross_entropy,
    train_toy,
)
from .remote import RemoteOracle
from .search import (
    CandidateSet,
    SearchConfig,
    SearchResult,
    candidate_set,
    dev_scores,
    evaluate_candidates,
    load_checkpoint,
    load_prompt_artifact,
    random_trigger_baselines,
    run_search,
    write_prompt_artifact,
)
from .server import OracleServer
from .templates import (
    PromptInstance,
    Template,
    load_template_file,
    parse_template,
    render_prompt,
)
from .vocab import EmbeddingView, TokenFilter, Vocabulary, build_token_filter

__version__ = "0.1.0"

__all__ = [
    "ClassProbs",
    "ClassificationDataset",
    "ClassificationReport",
    "CandidateSet",
    "ConfigError",
    "DataError",
    "EmbeddingView",
    "ExampleStream",
    "FactDataset",
    "FactInstance",
    "FingerprintMismatch",
    "LabelClassifier",
    "LabelTokenSet",
    "MlmOracle",
    "OracleError",
    "OracleRequest",
    "OracleResponse",
    "OracleServer",
    "PromptInstance",
    "PromptSearchError",
    "ProtocolError",
    "RankReport",
    "RemoteOracle",
    "SearchConfig",
    "SearchResult",
    "SyntheticSpec",
    "SyntheticTask",
    "Template",
    "TokenFilter",
    "ToyMlm",
    "TransportError",
    "Vocabulary",
    "build_token_filter",
    "candidate_set",
    "classification_metrics",
    "classify",
    "collect_mask_hiddens",
    "dev_scores",
    "evaluate_candidates",
    "fact_rank_reports",
    "fit_logistic",
    "gen_synthetic_sentiment",
    "inputs_for_fact",
    "label_log_likelihood",
    "load_checkpoint",
    "load_classification",
    "load_facts",
    "load_prompt_artifact",
    "load_template_file",
    "marginal_class_probs",
    "oracle_top_token_predictor",
    "parse_template",
    "per_class_precision",
    "perturb_facts",
    "probe_prompts",
    "random_toy",
    "random_trigger_baselines",
    "rank_of_gold",
    "ranking_metrics",
    "re_accuracy",
    "re_credit",
    "render_prompt",
    "run_search",
    "score_label_tokens",
    "select_label_sets",
    "split",
    "subsample",
    "top_k_ids",
    "toy_cross_entropy",
    "train_toy",
    "write_classification_csv",
    "write_prompt_artifact",
    "write_rank_csv",
    "write_summary_json",
]
