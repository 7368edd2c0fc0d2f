"""Synthetic extractive QA pairs from labeled document corpora.

The pipeline explains a multi-label document classifier to pair label
descriptions (questions) with the sentences that drive each label's
prediction (answers), post-processes answers on list/semicolon structure,
generates cosine-similarity and random baselines, stratifies QA datasets
by lexical hardness, and evaluates extractive-QA predictions with
ROUGE-2 / token F1 / exact match plus bootstrap and classical statistics.
"""

from .classifier import (
    ClassifierMetrics,
    LinearModelParams,
    RemoteScorer,
    TrainConfig,
    average_precision,
    evaluate_classifier,
    score,
    train_linear,
)
from .corpus import (
    Document,
    LabelAssignment,
    LabelVocabulary,
    SegmenterConfig,
    SentenceSpan,
    load_corpus,
    make_document,
    segment,
)
from .embedder import EmbedderConfig, HashedTfidfEmbedder, RemoteEmbedder, build_embedder, cosine
from .errors import XaiqaError
from .explainer import ImportanceMatrix, MspConfig, explain, explain_exhaustive
from .generator import (
    AnswerSpan,
    GenerationRun,
    QAPair,
    generate_cosine,
    generate_random,
    generate_xaiqa,
    mix,
    postprocess,
    select_top_r,
)
from .hardness import HardnessRecord, QcloConfig, hardest_subset, qclo
from .metrics import (
    AnnotationRecord,
    EvalReport,
    Prediction,
    WelchResult,
    bootstrap_ci,
    cohen_kappa,
    combine_annotations,
    evaluate_predictions,
    exact_match,
    raw_agreement,
    rouge2_recall,
    token_f1,
    welch_t_test,
)
from .porter import porter_stem
from .promptkit import (
    FewShotExample,
    PromptBudget,
    assemble_prompt,
    build_context_window,
    parse_model_answer,
)

__version__ = "0.1.0"
