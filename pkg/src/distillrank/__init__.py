"""Dense retrieval training by distilling reranker preferences.

A trainable dual encoder learns from two teacher facets inside an
iterative retrieve -> rerank -> fine-tune loop: a pointwise scorer whose
tempered softmax is matched by KL, and a pairwise judge whose preference
probabilities are matched on rank-adjacent document pairs.
"""

from .corpus import (
    Corpus,
    Document,
    Judgments,
    Query,
    RunEntry,
    RunList,
    SyntheticSpec,
    TrueRelevance,
    Vocabulary,
    generate_synthetic,
    load_corpus,
    load_qrels,
    load_run,
    save_corpus,
    save_qrels,
    save_run,
    tokenize,
)
from .distill import (
    BatchItem,
    LossBreakdown,
    LossSettings,
    PairSample,
    SampledPair,
    binary_kl,
    candidate_pairs,
    kl_divergence,
    log_softmax,
    loss_infonce,
    loss_pairwise_kd,
    loss_pointwise_kd,
    loss_total,
    pairwise_student_prob,
    sample_pairs,
    softmax,
)
from .encoder import MODES, EncoderModel, Gradient, RowUpdates
from .errors import (
    DegenerateResponseError,
    DistillRankError,
    EvaluationError,
    ParseError,
    StaleIndexError,
    TeacherError,
    TrainingDivergedError,
    TransportError,
    ValidationError,
)
from .evaluation import (
    DisagreementReport,
    MetricReport,
    evaluate_runs,
    mrr_at_k,
    ndcg_at_k,
    pairwise_disagreement,
    recall_at_k,
    success_at_k,
)
from .index import Index, build_index, load_index, retrieve, save_index
from .kernels import BACKEND
from .teacher import (
    CachedPairwiseTeacher,
    CachedPointwiseTeacher,
    FileBackedLLMClient,
    LLMPairwiseTeacher,
    LLMPointwiseTeacher,
    PairwiseClassifier,
    PairwiseTeacher,
    PointwiseScorer,
    PointwiseTeacher,
    QueryTeacherScores,
    RelevanceMockClient,
    SyntheticTeacher,
    TeacherScores,
    llm_prefer_pairwise,
    llm_score_pointwise,
    prompt_pairwise,
    prompt_pointwise,
    rerank_pointwise,
    train_pairwise_classifier,
    train_pointwise_scorer,
)
from .trainer import (
    DistillConfig,
    SGD,
    derive_seed,
    evaluate_model,
    prepare_iteration,
    run_iterative,
    train_iteration,
)

__version__ = "0.1.0"
