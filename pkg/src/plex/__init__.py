"""Perturbation-free word-importance explanations for embedding-based text classifiers.

The package pairs a perturbation-free scorer (a shared-weight Siamese
transform over contextual embeddings) with the perturbation-based baselines
it is trained against (a local linear surrogate, kernel-weighted Shapley
regression, and an exact Shapley oracle), plus a faithfulness and cost
evaluation suite.
"""

from .classifier import ClassDistribution, HeadParams, HeadTrainConfig, classify_masked, predict, train_head
from .datasetgen import DatasetConfig, build_dataset, load_pairs, save_pairs, shuffle_and_batch
from .encoder import (
    EmbeddingSet,
    EncodeCounter,
    TokenizedSentence,
    ToyEncoderParams,
    encode_toy,
    layer_distance_matrix,
    load_embeddings,
    save_embeddings,
    tokenize,
)
from .errors import DataFormatError, DegenerateVectorError, DivergenceError, PlexError, ShapeError
from .evaluate import (
    AgreementReport,
    CostReport,
    StressReport,
    agreement_report,
    bench,
    cost_model,
    polarity_agreement,
    stress_test,
    topk_overlap,
)
from .explainers import (
    ImportanceVector,
    exact_shapley,
    lime_explain,
    load_scores,
    normalize_scores,
    save_scores,
    shap_explain,
)
from .siamese import (
    SiameseParams,
    TrainConfig,
    TrainingPair,
    load_params,
    plex_explain,
    plex_loss,
    plex_score,
    save_params,
    siamese_forward,
    train_plex,
)

__version__ = "0.1.0"
