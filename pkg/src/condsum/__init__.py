"""Conditional variational video summarization toolkit.

Builds intervention-labelled training data from videos (salt-and-pepper,
blur, word drops), fuses visual features with query tokens through top-k
conditional attention, trains a latent-variable model with helper
distributions, and evaluates budgeted summaries with the split-averaged
F1 protocol.
"""

from .dataset import (
    AnnotationTrack,
    DatasetSpec,
    SplitPlan,
    VideoRecord,
    derive_segment_scores,
    generate_synthetic,
    load_dataset,
    make_splits,
)
from .encoding import FrameFeatures, TokenMatrix, Vocabulary, embed_query, encode_video
from .evaluation import EvalReport, PRF1, evaluate_protocol, f1_score, generate_summary
from .intervention import (
    InterventionAssignment,
    apply_textual_intervention,
    apply_visual_intervention,
    build_conditional_dataset,
)
from .model import (
    ConditionalInstance,
    GaussianLatent,
    ModelParams,
    SummarizerModel,
    helper_predict,
    posterior_infer,
    prior_log_terms,
    sample_latent,
)
from .training import (
    LossReport,
    TrainConfig,
    compute_loss,
    gradient_check,
    gradient_check_loss,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationTrack",
    "ConditionalInstance",
    "DatasetSpec",
    "EvalReport",
    "FrameFeatures",
    "GaussianLatent",
    "InterventionAssignment",
    "LossReport",
    "ModelParams",
    "PRF1",
    "SplitPlan",
    "SummarizerModel",
    "TokenMatrix",
    "TrainConfig",
    "VideoRecord",
    "Vocabulary",
    "apply_textual_intervention",
    "apply_visual_intervention",
    "build_conditional_dataset",
    "compute_loss",
    "derive_segment_scores",
    "embed_query",
    "encode_video",
    "evaluate_protocol",
    "f1_score",
    "generate_summary",
    "generate_synthetic",
    "gradient_check",
    "gradient_check_loss",
    "helper_predict",
    "load_checkpoint",
    "load_dataset",
    "make_splits",
    "posterior_infer",
    "prior_log_terms",
    "sample_latent",
    "save_checkpoint",
    "train",
]
