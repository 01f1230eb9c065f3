"""Normalized and margin-based softmax heads with label self-correction,
trained on synthetic noisy hypersphere data with hand-written gradients."""
from .evaluation import (
    DetectionPoint,
    OracleCorrectionResult,
    VerificationResult,
    aggregate,
    detection_curve,
    oracle_correction_test,
    sweep_threshold,
    verification_accuracy,
)
from .heads import (
    HeadConfig,
    HeadKind,
    backward,
    boundary_regularizer,
    correction_check,
    forward_loss,
    make_head,
    warmup_variant,
)
from .hypersphere import angular_add, cosine_matrix, margin_cos, normalize
from .noisegen import (
    DatasetSpec,
    NoiseKind,
    NoiseLedger,
    NoisyDataset,
    generate,
    inject_closed_noise,
    inject_open_noise,
    make_noisy,
    make_verification_pairs,
)
from .trainer import EmbeddingModel, MetricsLog, TrainConfig, finite_diff_audit, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSpec", "DetectionPoint", "EmbeddingModel", "HeadConfig", "HeadKind",
    "MetricsLog", "NoiseKind", "NoiseLedger", "NoisyDataset", "OracleCorrectionResult",
    "TrainConfig", "VerificationResult", "aggregate", "angular_add", "backward",
    "boundary_regularizer", "correction_check", "cosine_matrix", "detection_curve",
    "finite_diff_audit", "forward_loss", "generate", "inject_closed_noise",
    "inject_open_noise", "make_head", "make_noisy", "make_verification_pairs",
    "margin_cos", "normalize", "oracle_correction_test", "sweep_threshold", "train",
    "verification_accuracy", "warmup_variant",
]
