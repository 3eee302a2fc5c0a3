"""Multi-view retinal fundus classification: data handling, model, training and evaluation."""
from .augment import AugmentationPolicy, AffineTransform, augment_to_target
from .dataset import (
    ClassLabel,
    DatasetManifest,
    ImageSet,
    SubjectRecord,
    ViewKey,
    load_manifest,
    make_folds,
    summarize,
)
from .evaluation import (
    ConfusionMatrix,
    MetricReport,
    PredictionRecord,
    evaluate,
    metrics_from_cm,
    reconstruct_confusion,
    roc_curve,
)
from .model import BackboneSpec, HeadConfig, MVSNet, build, build_single_view, count_parameters, head_parameter_count
from .synthetic import SynthSpec, generate_cohort, oracle_label
from .training import TrainConfig, cross_validate, train_fold

__version__ = "0.1.0"
