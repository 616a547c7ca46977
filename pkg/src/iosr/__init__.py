"""Incremental open-set recognition engine with a human teaching loop."""

from .corpus import (
    LabeledFeatureSet,
    SynthSpec,
    load_feature_file,
    merge,
    split,
    synth_gaussian_corpus,
    write_feature_file,
)
from .detection import (
    AnchorConfig,
    BoundingBox,
    BoxTransform,
    Detection,
    DetectionBatch,
    GroundTruth,
    LossWeights,
    anchor_grid,
    apply_box_transform,
    average_precision,
    bilinear_resample,
    combined_precision,
    detection_loss,
    encode_box_transform,
    iou,
    top1_accuracy,
)
from .embed import ExtractorConfig, FeatureExtractor, extractor_fingerprint
from .evaluation import (
    ExperimentReport,
    SweepConfig,
    SweepReport,
    batch_retrain_oracle,
    dynamic_eval,
    quantiles,
    ratio_sweep,
    run_incremental_experiment,
)
from .head import (
    ClassId,
    ClassifierHead,
    ConfusionDistribution,
    TrainConfig,
    add_class_end_to_end,
    append_class,
    confusion_distribution,
    load_head,
    logits,
    predict,
    sample_negatives,
    save_head,
    train_new_column,
)
from .service import TeachingEngine, create_app

__version__ = "0.1.0"
