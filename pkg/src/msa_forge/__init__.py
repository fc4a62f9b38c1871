"""msa_forge: a self-contained multimodal sentiment analysis benchmark
toolkit: feature extraction, feature bundles, fusion-model training,
metric/representation analysis, and robustness testing."""

import logging

from .analysis import MetricReport, ProjectionResult, compute_metrics, make_benchmark_report, pca_project
from .autodiff import ParamSet, Tape, Tensor, backward, grad_check
from .bundle import (
    FeatureBundle,
    Manifest,
    ModalityBlock,
    SampleMeta,
    bundle_equal,
    pad_and_mask,
    read_bundle,
    split_view,
    write_bundle,
)
from .extractors import (
    EmbeddingTable,
    ExtractorConfig,
    WaveBuffer,
    ingest_visual_csv,
    mfcc,
    read_wav,
    run_dataset,
    stft,
    text_embed_lookup,
    utterance_stats,
)
from .models import (
    Batch,
    Model,
    ModelConfig,
    ModelOutput,
    batch_from_bundle,
    build_model,
    lmf_full_tensor_expand,
    load_checkpoint,
    model_forward,
    multitask_wrap,
    save_checkpoint,
)
from .robustness import (
    PerturbationSpec,
    TaggedEvalReport,
    add_feature_noise,
    drop_modality,
    evaluate_tagged,
    render_tagged_reports,
)
from .synthetic import make_synthetic_bundle
from .trainer import RunResult, TrainConfig, get_config_regression, multi_seed_run, train_run

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
