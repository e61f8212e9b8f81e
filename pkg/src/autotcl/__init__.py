"""Contrastive time series representation learning with a learned,
factorized, invertible augmentation network."""

from .augment import (
    AugmentationNetwork,
    AugmentedView,
    HardConcreteParams,
    MaskPair,
    compose_view,
    concrete_sample,
    expected_l0,
    static_augment,
)
from .config import ExperimentConfig, config_hash, load_config
from .data import (
    TimeSeriesDataset,
    WindowBatch,
    load_series,
    make_windows,
    split_forecasting,
    standardize,
)
from .encoder import Encoder, EncoderConfig, Representation, receptive_field
from .errors import (
    AutoTCLError,
    ConfigError,
    FormatError,
    NumericalError,
    SchemaError,
    ValidationError,
)
from .evaluation import (
    ClassifyResult,
    ForecastResult,
    aggregate_ranks,
    evaluate_classification,
    evaluate_forecast,
    extract_features,
    fit_forecast_probe,
    fit_ridge,
    run_forecast_evaluation,
)
from .objectives import (
    LossReport,
    aug_loss,
    contrastive_loss,
    global_contrast_loss,
    local_contrast_loss,
    pri_loss,
    temporal_triplet_loss,
)
from .trainer import (
    Trainer,
    TrainingHistory,
    load_checkpoint,
    save_checkpoint,
    train,
    trainer_from_checkpoint,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
