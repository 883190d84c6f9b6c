"""Period-aware multiscale forecaster with hand-derived gradients, in numpy."""

from .errors import (ArchiveError, BadMagicError, ChecksumError, ConfigError, CountMismatchError,
                     DataError, FeatherError, NumericError, ShapeError, UnsupportedVersionError,
                     UsageError)
from .model import (FeatherParams, ModelConfig, backward, count_macs, count_params, forward,
                    forward_with_cache, init_params, preset_config)
from .training import TrainConfig, load_csv, split_and_normalize, train
from .evaluation import MetricsRow, aggregate, evaluate
from .edge import export_weights, import_weights, profile_memory

__version__ = "0.1.0"
