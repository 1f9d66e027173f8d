"""Multi-concept composition by content-aware sampling and region fusion, on analytic toy denoisers."""

from .config import PipelineConfig, load_config, parse_config
from .errors import ConditionResolutionError, ConfigError, ExtractionFailed, PartitionError
from .oracle import ConditionSpec, Template, TemplateMixtureModel
from .pipeline import RunReport, ablate, run, run_seed
from .schedule import NoiseSchedule, build_schedule

__all__ = [
    "ConditionResolutionError",
    "ConditionSpec",
    "ConfigError",
    "ExtractionFailed",
    "NoiseSchedule",
    "PartitionError",
    "PipelineConfig",
    "RunReport",
    "Template",
    "TemplateMixtureModel",
    "ablate",
    "build_schedule",
    "load_config",
    "parse_config",
    "run",
    "run_seed",
]

__version__ = "0.1.0"
