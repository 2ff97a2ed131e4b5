"""dlot: interval-prompted human-observation logging.

Sessions are defined by a validated config (label scheme, roster, timer),
driven by a deterministic prompt scheduler, journaled crash-safely, and
rendered to CSV/XLSX exports plus agreement statistics.
"""

from dlot.core import (
    ConfigError,
    DlotError,
    Observation,
    ObservationError,
    ObservationStatus,
    Phase,
    SessionConfig,
    SessionState,
    Violation,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DlotError",
    "Observation",
    "ObservationError",
    "ObservationStatus",
    "Phase",
    "SessionConfig",
    "SessionState",
    "Violation",
    "validate_config",
    "__version__",
]
