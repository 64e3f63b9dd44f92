"""Incremental updates of QoS multi-user MISO downlink beamformers."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BeamformingError,
    ConfigError,
    ConvergenceFailure,
    DegenerateChannel,
    EmptyResult,
    Infeasible,
    RankDeficient,
    SingularUpdate,
)
from .incremental import (  # noqa: E402
    GammaChange,
    LiveSystem,
    Scheme,
    UpdatePolicy,
    UserIn,
    UserOut,
    apply,
    initialize,
)
