from .base import registry, run_command
from . import (  # noqa: F401
    asymptotics as _asymptotics,
    divergence as _divergence,
    fit as _fit,
    phase_diagram as _phase_diagram,
    se_error as _se_error,
    simulate as _simulate,
    stability_map as _stability_map,
)

__all__ = ["registry", "run_command"]
