"""Deterministic stand-in for a containerised network verifier."""

from .checks import (
    CHECK_ORDER,
    FAILURE_CATEGORIES,
    CheckResult,
    Failure,
    VerifyReport,
    reachability_matrix,
    verify,
)
from .config import DeviceConfig, parse_config, parse_config_text, render_config
from .network import Route, VerifyLimits, VerifySession, compute_routes, provision

__all__ = [
    "CHECK_ORDER",
    "FAILURE_CATEGORIES",
    "CheckResult",
    "DeviceConfig",
    "Failure",
    "Route",
    "VerifyLimits",
    "VerifyReport",
    "VerifySession",
    "compute_routes",
    "parse_config",
    "parse_config_text",
    "provision",
    "reachability_matrix",
    "render_config",
    "verify",
]
