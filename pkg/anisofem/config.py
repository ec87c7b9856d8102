# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices

import logging
import os
import sys

DEFAULT_CONFIG = {
    "quad_degree": 12,           # Default exactness of quadrature on non-polynomial data
    "linf_lattice": 64,          # Subdivisions per edge of the sampling lattice for p=inf
    "linf_doubling_tol": 0.005,  # Allowed relative change when the lattice is doubled
    "slack": 1e-9,               # Slack for all inequality checks
    "tie_tol": 1e-12,            # Relative tolerance for edge-length ties
    "degeneracy_tol": 1e-14,     # |T| < tol * h_T^d means degenerate
    "ratio_tol": 0.05,           # Allowed growth of the last-level ratio over the running max
    "order_tol": 0.2,            # Allowed deviation of the observed convergence order
    "condition_warn": 1e12,      # Warn above this condition number
    "chunk_size": 2048,          # Cells processed per vectorized batch
    "selftest_samples": 1000,    # Random simplices per selftest suite
    "seed": 123,
    "log_level": "INFO",
}

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def get_config(**overrides):
    config = dict(DEFAULT_CONFIG)

    env_degree = os.environ.get("ANISOFEM_QUAD_DEGREE")
    if env_degree is not None:
        try:
            degree = int(env_degree)
        except ValueError:
            degree = 0
        if degree < 1:
            raise ValueError(f"Invalid ANISOFEM_QUAD_DEGREE value: {env_degree!r}")
        config["quad_degree"] = degree

    env_level = os.environ.get("ANISOFEM_LOG_LEVEL")
    if env_level:
        config["log_level"] = env_level.upper()

    for key, value in overrides.items():
        if key not in DEFAULT_CONFIG:
            raise KeyError(f"Unknown config key: {key}")
        config[key] = value
    return config


def configure_logging(level="INFO"):
    # stdout is reserved for CSV/JSON reports
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
