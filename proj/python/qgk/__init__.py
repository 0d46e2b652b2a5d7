"""Python bindings for the qgk C++ library."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import evaluate_rollout_json as _evaluate_rollout_json


def evaluate_rollout(op, basis, dataset, physics, horizon, mode="matrix_exp", dt_query=1.0, start=1, max_lag=100):
    """Roll an operator out and return the report as a dict."""
    return _json.loads(
        _evaluate_rollout_json(op, basis, dataset, physics, horizon, mode, dt_query, start, max_lag)
    )
