from __future__ import annotations

import logging
from typing import Any, Dict

import numpy as np

from ..config import ExperimentConfig
from ..errors import UndefinedRatioError
from ..simulate import iterate_full_moments, se_fit_error
from ..util import Artifacts
from .base import load_problem, register, sgd_params

logger = logging.getLogger(__name__)

SE_ERROR_HEADER = ("t", "e2", "tau2_line", "e2_line")


@register("se-error")
def se_error(cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
    """E2 of the SE surrogate along the exact second-moment trajectory."""
    bundle = load_problem(cfg)
    problem = bundle.require_problem("se-error")
    params = sgd_params(cfg, bundle)
    d = problem.dim
    rows = []
    first = None
    for t, M in enumerate(iterate_full_moments(problem, params)):
        C = M[:d, :d]
        if not np.all(np.isfinite(C)):
            logger.warning("moments overflowed at step %d; stopping", t)
            break
        try:
            fit = se_fit_error(problem, C, cfg.tau1, cfg.tau2)
        except UndefinedRatioError as exc:
            logger.info("step %d: %s", t, exc)
            rows.append([t, None, None, None])
            continue
        first = first or fit
        rows.append([t, fit.e2, fit.tau2_line, fit.e2_line])
    if first is None:
        raise UndefinedRatioError("exact noise covariance vanishes along the whole trajectory")
    out.csv("se_error.csv", SE_ERROR_HEADER, rows)
    out.json("se_error.json", {"initial": first.model_dump(), "steps": len(rows) - 1,
                               "dim": d, "dataset_size": problem.size})
    return {"command": "se-error", "e2_initial": first.e2}
