from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List

import numpy as np

from ..config import ExperimentConfig, resolve_threads
from ..genfunc import GenFuncContext, stability_report
from ..plot import Heatmap, PlotSpec, emit_plot
from ..simulate import run_se
from ..util import Artifacts
from .base import ProblemBundle, load_problem, register, sgd_params

logger = logging.getLogger(__name__)

GRID_HEADER = ("alpha", "beta", "final_loss", "predicted_U1", "predicted_boundary")


def stability_row(cfg: ExperimentConfig, bundle: ProblemBundle, beta: float, alphas) -> List[list]:
    """Simulated and predicted outcome per alpha; the trailing cell is the empirical verdict."""
    rows = []
    for alpha in alphas:
        params = sgd_params(cfg, bundle, alpha=float(alpha), beta=float(beta))
        traj = run_se(bundle.spectrum, params)
        report = stability_report(GenFuncContext.from_params(bundle.spectrum, params), bundle.fit)
        boundary = report.alpha_eff_critical * (1.0 - beta) if report.alpha_eff_critical is not None else None
        rows.append([float(alpha), float(beta), traj.final_loss, report.U1, boundary, traj.converged()])
    return rows


@register("stability-map")
def stability_map(cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
    bundle = load_problem(cfg)
    alphas = cfg.grid_alpha.values()
    betas = cfg.grid_beta.values()
    workers = min(resolve_threads(None), len(betas))
    logger.info("stability map: %d x %d cells on %d threads", len(alphas), len(betas), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        blocks = list(pool.map(lambda b: stability_row(cfg, bundle, b, alphas), betas))
    rows = [row for block in blocks for row in block]
    out.csv("stability_map.csv", GRID_HEADER, (r[:5] for r in rows))

    mismatches = sum(1 for r in rows if r[5] != (r[3] < 1.0))
    if cfg.plot:
        final = np.array([[r[2] for r in block] for block in blocks], dtype=float)
        with np.errstate(divide="ignore"):
            shown = np.log10(np.where(final > 0, final, np.nan))
        edge = [(block[0][4], block[0][1]) for block in blocks if block[0][4] is not None]
        heat = Heatmap(alphas, betas, shown, [e[0] for e in edge], [e[1] for e in edge])
        emit_plot(PlotSpec(title="stability map", heatmap=heat), out.add(out.path("stability_map.svg")))
    return {"command": "stability-map", "cells": len(rows), "mismatches": mismatches}
