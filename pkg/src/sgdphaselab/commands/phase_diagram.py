from __future__ import annotations

import logging
from typing import Any, Dict, List

import numpy as np

from ..asymptotics import PhaseLabel, classify_phase, loss_asymptote
from ..config import ExperimentConfig, PowerLawSpec, SGDParams
from ..errors import DomainError
from ..genfunc import GenFuncContext
from ..plot import Heatmap, PlotSpec, emit_plot
from ..spectrum import PowerLawFit, build_power_law, gamma_for_batch
from ..util import Artifacts
from .base import register

logger = logging.getLogger(__name__)

PHASE_HEADER = ("nu", "zeta", "phase", "exponent", "constant")
PHASE_CODES = {label: i for i, label in enumerate(PhaseLabel)}


def phase_cell(cfg: ExperimentConfig, nu: float, zeta: float) -> list:
    phase = classify_phase(nu, zeta)
    if phase.divergent or phase == PhaseLabel.BOUNDARY:
        return [nu, zeta, phase, None, None]
    spec = PowerLawSpec(Lambda=cfg.Lambda, nu=nu, K=cfg.K, kappa=zeta * nu, modes=cfg.modes, mode=cfg.c0_mode)
    spectrum = build_power_law(spec)
    params = SGDParams(alpha=cfg.alpha, beta=cfg.beta, gamma=gamma_for_batch(cfg.dataset_size, cfg.batch),
                       tau1=cfg.tau1, tau2=cfg.tau2, steps=cfg.steps, batch=cfg.batch)
    try:
        report = loss_asymptote(GenFuncContext.from_params(spectrum, params), PowerLawFit.from_spec(spec))
    except DomainError as exc:
        logger.debug("nu=%g zeta=%g: %s", nu, zeta, exc)
        exponent = -zeta if phase == PhaseLabel.SIGNAL_DOMINATED else 1.0 / nu - 2.0
        return [nu, zeta, phase, exponent, None]
    return [nu, zeta, phase, report.exponent, report.constant]


@register("phase-diagram")
def phase_diagram(cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
    nus = cfg.grid_nu.values()
    zetas = cfg.grid_zeta.values()
    rows: List[list] = [phase_cell(cfg, float(nu), float(zeta)) for zeta in zetas for nu in nus]
    out.csv("phase_diagram.csv", PHASE_HEADER, rows)
    counts: Dict[str, int] = {}
    for row in rows:
        counts[row[2].value] = counts.get(row[2].value, 0) + 1
    if cfg.plot:
        codes = np.array([PHASE_CODES[r[2]] for r in rows], dtype=float).reshape(len(zetas), len(nus))
        edge_nu = nus[nus > 1.0]
        heat = Heatmap(nus, zetas, codes, edge_nu, 2.0 - 1.0 / edge_nu,
                       xlabel="nu", ylabel="zeta", colorbar="phase code")
        emit_plot(PlotSpec(title="phase diagram", heatmap=heat), out.add(out.path("phase_diagram.svg")))
    return {"command": "phase-diagram", "cells": len(rows), "phases": counts}
