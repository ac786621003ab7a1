from __future__ import annotations

import logging
from typing import Any, Dict

import numpy as np

from ..asymptotics import blowup_time, early_asymptote
from ..config import ExperimentConfig
from ..errors import NotApplicableError
from ..genfunc import GenFuncContext, solve_divergence
from ..plot import PlotSpec, Series, emit_plot
from ..simulate import run_se
from ..util import Artifacts
from .base import load_problem, register, sgd_params
from .simulate import positive_series, write_trajectory

logger = logging.getLogger(__name__)


@register("divergence")
def divergence(cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
    bundle = load_problem(cfg)
    params = sgd_params(cfg, bundle)
    ctx = GenFuncContext.from_params(bundle.spectrum, params)
    report = solve_divergence(ctx)
    blowup = None
    if bundle.fit is not None:
        try:
            blowup = blowup_time(ctx, bundle.fit)
        except NotApplicableError as exc:
            logger.info("no blow-up time: %s", exc)

    traj = run_se(bundle.spectrum, params)
    write_trajectory(out, "trajectory_se", traj, tail_estimate=bundle.tail)
    out.json("divergence.json", {
        "divergence": report.model_dump(),
        "blowup": blowup.model_dump() if blowup is not None else None,
        "simulated_diverged_at": traj.diverged_at,
    })

    if cfg.plot:
        marks = {"t_div": report.t_div}
        series = [positive_series("SE loss", traj)]
        if blowup is not None:
            marks["t_blowup"] = blowup.t_blowup
            t = np.arange(1, traj.steps + 1)
            series.append(Series("early t^-zeta branch", t, early_asymptote(bundle.fit, ctx.alpha, t)))
        spec = PlotSpec(title="divergence", series=series, marks=marks)
        emit_plot(spec, out.add(out.path("divergence.svg")))
    return {"command": "divergence", "r_L": report.r_L, "t_div": report.t_div,
            "t_blowup": None if blowup is None else blowup.t_blowup}
