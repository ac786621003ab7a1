from __future__ import annotations

import logging
from typing import Any, Dict, List

import numpy as np

from ..config import ExperimentConfig, Regime
from ..plot import Guide, PlotSpec, Series, emit_plot
from ..simulate import (
    LossTrajectory,
    run_additive_noise,
    run_full_moments,
    run_mc,
    run_noiseless,
    run_se,
    trajectory_metadata,
)
from ..util import Artifacts
from .base import ProblemBundle, load_problem, register, sgd_params

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ("t", "loss", "stderr")


def run_regime(regime: Regime, cfg: ExperimentConfig, bundle: ProblemBundle, batch: int):
    params = sgd_params(cfg, bundle, batch=batch)
    extra: Dict[str, Any] = {}
    if regime == Regime.SE:
        traj = run_se(bundle.spectrum, params)
    elif regime == Regime.NOISELESS:
        traj = run_noiseless(bundle.spectrum, params)
    elif regime == Regime.FULL:
        traj = run_full_moments(bundle.require_problem("regime 'full'"), params)
    elif regime == Regime.MC:
        traj = run_mc(bundle.require_problem("regime 'mc'"), params, cfg.runs, cfg.seed)
    else:
        traj, floor = run_additive_noise(bundle.spectrum, params, cfg.additive_noise)
        extra["loss_floor"] = floor
    return traj, extra


def write_trajectory(out: Artifacts, stem: str, traj: LossTrajectory, **extra) -> None:
    out.csv(f"{stem}.csv", TRAJECTORY_HEADER, traj.rows())
    out.json(f"{stem}.json", trajectory_metadata(traj, **extra))


def positive_series(label: str, traj: LossTrajectory) -> Series:
    t = np.arange(traj.steps + 1)
    keep = (t > 0) & np.isfinite(traj.losses) & (traj.losses > 0)
    return Series(label, t[keep], traj.losses[keep])


@register("simulate")
def simulate(cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
    bundle = load_problem(cfg)
    batches = cfg.batches or [cfg.batch]
    series: List[Series] = []
    finals: Dict[str, float] = {}
    for regime in cfg.regimes:
        for batch in batches:
            stem = f"trajectory_{regime.value}" + (f"_b{batch}" if cfg.batches else "")
            traj, extra = run_regime(regime, cfg, bundle, batch)
            write_trajectory(out, stem, traj, tail_estimate=bundle.tail, **extra)
            finals[stem] = traj.final_loss
            series.append(positive_series(stem, traj))
            logger.info("%s: final loss %.6g%s", stem, traj.final_loss,
                        "" if traj.diverged_at is None else f" (diverged at {traj.diverged_at})")
    if cfg.plot:
        guides = [Guide(f"t^-{bundle.fit.zeta:.3g}", -bundle.fit.zeta)] if bundle.fit else []
        spec = PlotSpec(title="loss trajectories", series=[s for s in series if len(s.x)], guides=guides)
        emit_plot(spec, out.add(out.path("trajectories.svg")))
    return {"command": "simulate", "final_loss": finals}
