from __future__ import annotations

from typing import Any, Dict

import numpy as np

from ..asymptotics import classify_phase
from ..config import ExperimentConfig
from ..plot import PlotSpec, Series, emit_plot
from ..spectrum import fit_power_law, tail_estimate
from ..util import Artifacts
from .base import load_problem, register


@register("fit")
def fit(cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
    spectrum = load_problem(cfg).spectrum
    result = fit_power_law(spectrum, cfg.tail_start)
    phase = classify_phase(result.nu, result.zeta)
    out.json("fit.json", {
        "fit": result.as_dict(),
        "phase": phase.value,
        "tail_estimate": tail_estimate(result, spectrum.size),
        "modes": spectrum.size,
        "source": spectrum.source,
    })
    if cfg.plot:
        k = np.arange(1, spectrum.size + 1, dtype=float)
        sums = spectrum.tail_sums()
        keep = sums > 0
        spec = PlotSpec(
            title="spectrum fit", xlabel="k", ylabel="value",
            series=[
                Series("lambda_k", k, spectrum.lambdas),
                Series("S_k", k[keep], sums[keep]),
                Series(f"{result.Lambda:.3g} k^-{result.nu:.3g}", k, result.Lambda * k ** (-result.nu)),
                Series(f"{result.K:.3g} k^-{result.kappa:.3g}", k, result.K * k ** (-result.kappa)),
            ],
        )
        emit_plot(spec, out.add(out.path("fit.svg")))
    return {"command": "fit", "nu": result.nu, "kappa": result.kappa, "phase": phase.value}
