from __future__ import annotations

from typing import Any, Dict

from ..asymptotics import loss_asymptote
from ..config import ExperimentConfig
from ..genfunc import GenFuncContext, stability_report
from ..util import Artifacts
from .base import load_problem, register, sgd_params


@register("asymptotics")
def asymptotics(cfg: ExperimentConfig, out: Artifacts) -> Dict[str, Any]:
    bundle = load_problem(cfg)
    fit = bundle.require_fit("asymptotics")
    ctx = GenFuncContext.from_params(bundle.spectrum, sgd_params(cfg, bundle))
    report = loss_asymptote(ctx, fit)
    out.json("asymptotics.json", {
        "asymptote": report.model_dump(mode="json"),
        "stability": stability_report(ctx, fit).model_dump(),
        "fit": fit.as_dict(),
        "source": bundle.spectrum.source,
    })
    return {"command": "asymptotics", "phase": report.phase.value,
            "exponent": report.exponent, "constant": report.constant}
