from __future__ import annotations

import logging
import pathlib
from typing import Any, Dict, Optional

import typer
import yaml
from jsonschema import ValidationError as SchemaError
from pydantic import ValidationError
from rich import print as rprint
from rich.logging import RichHandler

from .commands import run_command
from .config import CommandName, load_config
from .errors import DomainError, InputError
from .report import load_manifest, render_markdown, verify_manifest
from .templates import default_config_text
from .util import read_json

app = typer.Typer(no_args_is_help=True)

HELP = {
    CommandName.SIMULATE: "Simulate loss trajectories for the requested regimes.",
    CommandName.STABILITY_MAP: "Sweep (alpha, beta) and compare SE runs with the U(1) = 1 boundary.",
    CommandName.ASYMPTOTICS: "Late-time power-law asymptote, phase and optimal learning rate.",
    CommandName.DIVERGENCE: "Divergence rate, t_div and blow-up time of a non-convergent setting.",
    CommandName.PHASE_DIAGRAM: "Phase label, exponent and constant over a (nu, zeta) grid.",
    CommandName.FIT: "Fit power laws to a spectrum and its tail sums.",
    CommandName.SE_ERROR: "Relative error of the SE noise surrogate along exact dynamics.",
}


@app.callback()
def main_callback(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    """Momentum SGD on quadratic problems: simulation and generating-function analysis."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(show_path=False)],
        force=True,
    )


def _execute(command: CommandName, options: Dict[str, Any]) -> None:
    options.pop("command", None)  # closure cell shows up in locals()
    config = options.pop("config")
    overrides = {k: v for k, v in options.items() if v is not None}
    overrides["command"] = command.value
    try:
        cfg = load_config(config, overrides)
    except (ValidationError, InputError) as e:
        rprint("[red]Invalid input:[/red]", e)
        raise typer.Exit(2)
    except (OSError, ValueError, yaml.YAMLError) as e:
        # config file problems: unreadable, malformed YAML, nested keys
        rprint("[red]Invalid config:[/red]", e)
        raise typer.Exit(2)
    try:
        summary = run_command(cfg)
    except (ValidationError, InputError) as e:
        rprint("[red]Invalid input:[/red]", e)
        raise typer.Exit(2)
    except OSError as e:
        rprint("[red]I/O error:[/red]", e)
        raise typer.Exit(2)
    except DomainError as e:
        rprint(f"[yellow]{command.value}: outside the analysis domain:[/yellow]", e)
        raise typer.Exit(3)
    for path in summary.pop("files", []):
        rprint(f"  wrote {path}")
    manifest = summary.pop("manifest", None)
    rprint(f"[green]{command.value} done[/green]", summary)
    if manifest:
        rprint(f"[green]manifest:[/green] {manifest}")


def _make_command(command: CommandName):
    def cmd(
        config: Optional[str] = typer.Option(None, "--config", help="Flat YAML experiment file"),
        nu: Optional[float] = typer.Option(None, help="Eigenvalue decay exponent"),
        kappa: Optional[float] = typer.Option(None, help="Partial-sum decay exponent"),
        Lambda: Optional[float] = typer.Option(None, "--Lambda", help="Eigenvalue scale"),
        K: Optional[float] = typer.Option(None, "--K", help="Partial-sum scale"),
        modes: Optional[int] = typer.Option(None, help="Truncation M"),
        c0_mode: Optional[str] = typer.Option(None, help="differenced-partial-sums or pointwise"),
        csv: Optional[str] = typer.Option(None, help="Spectrum CSV (k,lambda,lambda_c)"),
        tail_start: Optional[int] = typer.Option(None, help="First mode used by power-law fits"),
        torus: Optional[str] = typer.Option(None, help="Torus grid sizes, e.g. 64 or 8,8"),
        kernel_width: Optional[float] = typer.Option(None, help="Torus kernel width"),
        features: Optional[str] = typer.Option(None, help="Random features d,N"),
        feature_decay: Optional[float] = typer.Option(None, help="Random feature spectrum decay"),
        alpha: Optional[float] = typer.Option(None, help="Learning rate"),
        beta: Optional[float] = typer.Option(None, help="Momentum in (-1, 1)"),
        batch: Optional[int] = typer.Option(None, help="Batch size b"),
        dataset_size: Optional[int] = typer.Option(None, help="Dataset size N (default infinite)"),
        tau1: Optional[float] = typer.Option(None, help="SE coefficient of H Tr(HC)"),
        tau2: Optional[float] = typer.Option(None, help="SE coefficient of HCH"),
        steps: Optional[int] = typer.Option(None, help="Horizon T"),
        runs: Optional[int] = typer.Option(None, help="Monte-Carlo runs"),
        seed: Optional[int] = typer.Option(None, help="Random seed"),
        regimes: Optional[str] = typer.Option(None, help="Comma list of se,noiseless,full,mc,additive"),
        batches: Optional[str] = typer.Option(None, help="Comma list of batch sizes"),
        additive_noise: Optional[float] = typer.Option(None, help="Additive noise G_kk"),
        grid_alpha: Optional[str] = typer.Option(None, help="alpha grid lo:hi:n"),
        grid_beta: Optional[str] = typer.Option(None, help="beta grid lo:hi:n"),
        grid_nu: Optional[str] = typer.Option(None, help="nu grid lo:hi:n"),
        grid_zeta: Optional[str] = typer.Option(None, help="zeta grid lo:hi:n"),
        out: Optional[str] = typer.Option(None, help="Output directory"),
        plot: Optional[bool] = typer.Option(None, "--plot/--no-plot", help="Also write SVG plots"),
    ):
        _execute(command, dict(locals()))

    cmd.__doc__ = HELP[command]
    cmd.__name__ = command.value.replace("-", "_")
    return cmd


for _name in CommandName:
    app.command(_name.value)(_make_command(_name))


@app.command()
def init(path: str = typer.Option("sgdphaselab.yml", help="Where to write the example config"),
         force: bool = typer.Option(False, "--force", help="Overwrite an existing file")):
    """Write an example experiment config."""
    target = pathlib.Path(path)
    if target.exists() and not force:
        rprint(f"[yellow]{target} exists; pass --force to overwrite[/yellow]")
        raise typer.Exit(1)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(default_config_text(), encoding="utf-8")
    rprint(f"[green]Wrote example config to {target}[/green]")


@app.command()
def report(manifest: str = typer.Option("sgdphaselab-out/manifest.json", help="Path to manifest JSON")):
    """Verify a run's checksums and render a markdown summary."""
    try:
        data = load_manifest(manifest)
    except (OSError, ValueError, SchemaError, ValidationError) as e:
        rprint("[red]Invalid manifest:[/red]", e)
        raise typer.Exit(2)
    problems = verify_manifest(manifest)
    root = pathlib.Path(manifest).parent
    reports = {}
    for entry in data.files:
        p = root / entry.path
        if entry.path.endswith(".json") and p.exists():
            loaded = read_json(p)
            for key, value in loaded.items():
                if isinstance(value, dict):
                    reports[f"{entry.path}: {key}"] = value
    print(render_markdown(data, problems, reports))
    if problems:
        rprint("[red]Checksum verification FAILED[/red]")
        raise typer.Exit(1)


def main():
    app()


if __name__ == "__main__":
    main()
