"""Command-line entry points: bank tooling, metric reduction, sweeps, replay,
and a combined HTTP server for the router + gateway stack."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import yaml

from .bank import load_bank, mock_provider
from .core import Tier, load_lab_descriptor
from .metrics import compute_report
from .replay import run_all, write_report
from .simulate import REPO_ROOT, load_resources, run_sweep
from .telemetry import prune_trace, read_trace

DEFAULT_LABS_DIR = REPO_ROOT / "configs" / "labs"


def _load_labs(labs_dir: Path) -> dict:
    labs = {}
    for path in sorted(Path(labs_dir).glob("*.yaml")):
        lab = load_lab_descriptor(path)
        labs[lab.lab_id] = lab
    return labs


@click.group()
def main() -> None:
    """Governed LLM-assistance routing toolkit."""


# --- bank ------------------------------------------------------------------


@main.group()
def bank() -> None:
    """Canonical question bank tooling."""


@bank.command("validate")
@click.argument("path", type=click.Path(exists=True))
def bank_validate(path: str) -> None:
    """Load a bank file and report entry count and any load warnings."""
    loaded = load_bank(path, mock_provider(seed=7))
    click.echo(f"entries: {len(loaded)}")
    for warning in loaded.warnings:
        click.echo(f"warning: {warning}")
    click.echo("ok")


@bank.command("match")
@click.argument("path", type=click.Path(exists=True))
@click.option("--query", required=True, help="Query text to match.")
@click.option("--tau", default=0.82, show_default=True)
@click.option("--topk", default=3, show_default=True)
def bank_match(path: str, query: str, tau: float, topk: int) -> None:
    """Match a query against a bank and print the surviving candidates."""
    provider = mock_provider(seed=7)
    loaded = load_bank(path, provider)
    results = loaded.match(query, provider, tau=tau, top_k=topk)
    if not results:
        click.echo("no match")
        return
    for r in results:
        click.echo(f"{r.entry_id}\t{r.score:.4f}")


# --- metrics -----------------------------------------------------------------


@main.group()
def metrics() -> None:
    """Metric reduction over telemetry traces."""


@metrics.command("compute")
@click.argument("trace", type=click.Path(exists=True))
@click.option("--tau", default=0.82, show_default=True)
@click.option(
    "--labs",
    "labs_dir",
    default=str(DEFAULT_LABS_DIR),
    show_default=True,
    type=click.Path(exists=True),
)
def metrics_compute(trace: str, tau: float, labs_dir: str) -> None:
    """Compute the full metric report for one trace file."""
    events = list(read_trace(trace))
    report = compute_report(events, _load_labs(Path(labs_dir)), tau=tau)
    row = report.as_row()
    doc = {
        "events": len(events),
        "tau": tau,
        "metrics": row,
    }
    click.echo(json.dumps(doc, indent=2, sort_keys=True))
    click.echo(",".join(row.keys()))
    click.echo(",".join(row.values()))


@metrics.command("prune")
@click.argument("trace", type=click.Path(exists=True))
@click.option("--days", default=30.0, show_default=True)
def metrics_prune(trace: str, days: float) -> None:
    """Drop trace events older than the retention window."""
    removed = prune_trace(trace, days)
    click.echo(f"removed: {removed}")


# --- sim ---------------------------------------------------------------------


@main.command("sim")
@click.argument("action", type=click.Choice(["run"]))
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", default="sim_out", show_default=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True, help="Worker threads.")
@click.option("--sensitivity", default=0.0, show_default=True, help="+-pct perturbation.")
def sim(action: str, spec_path: str, out: str, jobs: int, sensitivity: float) -> None:
    """Run a sweep spec and write summary.csv + manifest.json + traces."""
    with open(spec_path) as f:
        spec = yaml.safe_load(f)
    results = run_sweep(
        spec, out, sensitivity_pct=sensitivity, max_workers=jobs
    )
    click.echo(f"jobs: {len(results)}")
    click.echo(f"summary: {Path(out) / 'summary.csv'}")
    click.echo(f"manifest: {Path(out) / 'manifest.json'}")


# --- replay ------------------------------------------------------------------


@main.command("replay")
@click.argument("action", type=click.Choice(["run"]))
@click.option(
    "--path",
    "which",
    default="all",
    show_default=True,
    type=click.Choice(["all", "premium", "local", "routed"]),
)
@click.option(
    "--backends",
    default="mock",
    show_default=True,
    type=click.Choice(["mock", "live"]),
)
@click.option("--out", default="replay_out", show_default=True, type=click.Path())
def replay_cmd(action: str, which: str, backends: str, out: str) -> None:
    """Replay the fixed 100-query workload and write the report tables."""
    if backends == "live":
        click.echo("live backends are not configured in this build", err=True)
        sys.exit(2)
    paths = ("premium", "local", "routed") if which == "all" else (which,)
    reports = run_all(paths=paths)
    write_report(reports, out)
    for name, report in reports.items():
        click.echo(
            f"{name}: cost=${report.total_cost_usd:.4f} "
            f"mean_latency={report.mean_total_ms / 1000.0:.1f}s "
            f"local_share={report.tier_share(Tier.LOCAL):.2f}"
        )


# --- serve -------------------------------------------------------------------


def build_app(secret: str, trace_path: str | None = None):
    """One FastAPI app exposing both the routing and gateway surfaces."""
    from fastapi import FastAPI
    from fastapi.routing import APIRoute

    from .gateway import GatewayCore, MockBackend
    from .governance import PolicyMode, default_policy
    from .http_api import create_gateway_app, create_router_app
    from .router import RouterConfig, RouterCore
    from .simulate import LOCAL_MODEL, PREMIUM_MODEL
    from .telemetry import TraceStore

    resources = load_resources(
        bank_path=REPO_ROOT / "configs" / "banks" / "demo_bank_89.json"
    )
    router = RouterCore(
        policy=default_policy(PolicyMode.P1),
        bank=resources.bank,
        provider=mock_provider(seed=7),
        prices=resources.prices,
        labs=resources.labs,
        catalog=resources.catalog,
        config=RouterConfig(),
    )
    backends = {
        LOCAL_MODEL: MockBackend(LOCAL_MODEL),
        PREMIUM_MODEL: MockBackend(PREMIUM_MODEL),
    }
    gateway = GatewayCore(
        router,
        backends,
        resources.overlays,
        resources.prices,
        TraceStore(trace_path),
    )
    app = FastAPI(title="labroute")
    for source in (create_router_app(router, secret), create_gateway_app(gateway, secret)):
        for route in source.routes:
            if isinstance(route, APIRoute):
                app.router.routes.append(route)
    return app


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
@click.option("--secret", default="dev-secret", show_default=True)
@click.option("--trace", default=None, type=click.Path(), help="Trace file path.")
def serve(host: str, port: int, secret: str, trace: str | None) -> None:
    """Serve the combined router + gateway HTTP API."""
    import uvicorn

    uvicorn.run(build_app(secret, trace), host=host, port=port)


if __name__ == "__main__":
    main()
