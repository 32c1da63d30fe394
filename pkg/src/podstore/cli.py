"""Command-line client for the checkpoint-store service.

All commands go through the HTTP API: against a remote server with
``--server URL``, otherwise against the bundled app in-process (no socket
involved). ``serve`` starts the service with uvicorn.
"""

from __future__ import annotations

import json
import sys
from typing import Optional

import click
import httpx

DEFAULT_SETTINGS_KEYS = (
    "page_size",
    "c_pod",
    "max_pod_depth",
    "thesaurus_bytes",
    "optimizer",
    "seed",
)


def _client(server: Optional[str]) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    from .service.app import create_app

    transport = httpx.ASGITransport(app=create_app())
    return httpx.Client(transport=transport, base_url="http://podstore.local", timeout=None)


def _settings(optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes, seed) -> dict:
    return {
        "optimizer": optimizer,
        "c_pod": c_pod,
        "max_pod_depth": max_pod_depth,
        "page_size": page_size,
        "thesaurus_bytes": thesaurus_bytes,
        "seed": seed,
    }


def _fail(resp: httpx.Response) -> None:
    detail = resp.json().get("detail", resp.text) if resp.content else resp.text
    message = str(detail)
    click.echo(f"error: {message}", err=True)
    sys.exit(2 if "TooLarge" in message else 1)


common_options = [
    click.option("--server", default=None, help="Remote service URL (default: in-process)."),
    click.option("--optimizer", default="lga", show_default=True,
                 type=click.Choice(["lga", "lga-0", "lga-1", "bundle-all", "split-all",
                                    "random", "tbh", "exhaustive"])),
    click.option("--c-pod", default=1200.0, show_default=True, type=float),
    click.option("--max-pod-depth", default=3, show_default=True, type=int),
    click.option("--page-size", default=1024, show_default=True, type=int),
    click.option("--thesaurus-bytes", default=64 * 1024 * 1024, show_default=True, type=int),
    click.option("--seed", default=0, show_default=True, type=int),
]


def with_common(fn):
    for option in reversed(common_options):
        fn = option(fn)
    return fn


@click.group()
def main() -> None:
    """Benchmark and inspect the incremental checkpoint store."""


@main.command()
@click.argument("script", type=click.Path(exists=True, dir_okay=False))
@with_common
@click.option("--backend", default="mem", show_default=True, type=click.Choice(["mem", "dir"]))
@click.option("--store-dir", default=None, help="Directory for the dir backend.")
@click.option("--async", "use_async", is_flag=True, help="Save on the podding worker.")
@click.option("--out", default=None, type=click.Path(dir_okay=False),
              help="Write per-checkpoint CSV here instead of stdout.")
def run(script, server, optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes,
        seed, backend, store_dir, use_async, out) -> None:
    """Replay a workload script and report metrics."""
    with open(script, "r", encoding="utf-8") as fh:
        text = fh.read()
    payload = {
        "script": text,
        "settings": _settings(optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes, seed),
        "backend": backend,
        "store_dir": store_dir,
        "use_async": use_async,
        "seed": seed,
    }
    with _client(server) as client:
        resp = client.post("/bench/run", json=payload)
        if resp.status_code != 200:
            _fail(resp)
        body = resp.json()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(body["csv"])
    else:
        click.echo(body["csv"], nl=False)
    click.echo(json.dumps({"summary": body["summary"], "audit_ok": body["audit_ok"]}, indent=2))
    if not body["audit_ok"]:
        sys.exit(1)


@main.command("sweep-mutation")
@with_common
@click.option("--scale", default=0.01, show_default=True, type=float)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def sweep_mutation(server, optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes,
                   seed, scale, out) -> None:
    """Sweep mutation fractions and report storage per fraction."""
    payload = {
        "scale": scale,
        "settings": _settings(optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes, seed),
    }
    with _client(server) as client:
        resp = client.post("/bench/sweep-mutation", json=payload)
        if resp.status_code != 200:
            _fail(resp)
        body = resp.json()
    text = json.dumps(body["points"], indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


@main.command("sweep-scale")
@with_common
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def sweep_scale(server, optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes,
                seed, out) -> None:
    """Replay the size ladder plus the small exhaustive-eligible instances."""
    payload = {
        "settings": _settings(optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes, seed),
    }
    with _client(server) as client:
        resp = client.post("/bench/sweep-scale", json=payload)
        if resp.status_code != 200:
            _fail(resp)
        body = resp.json()
    text = json.dumps(body["points"], indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


@main.command()
@with_common
@click.option("--strategies", default="lga,bundle-all,split-all", show_default=True,
              help="Comma-separated strategy names.")
@click.option("--scale", default=0.002, show_default=True, type=float)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def compare(server, optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes,
            seed, strategies, scale, out) -> None:
    """Replay the mutation sweep under several optimizers side by side."""
    payload = {
        "strategies": [s.strip() for s in strategies.split(",") if s.strip()],
        "scale": scale,
        "settings": _settings(optimizer, c_pod, max_pod_depth, page_size, thesaurus_bytes, seed),
    }
    with _client(server) as client:
        resp = client.post("/bench/compare", json=payload)
        if resp.status_code != 200:
            _fail(resp)
        body = resp.json()
    text = json.dumps(body["rows"], indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


@main.command()
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
@click.option("--seed", default=0, show_default=True, type=int)
def verify(server, seed) -> None:
    """Run the property suites (round-trip, cost bounds, dedup, async)."""
    with _client(server) as client:
        resp = client.post("/verify", json={"seed": seed})
        if resp.status_code != 200:
            _fail(resp)
        body = resp.json()
    for check in body["checks"]:
        status = "PASS" if check["ok"] else "FAIL"
        click.echo(f"{status} {check['name']} ({check['detail']})")
    if not body["ok"]:
        sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port) -> None:
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("podstore.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
