"""Command-line interface: a thin client of the HTTP service.

By default requests run against the app in-process (no daemon needed); set
--server or MULTIID_SERVER to talk to a remote instance. Exit codes:
0 success, 2 config error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import json
import os
import sys
from typing import Optional

import click
import httpx


def _client(server: Optional[str]) -> httpx.Client:
    server = server or os.environ.get("MULTIID_SERVER")
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    # In-process transport: same request/response path as a live server,
    # no daemon required.
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _call(ctx, method: str, path: str, payload: Optional[dict] = None) -> dict:
    try:
        with _client(ctx.obj.get("server")) as client:
            resp = client.request(method, path, json=payload)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(4)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", {})
        except Exception:
            detail = {}
        if isinstance(detail, dict) and "message" in detail:
            click.echo(f"error [{detail.get('code')}]: {detail['message']}", err=True)
            sys.exit(int(detail.get("exit_code", 4)))
        click.echo(f"error: HTTP {resp.status_code}: {resp.text}", err=True)
        sys.exit(4)
    return resp.json()


def _emit(data: dict) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.option("--server", default=None, help="Base URL of a running multiid service; "
              "in-process when omitted.")
@click.pass_context
def main(ctx, server):
    """Dataset construction and evaluation engine for multi-identity generation."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.pass_context
def health(ctx):
    """Check service availability."""
    _emit(_call(ctx, "GET", "/health"))


@main.command()
@click.argument("manifest_path")
@click.argument("blob_path")
@click.pass_context
def ingest(ctx, manifest_path, blob_path):
    """Validate and summarize a corpus (JSON manifest + MIDE blob)."""
    _emit(_call(ctx, "POST", "/ingest",
                {"manifest_path": manifest_path, "blob_path": blob_path}))


def _stage_command(name: str, help_text: str):
    @main.command(name=name, help=help_text)
    @click.option("--config", "config_path", required=True)
    @click.option("--threshold", type=float, default=None)
    @click.option("--seed", type=int, default=None)
    @click.option("--output-dir", default=None)
    @click.option("--worker-count", type=int, default=None)
    @click.pass_context
    def cmd(ctx, config_path, threshold, seed, output_dir, worker_count):
        overrides = {k: v for k, v in {
            "threshold": threshold, "seed": seed, "output_dir": output_dir,
            "worker_count": worker_count,
        }.items() if v is not None}
        _emit(_call(ctx, "POST", "/stage",
                    {"config_path": config_path, "stage": name, "overrides": overrides}))

    return cmd


_stage_command("cluster", "Cluster single-ID query groups with DBSCAN.")
_stage_command("bank", "Build the identity reference bank.")
_stage_command("assign", "Assign identities to multi-ID faces via the bank.")
_stage_command("pair", "Build paired training samples.")
_stage_command("split", "Split off the long-tail benchmark with zero identity overlap.")
_stage_command("stats", "Emit corpus statistics (JSON + CSV).")


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--seed", type=int, default=None)
@click.option("--output-dir", default=None)
@click.pass_context
def pipeline(ctx, config_path, seed, output_dir):
    """Run cluster -> bank -> assign -> pair -> split -> stats in order."""
    overrides = {k: v for k, v in {"seed": seed, "output_dir": output_dir}.items()
                 if v is not None}
    data = _call(ctx, "POST", "/pipeline",
                 {"config_path": config_path, "overrides": overrides})
    for st in data["stages"]:
        click.echo(f"{st['stage']:>8s}: {st['state']}")
    click.echo(f"run log: {data['run_log']}")


@main.command(name="eval")
@click.option("--config", "config_path", required=True)
@click.option("--splits", "splits_path", required=True)
@click.option("--generated-manifest", required=True)
@click.option("--generated-blob", required=True)
@click.option("--output-dir", required=True)
@click.pass_context
def eval_cmd(ctx, config_path, splits_path, generated_manifest, generated_blob, output_dir):
    """Score a generated corpus against the benchmark."""
    data = _call(ctx, "POST", "/eval", {
        "config_path": config_path,
        "splits_path": splits_path,
        "generated_manifest": generated_manifest,
        "generated_blob": generated_blob,
        "output_dir": output_dir,
    })
    click.echo(data["summary"])
    click.echo(f"report: {data['report_json']}")


@main.command(name="losses-check")
@click.option("--seed", type=int, default=0)
@click.pass_context
def losses_check(ctx, seed):
    """Run the training-loss conformance table."""
    data = _call(ctx, "POST", "/losses/check", {"seed": seed})
    width = max(len(r["name"]) for r in data["rows"])
    for r in data["rows"]:
        mark = "PASS" if r["passed"] else "FAIL"
        click.echo(f"[{mark}] {r['name']:<{width}s}  {r['detail']}")
    if not data["all_passed"]:
        sys.exit(4)


@main.command(name="make-fixture")
@click.option("--output-dir", required=True)
@click.option("--identities", "n_identities", type=int, default=20)
@click.option("--members", "members_per_identity", type=int, default=10)
@click.option("--images", "n_images", type=int, default=60)
@click.option("--dim", type=int, default=64)
@click.option("--seed", type=int, default=0)
@click.pass_context
def make_fixture(ctx, output_dir, n_identities, members_per_identity, n_images, dim, seed):
    """Generate a synthetic corpus + config for demos and end-to-end runs."""
    _emit(_call(ctx, "POST", "/fixture", {
        "output_dir": output_dir,
        "n_identities": n_identities,
        "members_per_identity": members_per_identity,
        "n_images": n_images,
        "dim": dim,
        "seed": seed,
    }))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8008)
def serve(host, port):
    """Run the HTTP service with uvicorn."""
    import uvicorn

    uvicorn.run("multiid.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
