"""Command-line client for the covariance service.

Every subcommand turns files and flags into a service request and persists
the response; the numeric work happens in the service layer.  Without
--server the app runs in-process, so no daemon is needed for local use.

Exit codes: 0 success, 2 precondition failure (bad input or request),
3 numeric failure (non-SPD matrix, non-convergence).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

from .service.app import app as _app

_EXIT_CODES = {"precondition": 2, "numeric": 3}


class ServiceClient:
    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            # in-process ASGI bridge: same request/response path, no daemon
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from starlette.testclient import TestClient

                self._client = TestClient(_app)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code == 400:
            err = resp.json().get("error", {})
            click.echo(f"error: {err.get('message', 'request failed')}", err=True)
            sys.exit(_EXIT_CODES.get(err.get("code"), 2))
        if resp.status_code == 422:
            click.echo(f"error: invalid request: {resp.text}", err=True)
            sys.exit(2)
        resp.raise_for_status()
        return resp.json()


@click.group()
@click.option(
    "--server",
    envvar="GMRFCOV_SERVER",
    default=None,
    help="Base URL of a running service; default runs the app in-process.",
)
@click.pass_context
def main(ctx, server):
    """Selected covariance computation for sparse precision matrices."""
    ctx.obj = ServiceClient(server)


def _parse_dims(text: str | None) -> list[int] | None:
    if not text:
        return None
    return [int(x) for x in text.split(",") if x]


def _read_pairs(path: str | None):
    if not path:
        return None
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        i, j = line.split()[:2]
        pairs.append((int(i), int(j)))
    return pairs


@main.command()
@click.argument("kind", type=click.Choice(["ar1", "rw1", "kvar"]))
@click.option("--n", type=int, default=None, help="Chain length (ar1).")
@click.option("--phi", type=float, default=None, help="AR parameter (ar1).")
@click.option("--dims", default=None, help="Lattice extents, e.g. 10,10,10.")
@click.option("--k", type=int, default=1, help="Variables per node (kvar).")
@click.option("--lambda-seed", type=int, default=0)
@click.option("--coupling-seed", type=int, default=0)
@click.option("--out-prefix", required=True, help="Output path prefix.")
@click.pass_obj
def gen(client: ServiceClient, kind, n, phi, dims, k, lambda_seed, coupling_seed, out_prefix):
    """Generate a model and write its matrices plus a manifest."""
    out = client.post(
        "/gen",
        {
            "kind": kind,
            "n": n,
            "phi": phi,
            "dims": _parse_dims(dims),
            "k": k,
            "lambda_seed": lambda_seed,
            "coupling_seed": coupling_seed,
        },
    )
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    wrote = []
    for key, suffix in (("q_mm", ".q.mtx"), ("g_mm", ".g.mtx"), ("h_mm", ".h.mtx")):
        if out.get(key):
            p = prefix.with_name(prefix.name + suffix)
            p.write_text(out[key])
            wrote.append(str(p))
    mp = prefix.with_name(prefix.name + ".manifest.json")
    mp.write_text(json.dumps(out["manifest"], indent=1) + "\n")
    wrote.append(str(mp))
    click.echo("wrote " + " ".join(wrote))


@main.command()
@click.argument("q_file", type=click.Path(exists=True))
@click.option("--s", type=click.Choice(["diag", "pattern", "pairs"]), default="diag")
@click.option("--pairs-file", type=click.Path(exists=True), default=None)
@click.option("--out", required=True)
@click.option(
    "--memory-budget",
    type=int,
    default=None,
    envvar="GMRFCOV_MEMORY_BUDGET",
    help="Refuse if the estimated factor storage exceeds this many bytes.",
)
@click.pass_obj
def oracle(client: ServiceClient, q_file, s, pairs_file, out, memory_budget):
    """Exact selected inverse of a precision matrix."""
    payload = {
        "q_mm": Path(q_file).read_text(),
        "s": s,
        "pairs": _read_pairs(pairs_file),
        "memory_budget_bytes": memory_budget,
    }
    res = client.post("/oracle", payload)
    Path(out).write_text(res["cov_csv"])
    Path(out + ".json").write_text(json.dumps(res["stats"], indent=1) + "\n")
    click.echo(f"wrote {out} (fill {res['stats']['fill_count']})")


@main.command()
@click.argument("q_file", type=click.Path(exists=True))
@click.option(
    "--estimator",
    required=True,
    type=click.Choice(["mc", "hutchinson", "simple-rbmc", "block-rbmc", "interface"]),
)
@click.option("--n-s", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--g", "g_file", type=click.Path(exists=True), default=None)
@click.option("--h", "h_file", type=click.Path(exists=True), default=None)
@click.option("--manifest", type=click.Path(exists=True), default=None,
              help="Model manifest (provides dims and K for block methods).")
@click.option("--dims", default=None)
@click.option("--k", type=int, default=None)
@click.option("--s", type=click.Choice(["diag", "pattern", "pairs"]), default="diag")
@click.option("--pairs-file", type=click.Path(exists=True), default=None)
@click.option("--sampler", type=click.Choice(["auto", "chol", "pcg"]), default="auto")
@click.option("--delta", type=float, default=1e-9)
@click.option("--max-iter", type=int, default=None)
@click.option("--preconditioner", type=click.Choice(["none", "jacobi", "ichol0"]), default="jacobi")
@click.option("--blocks-per-dim", type=int, default=4)
@click.option("--margin", type=int, default=4)
@click.option("--n-iter", type=int, default=1)
@click.option("--probe", type=click.Choice(["rademacher", "identity"]), default="rademacher")
@click.option("--out", required=True)
@click.pass_obj
def estimate(client: ServiceClient, q_file, estimator, n_s, seed, g_file, h_file,
             manifest, dims, k, s, pairs_file, sampler, delta, max_iter,
             preconditioner, blocks_per_dim, margin, n_iter, probe, out):
    """Run a sampling estimator; writes the estimate CSV and a timing sidecar."""
    dims_list = _parse_dims(dims)
    k_val = k
    if manifest:
        man = json.loads(Path(manifest).read_text())
        dims_list = dims_list or man.get("dims")
        k_val = k_val if k_val is not None else man.get("K", 1)
    payload = {
        "q_mm": Path(q_file).read_text(),
        "g_mm": Path(g_file).read_text() if g_file else None,
        "h_mm": Path(h_file).read_text() if h_file else None,
        "estimator": estimator,
        "n_s": n_s,
        "seed": seed,
        "dims": dims_list,
        "k": k_val if k_val is not None else 1,
        "s": s,
        "pairs": _read_pairs(pairs_file),
        "sampler": sampler,
        "delta": delta,
        "max_iter": max_iter,
        "preconditioner": preconditioner,
        "blocks_per_dim": blocks_per_dim,
        "margin": margin,
        "n_iter": n_iter,
        "probe": probe,
    }
    res = client.post("/estimate", payload)
    Path(out).write_text(res["cov_csv"])
    Path(out + ".json").write_text(json.dumps(res["sidecar"], indent=1) + "\n")
    t = res["sidecar"]
    click.echo(
        f"wrote {out} (sample {t['sample_time_s']:.3f}s, "
        f"estimate {t['estimate_time_s']:.3f}s)"
    )


@main.command()
@click.argument("oracle_csv", type=click.Path(exists=True))
@click.argument("estimate_csvs", type=click.Path(exists=True), nargs=-1, required=True)
@click.option("--out", required=True)
@click.pass_obj
def compare(client: ServiceClient, oracle_csv, estimate_csvs, out):
    """Aggregate error/time/coverage of estimate runs against an oracle.

    Each estimate CSV must have its sidecar next to it (<name>.json)."""
    runs = []
    for path in estimate_csvs:
        sidecar_path = Path(path + ".json")
        if not sidecar_path.exists():
            click.echo(f"error: missing sidecar {sidecar_path}", err=True)
            sys.exit(2)
        runs.append(
            {
                "cov_csv": Path(path).read_text(),
                "sidecar": json.loads(sidecar_path.read_text()),
            }
        )
    res = client.post(
        "/compare", {"oracle_csv": Path(oracle_csv).read_text(), "runs": runs}
    )
    Path(out).write_text(res["results_csv"])
    click.echo(res["table"])
    click.echo(f"wrote {out}")


@main.command(name="ar1-verify")
@click.option("--phis", default="0.1,0.3,0.5,0.7,0.9")
@click.option("--ms", default="1,3,11")
@click.option("--n-s", type=int, default=50)
@click.option("--reps", type=int, default=200)
@click.option("--n", type=int, default=2000)
@click.option("--seed", type=int, default=0)
@click.option("--tolerance", type=float, default=0.15)
@click.option("--mc-tolerance", type=float, default=0.10)
@click.option("--out", required=True)
@click.pass_obj
def ar1_verify(client: ServiceClient, phis, ms, n_s, reps, n, seed, tolerance,
               mc_tolerance, out):
    """Check the closed-form AR(1) error laws against empirical RMSE."""
    res = client.post(
        "/ar1-verify",
        {
            "phis": [float(x) for x in phis.split(",")],
            "ms": [int(x) for x in ms.split(",")],
            "n_s": n_s,
            "reps": reps,
            "n": n,
            "seed": seed,
            "tolerance": tolerance,
            "mc_tolerance": mc_tolerance,
        },
    )
    Path(out).write_text(res["csv"])
    for row in res["rows"]:
        tag = "pass" if row["passed"] else "FAIL"
        click.echo(
            f"{tag} phi={row['phi']} M={row['M']} {row['estimator']}: "
            f"analytic {row['analytic_rmse']:.4f} empirical {row['empirical_rmse']:.4f}"
        )
    click.echo(("all passed" if res["passed"] else "some cells failed") + f"; wrote {out}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the covariance service."""
    import uvicorn

    uvicorn.run("gmrfcov.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
