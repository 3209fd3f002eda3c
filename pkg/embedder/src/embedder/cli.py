"""embedder CLI: `serve` runs the HTTP sidecar, `export` writes KSEV files
for fully offline consumers."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .ksev import write_ksev
from .model import DEFAULT_MODEL, ModelLoadError, load_model


@click.group()
@click.version_option(package_name="embedder")
def main():
    """Batch sentence-embedding sidecar."""


@main.command("serve")
@click.option("--port", type=int, default=8099, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--model", "model_name", default=DEFAULT_MODEL, show_default=True,
              help="sentence-transformers model name, or hash://<dim>.")
@click.option("--max-batch", type=int, default=256, show_default=True)
def cmd_serve(port, host, model_name, max_batch):
    """Serve POST /embed and GET /health."""
    import uvicorn

    from .service import create_app
    try:
        app = create_app(model_name, max_batch=max_batch)
    except ModelLoadError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("export")
@click.option("--in", "in_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Input text file, one sentence per line.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--model", "model_name", default=DEFAULT_MODEL, show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
def cmd_export(in_path, out_path, model_name, batch_size):
    """Embed a text file and write the KSEV vector file + manifest."""
    lines = [line for line in Path(in_path).read_text("utf-8").splitlines()
             if line.strip()]
    if not lines:
        click.echo(f"error: {in_path} contains no sentences", err=True)
        sys.exit(2)
    try:
        model = load_model(model_name)
    except ModelLoadError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    import numpy as np
    chunks = [model.encode(lines[i:i + batch_size])
              for i in range(0, len(lines), batch_size)]
    vectors = np.vstack(chunks)
    count = write_ksev(out_path, lines, vectors)
    click.echo(f"wrote {count} vectors (dim {model.dim}) to {out_path}")


if __name__ == "__main__":
    main()
