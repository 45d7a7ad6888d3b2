"""Command-line entry points: prepare a base checkpoint, serve the API."""

from __future__ import annotations

import sys

import click

from .model import AdapterConfig, ModelConfig, build_model, load_checkpoint, save_checkpoint


@click.group()
def cli():
    pass


@cli.command()
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--vocab-size", default=512, show_default=True)
@click.option("--dim", default=64, show_default=True)
@click.option("--layers", default=2, show_default=True)
@click.option("--max-seq", default=64, show_default=True)
def prepare(out_path, seed, vocab_size, dim, layers, max_seq):
    """Create a deterministic base model checkpoint on local disk."""
    mc = ModelConfig(vocab_size=vocab_size, dim=dim, layers=layers, max_seq=max_seq)
    model = build_model(mc, AdapterConfig(), seed=seed)
    save_checkpoint(model, out_path)
    n = sum(p.numel() for p in model.parameters())
    click.echo(f"base checkpoint ({n} parameters) written to {out_path}")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--rank", default=8, show_default=True)
@click.option("--alpha", default=32.0, show_default=True)
@click.option("--dropout", default=0.1, show_default=True)
@click.option("--learning-rate", default=5e-5, show_default=True)
def serve(model_path, port, host, rank, alpha, dropout, learning_rate):
    """Load the model, then bind the wire-protocol server."""
    import uvicorn

    from .service import create_app

    try:
        adapter = AdapterConfig(
            rank=rank, alpha=alpha, dropout=dropout, learning_rate=learning_rate
        )
        model = load_checkpoint(model_path, adapter=adapter)
    except (OSError, ValueError, RuntimeError, KeyError) as e:
        click.echo(f"failed to load model: {e}", err=True)
        raise SystemExit(2)
    uvicorn.run(create_app(model), host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
