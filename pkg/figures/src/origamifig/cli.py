"""Command line entry point: ``render --kind ... --in ... --out ...``."""

import sys

import click

from .io import SchemaError
from .render import FIGURE_KINDS, FigureJob, render


@click.command()
@click.option("--kind", required=True,
              type=click.Choice(FIGURE_KINDS),
              help="figure kind to render")
@click.option("--in", "inputs", required=True, multiple=True,
              help="input data file; repeatable for mse_bars")
@click.option("--out", "output", required=True,
              help="output image path (extension selects the format)")
@click.option("--stride", default=1, show_default=True,
              help="plot every Nth row (decimation is off by default)")
@click.option("--title", default=None, help="optional figure title")
@click.option("--dpi", default=150, show_default=True,
              help="output resolution")
def main(kind, inputs, output, stride, title, dpi):
    """Render a publication-style figure from origamirc data files."""
    try:
        job = FigureJob(kind=kind, inputs=inputs, output=output,
                        stride=stride, title=title, dpi=dpi)
        render(job)
    except SchemaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(output)


if __name__ == "__main__":
    main()
