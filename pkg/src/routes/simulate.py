import logging

import click

from src.models.io import write_dataset_csv
from src.models.simulate import InputDesign, SimDesign, generate

logger = logging.getLogger(__name__)


@click.command("simulate")
@click.option("--model", "model_id", type=click.IntRange(1, 10), required=True,
              help="Simulation model 1..10.")
@click.option("--design", type=click.Choice([d.value for d in InputDesign]),
              default=InputDesign.UNCORRELATED.value, show_default=True)
@click.option("--n", type=click.IntRange(min=1), default=None,
              help="Sample size (model default when omitted).")
@click.option("--d", type=click.IntRange(min=1), default=None,
              help="Input dimension (model default when omitted).")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Output CSV with columns y,x1,...,xd.")
def simulate(model_id, design, n, d, seed, out):
    """
    Generate a dataset from one of the ten simulation models.

    Example:
        simulate --model 3 --design correlated --n 600 --d 100 --seed 42 --out data.csv
    """
    sim = SimDesign(model_id=model_id, design=InputDesign(design), n=n, d=d, seed=seed)
    X, y = generate(sim)
    write_dataset_csv(X, y, out)
    click.echo(f"model {sim.model_id} ({sim.design.value}): n={sim.n} d={sim.d} -> {out}")
