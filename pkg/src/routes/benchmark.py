import logging
import threading

import click

from src.models.benchmark import BenchmarkPlan, BenchmarkRunner, parse_methods
from src.models.learners import parse_roster
from src.models.simulate import InputDesign, SimDesign, SplitPlan
from src.routes.config import config_option, get_config_manager, resolve_tuning, tuning_options

logger = logging.getLogger(__name__)

# Runner of the benchmark in progress, for signal-driven shutdown
_active_runner = None
_active_runner_lock = threading.Lock()


@click.command("benchmark")
@click.option("--model", "model_id", type=click.IntRange(1, 10), default=None,
              help="Simulation model to replicate.")
@click.option("--design", type=click.Choice([d.value for d in InputDesign]),
              default=InputDesign.UNCORRELATED.value, show_default=True)
@click.option("--n", type=click.IntRange(min=10), default=None)
@click.option("--d", type=click.IntRange(min=1), default=None)
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Dataset CSV (y,x1,...,xd) instead of a simulation model.")
@click.option("--train-predictions", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Prediction CSV on D_l replacing the learner roster.")
@click.option("--test-predictions", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Prediction CSV on the test part.")
@click.option("--roster", default=None, help="e.g. knn:k=5,ridge:lambda=1.0,tree")
@click.option("--methods", default=None, help="e.g. consensual:gauss,cobra,kernelcobra")
@click.option("--replications", type=click.IntRange(min=1), default=None)
@click.option("--threads", type=click.IntRange(min=1), default=None)
@click.option("--seed", "base_seed", type=click.IntRange(min=0), default=None)
@click.option("--test-fraction", type=float, default=None)
@click.option("--timing/--no-timing", default=None,
              help="--no-timing writes 0 in the timing columns.")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Report CSV: method,replication,rmse,tune_ms,predict_ms.")
@click.option("--summary-out", type=click.Path(dir_okay=False), default=None)
@tuning_options
@config_option
def benchmark(model_id, design, n, d, dataset, train_predictions, test_predictions, roster,
              methods, replications, threads, base_seed, test_fraction, timing, out,
              summary_out, **options):
    """Run replicated comparisons of base learners and aggregation methods."""
    global _active_runner
    tuning = resolve_tuning(options)
    config = get_config_manager().override_benchmark(
        roster=roster,
        methods=methods,
        replications=replications,
        threads=threads,
        base_seed=base_seed,
        test_fraction=test_fraction,
        timing=timing,
    )
    sim = None
    if model_id is not None:
        sim = SimDesign(model_id=model_id, design=InputDesign(design), n=n, d=d)
    plan = BenchmarkPlan(
        methods=parse_methods(config.methods),
        design=sim,
        dataset_path=dataset,
        train_predictions_path=train_predictions,
        test_predictions_path=test_predictions,
        roster=() if train_predictions else parse_roster(config.roster),
        tuning=tuning,
        split=SplitPlan(
            test_fraction=config.test_fraction, dk_fraction_of_train=config.dk_fraction
        ),
        replications=config.replications,
        base_seed=config.base_seed,
        threads=config.threads,
        timing=config.timing,
    )

    runner = BenchmarkRunner(plan)
    with _active_runner_lock:
        _active_runner = runner
    try:
        report = runner.run()
    finally:
        with _active_runner_lock:
            _active_runner = None

    report.write(out, summary_out)
    for summary in report.summaries:
        click.echo(
            f"{summary.method}: mean_rmse={summary.mean_rmse:.6g} "
            f"se={summary.se_rmse:.3g} replications={summary.replications}"
        )
    if not report.complete:
        click.echo(
            f"incomplete: {len(report.failures)} of {plan.replications} replications "
            f"failed or were cancelled",
            err=True,
        )


def shutdown_benchmark():
    """Cancel pending replications of the running benchmark."""
    with _active_runner_lock:
        runner = _active_runner
    if runner:
        runner.shutdown()
