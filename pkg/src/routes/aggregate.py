import logging
from typing import Optional, Tuple

import click

from src.models.aggregator import AggregationMethod, AggregatorModel, PredictionMatrix, predict
from src.models.bandwidth import TuningResult, default_parametrization
from src.models.benchmark import MethodSpec, tune_method
from src.models.config import TuningConfig
from src.models.io import read_prediction_csv, read_query_csv, write_predictions, write_trace
from src.models.kernel import BandwidthParam, KernelSpec, Parametrization
from src.models.model_store import load_model, save_model
from src.models.simulate import rmse
from src.routes.config import config_option, resolve_tuning, tuning_options

logger = logging.getLogger(__name__)


def _method_spec(method: str, kernel: str) -> MethodSpec:
    if method == AggregationMethod.CONSENSUAL.value:
        return MethodSpec.from_token(f"{method}:{kernel}")
    if method == AggregationMethod.KERNELCOBRA.value:
        return MethodSpec(AggregationMethod.KERNELCOBRA)
    return MethodSpec(AggregationMethod.COBRA)


def _tune(
    matrix: PredictionMatrix, spec: MethodSpec, tuning: TuningConfig, seed: int,
    trace_out: Optional[str],
) -> Tuple[AggregatorModel, TuningResult]:
    model, result = tune_method(spec, matrix, tuning, seed)
    if trace_out:
        write_trace(result.trace, trace_out)
    if not result.converged:
        logger.warning("bandwidth search did not converge; using the best h seen")
    return model, result


_method_flag = click.option(
    "--method",
    type=click.Choice([m.value for m in AggregationMethod]),
    default=AggregationMethod.CONSENSUAL.value,
    show_default=True,
)
_kernel_flag = click.option(
    "--kernel", default="gauss", show_default=True,
    help="Kernel token, e.g. gauss, exp4, cgauss:sigma=1:rho1=3.",
)
_train_flag = click.option(
    "--train", "train_path", type=click.Path(exists=True, dir_okay=False), required=True,
    help="Prediction CSV on D_l: y,<learner_1>,...,<learner_M>.",
)


@click.command("fit")
@_train_flag
@_method_flag
@_kernel_flag
@click.option("--h", "bandwidth", type=float, default=None,
              help="Use this bandwidth instead of tuning.")
@click.option("--parametrization", type=click.Choice([p.value for p in Parametrization]),
              default=None, help="How a fixed --h enters the kernel.")
@click.option("--alpha", type=float, default=None, help="COBRA agreement fraction for a fixed --h.")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Model file.")
@click.option("--trace-out", type=click.Path(dir_okay=False), default=None)
@tuning_options
@config_option
def fit_model(train_path, method, kernel, bandwidth, parametrization, alpha, seed, out,
              trace_out, **options):
    """Fit an aggregation model on a prediction CSV and save it."""
    tuning = resolve_tuning(options)
    matrix = read_prediction_csv(train_path)
    spec = _method_spec(method, kernel)

    if bandwidth is None:
        model, result = _tune(matrix, spec, tuning, seed, trace_out)
        click.echo(f"h={result.h!r} loss={result.loss!r} alpha={result.alpha}")
    else:
        if spec.method is AggregationMethod.COBRA and alpha is None:
            raise click.UsageError("--alpha is required with --method cobra and a fixed --h")
        chosen = (
            Parametrization(parametrization)
            if parametrization
            else default_parametrization(spec.kernel)
            if spec.method is AggregationMethod.CONSENSUAL
            else Parametrization.SCALE
        )
        model = AggregatorModel.fit(
            matrix,
            spec.kernel,
            BandwidthParam(bandwidth, chosen),
            zero_mass_fallback=tuning.fallback,
            method=spec.method,
            alpha=alpha,
        )
    save_model(model, out)


@click.command("predict")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--queries", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Query CSV with the model's learner columns and an optional y.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def predict_queries(model_path, queries, out):
    """Predict with a saved model."""
    model = load_model(model_path)
    rows, truths = read_query_csv(queries, model.predictions.learner_names)
    result = predict(model, rows)
    write_predictions(result.values, out, truths=truths, zero_mass=result.zero_mass)
    if truths is not None:
        click.echo(f"rmse={rmse(result.values, truths)!r}")


@click.command("tune")
@_train_flag
@_method_flag
@_kernel_flag
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--trace-out", type=click.Path(dir_okay=False), default=None,
              help="CSV trace with columns iter,h,loss,grad.")
@tuning_options
@config_option
def tune_bandwidth(train_path, method, kernel, seed, trace_out, **options):
    """Select the bandwidth for a prediction CSV and report it."""
    tuning = resolve_tuning(options)
    matrix = read_prediction_csv(train_path)
    _, result = _tune(matrix, _method_spec(method, kernel), tuning, seed, trace_out)
    click.echo(
        f"h={result.h!r} parametrization={result.parametrization.value} "
        f"loss={result.loss!r} alpha={result.alpha} iterations={result.iterations} "
        f"evaluations={result.evaluations} converged={str(result.converged).lower()}"
    )
