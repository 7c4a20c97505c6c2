"""Command-line interface: generate data, fit, apply, sweep, and score.

Subcommands mirror the pipeline: ``gen`` produces benchmark CSVs, ``fit``
trains one method (classification or clustering) and writes the model plus
a JSON report, ``classify``/``cluster`` apply a saved model, ``sweep`` runs
k-fold cross-validation, and ``eval`` scores prediction files. Flags mirror
the experiment config; ``--config`` supplies a JSON file whose values are
overridden by explicitly given flags. ``SUBGAUSS_SEED`` sets the default
seed.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, cgmm, pipeline
from .dataset import DataError, LabeledDataset, load_csv
from .evaluate import classification_error, clustering_error

CONFIG_FLAGS = (
    "method", "task", "d", "n_components", "cov_flavor", "gamma",
    "bandwidth_lo", "bandwidth_hi", "n_bandwidths", "folds", "seed",
    "inner_cm", "max_outer", "tol", "n_init", "standardize", "n_jobs",
)


def _config_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="JSON config file; flags override it."),
        click.option("--method", type=click.Choice(pipeline.METHODS), default="gmm-mpca"),
        click.option("--d", type=int, default=2,
                     help="Constrained-subspace dimension (rank for mda-rr)."),
        click.option("--n-components", type=int, default=3,
                     help="Mixture components per class (clusters when clustering)."),
        click.option("--cov-flavor", type=click.Choice(["full", "diagonal"]), default="full"),
        click.option("--gamma", type=float, default=60.0,
                     help="Percent of subspace weight on the class means (mpca-mean)."),
        click.option("--bandwidth-lo", type=float, default=0.1),
        click.option("--bandwidth-hi", type=float, default=2.0),
        click.option("--n-bandwidths", type=int, default=20),
        click.option("--folds", type=int, default=5),
        click.option("--seed", type=int, default=0, envvar="SUBGAUSS_SEED",
                     show_envvar=True),
        click.option("--inner-cm", type=int, default=3),
        click.option("--max-outer", type=int, default=500),
        click.option("--tol", type=float, default=1e-6),
        click.option("--n-init", type=int, default=None,
                     help="EM initializations per fit (default: 1, clustering 10)."),
        click.option("--standardize/--no-standardize", default=False,
                     help="Scale features to unit variance before fitting."),
        click.option("--jobs", "n_jobs", type=int, default=1,
                     help="Parallel workers for per-level fits."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _build_config(ctx, values: dict, **overrides) -> pipeline.ExperimentConfig:
    """Config file < environment < explicit flags, as documented."""
    doc = {}
    if values.get("config_path"):
        doc = json.loads(Path(values["config_path"]).read_text())
    merged = {}
    for name in CONFIG_FLAGS:
        if name not in values:
            continue
        source = ctx.get_parameter_source(name)
        explicit = source is not None and source.name in ("COMMANDLINE", "ENVIRONMENT")
        if explicit or name not in doc:
            merged[name] = values[name]
        else:
            merged[name] = doc[name]
    merged.update(overrides)
    try:
        return pipeline.ExperimentConfig.from_json_dict(merged)
    except pipeline.PipelineError as exc:
        raise click.ClickException(str(exc)) from None


def _load(path, label_col, header) -> LabeledDataset:
    if label_col is not None and not isinstance(label_col, int):
        try:
            label_col = int(label_col)
        except ValueError:
            pass  # keep as a column name; requires --header
    try:
        return load_csv(path, label_column=label_col, header=header)
    except DataError as exc:
        raise click.ClickException(str(exc)) from None


def _relabel_like(reference: LabeledDataset, ds: LabeledDataset) -> LabeledDataset:
    """Map ds's labels onto the reference's label coding."""
    if not ds.labeled:
        return ds
    index = {name: k + 1 for k, name in enumerate(reference.label_names)}
    try:
        y = np.array([index[ds.label_names[v - 1]] for v in ds.y])
    except KeyError as exc:
        raise click.ClickException(
            f"test label {exc.args[0]!r} never appears in the training data") from None
    return LabeledDataset(ds.X, y, reference.K, ds.feature_names,
                          reference.label_names)


def _write_predictions(path, values, column):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([column])
        for v in values:
            writer.writerow([v])


@click.group()
@click.version_option(version=__version__)
def main():
    """Subspace-constrained Gaussian mixtures for classification and clustering."""


@main.group()
def gen():
    """Generate benchmark datasets as CSV."""


@gen.command("waveform")
@click.option("--n", type=int, required=True, help="Total rows (balanced 3 classes).")
@click.option("--seed", type=int, default=0, envvar="SUBGAUSS_SEED")
@click.option("--noiseless", is_flag=True, default=False)
@click.option("--out", type=click.Path(), required=True)
def gen_waveform_cmd(n, seed, noiseless, out):
    """Three-class, 21-feature waveform data."""
    ds = pipeline.gen_waveform(n, seed, noiseless=noiseless)
    _write_dataset_csv(ds, out)
    click.echo(f"wrote {ds.n} rows x {ds.p} features to {out}")


@gen.command("synthetic")
@click.option("--clusters", type=int, default=5)
@click.option("--scale", type=float, default=0.125)
@click.option("--n-per", type=int, default=200)
@click.option("--seed", type=int, default=0, envvar="SUBGAUSS_SEED")
@click.option("--ambient-dim", type=int, default=32)
@click.option("--subspace-dim", type=int, default=2)
@click.option("--mean-spread", type=float, default=16.0)
@click.option("--out", type=click.Path(), required=True)
@click.option("--subspace-out", type=click.Path(), default=None,
              help="Write the generating subspace as JSON.")
def gen_synthetic_cmd(clusters, scale, n_per, seed, ambient_dim, subspace_dim,
                      mean_spread, out, subspace_out):
    """Gaussian clusters whose means sit exactly in a low-dim subspace."""
    ds, sub = pipeline.gen_constrained_synthetic(
        means_subspace_dim=subspace_dim, n_clusters=clusters, scale=scale,
        n_per=n_per, seed=seed, ambient_dim=ambient_dim, mean_spread=mean_spread)
    _write_dataset_csv(ds, out)
    if subspace_out:
        Path(subspace_out).write_text(
            json.dumps(sub.to_json_dict(), sort_keys=True) + "\n")
    click.echo(f"wrote {ds.n} rows x {ds.p} features to {out}")


def _write_dataset_csv(ds: LabeledDataset, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        names = list(ds.feature_names or (f"x{j + 1}" for j in range(ds.p)))
        writer.writerow(names + (["label"] if ds.labeled else []))
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]]
            if ds.labeled:
                row.append(ds.label_names[ds.y[i] - 1])
            writer.writerow(row)


@main.command("fit")
@click.option("--train", "train_path", type=click.Path(exists=True), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True), default=None)
@click.option("--label-col", default=None, help="Label column name or index.")
@click.option("--header/--no-header", default=True)
@click.option("--task", type=click.Choice(["classify", "cluster"]), default="classify")
@_config_options
@click.option("--model-out", type=click.Path(), default=None)
@click.option("--report-out", type=click.Path(), default=None)
@click.option("--plot-out", type=click.Path(), default=None,
              help="Per-level sweep data as CSV.")
@click.pass_context
def fit_cmd(ctx, train_path, test_path, label_col, header, task, model_out,
            report_out, plot_out, config_path, **values):
    """Fit one method on a training CSV and report the selected model."""
    values["config_path"] = config_path
    values["task"] = task
    config = _build_config(ctx, values)
    if config.task == "classify" and label_col is None:
        raise click.ClickException("classification needs --label-col")
    train = _load(train_path, label_col, header)
    test = None
    if test_path is not None:
        test = _load(test_path, label_col, header)
        if test.labeled and train.labeled:
            test = _relabel_like(train, test)
    try:
        report = pipeline.run_method(config, train, test)
    except (pipeline.PipelineError, DataError, ValueError) as exc:
        raise click.ClickException(str(exc)) from None
    if model_out:
        doc = report.model.to_json_dict()
        if report.feature_scale is not None:
            doc["feature_scale"] = report.feature_scale
        if train.label_names is not None:
            doc["label_names"] = list(train.label_names)
        Path(model_out).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        report.model_path = str(model_out)
    if report_out:
        pipeline.emit_report(report, report_out)
    if plot_out:
        pipeline.emit_plotdata(report, plot_out)
    _echo_summary(report)


def _echo_summary(report):
    click.echo(f"method={report.method} task={report.task} "
               f"selected_level={report.selected_level} "
               f"train_loglik={report.train_loglik:.4f}")
    if report.evaluation is not None:
        click.echo(f"{report.eval_kind}: error_rate="
                   f"{report.evaluation.error_rate:.4f}")


def _load_model_doc(path):
    doc = json.loads(Path(path).read_text())
    label_names = doc.pop("label_names", None)
    scale = doc.pop("feature_scale", None)
    if doc.get("flavor") == "MDA-RR":
        from .mda import RrMdaModel
        model = RrMdaModel.from_json_dict(doc)
    else:
        model = cgmm.ConstrainedGmm.from_json_dict(doc)
    return model, scale, label_names


@main.command("classify")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--label-col", default=None,
              help="If given, score the predictions against this column.")
@click.option("--header/--no-header", default=True)
@click.option("--out", type=click.Path(), default=None, help="Predictions CSV.")
def classify_cmd(model_path, data_path, label_col, header, out):
    """Apply a saved classification model to a CSV."""
    model, scale, label_names = _load_model_doc(model_path)
    ds = _load(data_path, label_col, header)
    X = ds.X / np.asarray(scale) if scale is not None else ds.X
    labels, _ = cgmm.classify(model, X)
    shown = ([label_names[v - 1] for v in labels] if label_names
             else [str(v) for v in labels])
    if out:
        _write_predictions(out, shown, "predicted")
    if ds.labeled:
        if label_names:
            index = {name: k + 1 for k, name in enumerate(label_names)}
            try:
                truth = np.array([index[ds.label_names[v - 1]] for v in ds.y])
            except KeyError as exc:
                raise click.ClickException(
                    f"label {exc.args[0]!r} unknown to the model") from None
        else:
            truth = ds.y
        res = classification_error(truth, labels)
        click.echo(f"error_rate={res.error_rate:.4f}")
    elif not out:
        click.echo("\n".join(shown))


@main.command("cluster")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--label-col", default=None,
              help="If given, score the matched clustering error against it.")
@click.option("--header/--no-header", default=True)
@click.option("--out", type=click.Path(), default=None, help="Assignments CSV.")
def cluster_cmd(model_path, data_path, label_col, header, out):
    """Assign clusters with a saved one-class model."""
    model, scale, _ = _load_model_doc(model_path)
    ds = _load(data_path, label_col, header)
    X = ds.X / np.asarray(scale) if scale is not None else ds.X
    labels = cgmm.cluster(model, X)
    if out:
        _write_predictions(out, labels.tolist(), "cluster")
    if ds.labeled:
        K = max(ds.K, int(labels.max()))
        res = clustering_error(ds.y, labels, K)
        click.echo(f"clustering_error={res.error_rate:.4f}")
    elif not out:
        click.echo("\n".join(str(v) for v in labels))


@main.command("sweep")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--label-col", required=True)
@click.option("--header/--no-header", default=True)
@_config_options
@click.option("--report-out", type=click.Path(), default=None)
@click.pass_context
def sweep_cmd(ctx, data_path, label_col, header, report_out, config_path, **values):
    """K-fold cross-validation of one method over the bandwidth sweep."""
    values["config_path"] = config_path
    config = _build_config(ctx, values, task="classify")
    ds = _load(data_path, label_col, header)
    try:
        summary = pipeline.cross_validate(config, ds)
    except (pipeline.PipelineError, DataError, ValueError) as exc:
        raise click.ClickException(str(exc)) from None
    if report_out:
        pipeline.emit_report(summary, report_out)
    click.echo(f"mean_error={summary['mean_error']:.4f} over {config.folds} folds "
               f"({', '.join(f'{e:.4f}' for e in summary['per_fold_error'])})")


@main.command("eval")
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--truth-col", required=True, help="Label column in the truth CSV.")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--pred-col", default=None,
              help="Column in the predictions CSV (default: last).")
@click.option("--header/--no-header", default=True)
@click.option("--mode", type=click.Choice(["classification", "clustering"]),
              default="classification")
@click.option("--k", type=int, default=None, help="Label range for clustering mode.")
@click.option("--out", type=click.Path(), default=None, help="Metrics JSON.")
def eval_cmd(truth_path, truth_col, pred_path, pred_col, header, mode, k, out):
    """Score a predictions file against ground-truth labels."""
    truth_ds = _load(truth_path, truth_col, header)
    if not truth_ds.labeled:
        raise click.ClickException("truth file has no labels")
    with Path(pred_path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    names = rows[0] if header else None
    body = rows[1:] if header else rows
    if pred_col is None:
        idx = len(body[0]) - 1
    elif names and pred_col in names:
        idx = names.index(pred_col)
    else:
        idx = int(pred_col)
    tokens = [r[idx].strip() for r in body]
    if len(tokens) != truth_ds.n:
        raise click.ClickException(
            f"{len(tokens)} predictions for {truth_ds.n} truth rows")

    if mode == "classification":
        index = {name: i + 1 for i, name in enumerate(truth_ds.label_names)}
        try:
            pred = np.array([index[t] for t in tokens])
        except KeyError as exc:
            raise click.ClickException(
                f"predicted label {exc.args[0]!r} not present in truth") from None
        res = classification_error(truth_ds.y, pred)
    else:
        seen: dict[str, int] = {}
        pred = np.array([seen.setdefault(t, len(seen) + 1) for t in tokens])
        K = k or max(truth_ds.K, int(pred.max()))
        res = clustering_error(truth_ds.y, pred, K)
    if out:
        Path(out).write_text(json.dumps(res.to_json_dict(), sort_keys=True,
                                        indent=2) + "\n")
    click.echo(f"error_rate={res.error_rate:.4f}")


if __name__ == "__main__":
    sys.exit(main())
