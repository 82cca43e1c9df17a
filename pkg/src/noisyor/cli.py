"""Command-line entry point orchestrating the full pipeline.

Every subcommand writes its artifacts into a run directory together with a
manifest (config, seeds, input hashes) sufficient to reproduce the run.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from .data import Dataset
from .evaluate import (
    evaluate_model,
    make_task_instances,
    naive_labels_train,
    noise_tolerant_predict_fn,
    noise_tolerant_train,
    noisyor_predict_fn,
    oracle_mle_train,
    results_report,
    save_report,
)
from .infer import GibbsConfig, heldout_anchor_score
from .model import ModelParams, NoiseModel
from .moments import moments_init
from .synth import (
    ScenarioSpec,
    generate_dataset,
    generate_ground_truth,
    read_ground_truth,
    write_ground_truth,
)
from .textproc import ingest_corpus, load_visits_jsonl
from .train import Checkpoint, TrainConfig, train


class CliError(click.ClickException):
    def __init__(self, category: str, message: str):
        super().__init__(f"[{category}] {message}")


def _file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _load_config(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("config", f"cannot read config {path}: {exc}")
    unknown = set(config) - allowed
    if unknown:
        raise CliError("config", f"unknown config keys: {sorted(unknown)}")
    return config


def _write_manifest(out: Path, subcommand: str, config: dict, inputs: dict,
                    outputs: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": {k: _file_hash(v) for k, v in inputs.items()},
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON config; flags override it.")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default="run",
                      show_default=True)(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True)(fn)
    fn = click.option("--deterministic", is_flag=True, default=False)(fn)
    return fn


@click.group(context_settings={"auto_envvar_prefix": "NOISYOR"})
def main():
    """Noisy-or tagging models learned from anchor labels."""


@main.command()
@common_options
@click.option("--m", "m_", type=int, default=10, show_default=True)
@click.option("--n", "n_", type=int, default=100, show_default=True)
@click.option("--records", type=int, default=20000, show_default=True)
@click.option("--anchor-fn-rate", type=float, default=0.20, show_default=True)
@click.option("--anchor-fp-rate", type=float, default=0.05, show_default=True)
@click.option("--min-conditions", type=int, default=2, show_default=True)
def synth(config_path, seed, out_dir, threads, deterministic, m_, n_, records,
          anchor_fn_rate, anchor_fp_rate, min_conditions):
    """Generate a ground-truth model and a labeled synthetic dataset."""
    cfg = _load_config(config_path, set(ScenarioSpec().__dict__))
    spec = ScenarioSpec(**{**dict(
        m=m_, n=n_, n_records=records, anchor_fn_rate=anchor_fn_rate,
        anchor_fp_rate=anchor_fp_rate, min_conditions=min_conditions, seed=seed,
    ), **cfg})
    try:
        spec.validate()
    except ValueError as exc:
        raise CliError("config", str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, noise = generate_ground_truth(spec)
    dataset = generate_dataset(params, noise, spec.n_records, spec.seed + 1)
    write_ground_truth(out / "ground_truth.json", params, noise, spec)
    dataset.save_jsonl(out / "dataset.jsonl")
    _write_manifest(out, "synth", spec.to_dict(), {},
                    ["ground_truth.json", "dataset.jsonl"])
    click.echo(f"wrote {len(dataset)} records to {out/'dataset.jsonl'}")


@main.command()
@common_options
@click.option("--corpus", type=click.Path(exists=True), required=True,
              help="JSONL of raw visits.")
@click.option("--anchors", type=click.Path(exists=True), required=True,
              help="JSON map condition -> anchor token list.")
@click.option("--max-terms", type=int, default=1000, show_default=True)
def ingest(config_path, seed, out_dir, threads, deterministic, corpus, anchors,
           max_terms):
    """Vectorize a text corpus into the dataset format plus a vocabulary."""
    _load_config(config_path, {"max_terms"})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        visits = load_visits_jsonl(corpus)
        anchor_spec = json.loads(Path(anchors).read_text())
        dataset, vocab = ingest_corpus(visits, anchor_spec, max_terms=max_terms)
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError("data", str(exc))
    dataset.save_jsonl(out / "dataset.jsonl")
    vocab.save(out / "vocabulary.json")
    _write_manifest(out, "ingest", {"max_terms": max_terms},
                    {"corpus": corpus, "anchors": anchors},
                    ["dataset.jsonl", "vocabulary.json"])
    click.echo(f"vectorized {len(dataset)} visits, n={dataset.n}")


def _load_noise(ground_truth: str | None, p_a1_y1: float | None,
                p_a1_y0: float | None, m: int) -> NoiseModel:
    if ground_truth:
        _, noise = read_ground_truth(ground_truth)
        return noise
    if p_a1_y1 is None or p_a1_y0 is None:
        raise CliError("config", "need --ground-truth or both noise rates")
    return NoiseModel(np.full(m, p_a1_y1), np.full(m, p_a1_y0))


@main.command("init")
@common_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--ground-truth", type=click.Path(exists=True), default=None,
              help="Sidecar with the true noise rates.")
@click.option("--p-a1-y1", type=float, default=None)
@click.option("--p-a1-y0", type=float, default=None)
def init_cmd(config_path, seed, out_dir, threads, deterministic, dataset_path,
             ground_truth, p_a1_y1, p_a1_y0):
    """Moments-based initialization of the model from anchors."""
    _load_config(config_path, set())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = Dataset.load_jsonl(dataset_path)
    noise = _load_noise(ground_truth, p_a1_y1, p_a1_y0, dataset.m)
    try:
        params, diag = moments_init(dataset, noise)
    except ValueError as exc:
        raise CliError("numeric", str(exc))
    params.save(out / "theta0.json")
    (out / "init_diagnostics.json").write_text(json.dumps(diag.to_dict()))
    inputs = {"dataset": dataset_path}
    if ground_truth:
        inputs["ground_truth"] = ground_truth
    _write_manifest(out, "init", {"seed": seed}, inputs,
                    ["theta0.json", "init_diagnostics.json"])
    click.echo(f"wrote theta0 to {out/'theta0.json'}")


@main.command("train")
@common_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--init-model", type=click.Path(exists=True), required=True)
@click.option("--ground-truth", type=click.Path(exists=True), default=None)
@click.option("--p-a1-y1", type=float, default=None)
@click.option("--p-a1-y0", type=float, default=None)
@click.option("--lam", type=float, default=1.0, show_default=True)
@click.option("--epochs", type=int, default=150, show_default=True)
@click.option("--burn-in-epochs", type=int, default=50, show_default=True)
@click.option("--minibatch", type=int, default=64, show_default=True)
@click.option("--samples-per-gradient", type=int, default=10, show_default=True)
@click.option("--lr-phi", type=float, default=1e-4, show_default=True)
@click.option("--weight-decay", type=float, default=0.0, show_default=True)
@click.option("--val-records", type=int, default=1000, show_default=True)
@click.option("--checkpoint-every", type=int, default=10, show_default=True)
def train_cmd(config_path, seed, out_dir, threads, deterministic, dataset_path,
              init_model, ground_truth, p_a1_y1, p_a1_y0, lam, epochs,
              burn_in_epochs, minibatch, samples_per_gradient, lr_phi,
              weight_decay, val_records, checkpoint_every):
    """Semi-supervised variational training from a moments initialization."""
    allowed = {f.name for f in TrainConfig.__dataclass_fields__.values()}
    cfg = _load_config(config_path, allowed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = Dataset.load_jsonl(dataset_path)
    theta0 = ModelParams.load(init_model)
    noise = _load_noise(ground_truth, p_a1_y1, p_a1_y0, dataset.m)
    config = TrainConfig(**{**dict(
        lam=lam, epochs=epochs, burn_in_epochs=burn_in_epochs,
        minibatch=minibatch, samples_per_gradient=samples_per_gradient,
        lr_phi=lr_phi, weight_decay=weight_decay, val_records=val_records,
        checkpoint_every=checkpoint_every, seed=seed,
    ), **cfg})
    try:
        result = train(dataset, theta0, noise, config, log_path=out / "training_log.csv")
    except ValueError as exc:
        raise CliError("data", str(exc))
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for ck in result.checkpoints:
        ck.save(ckpt_dir / f"epoch{ck.epoch:04d}")
    result.best.params.save(out / "model.json")
    (out / "selection.json").write_text(json.dumps({
        "best_epoch": result.best.epoch,
        "val_anchor_score": result.best.val_score,
        "scores": {c.epoch: c.val_score for c in result.checkpoints},
    }))
    inputs = {"dataset": dataset_path, "init_model": init_model}
    if ground_truth:
        inputs["ground_truth"] = ground_truth
    _write_manifest(out, "train", {k: getattr(config, k) for k in allowed
                                   if k != "val_gibbs"},
                    inputs, ["model.json", "training_log.csv", "checkpoints"])
    click.echo(f"best checkpoint: epoch {result.best.epoch} "
               f"(anchor score {result.best.val_score:.4f})")


@main.command("eval")
@common_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True,
              help="Labeled dataset (synthetic).")
@click.option("--model", "model_paths", type=(str, str), multiple=True,
              help="NAME PATH pairs of noisy-or model files to evaluate.")
@click.option("--ground-truth", type=click.Path(exists=True), default=None)
@click.option("--baselines/--no-baselines", default=False,
              help="Also fit and evaluate naive, oracle and noise-tolerant baselines.")
def eval_cmd(config_path, seed, out_dir, threads, deterministic, dataset_path,
             model_paths, ground_truth, baselines):
    """Held-out tag evaluation report for models and baselines."""
    _load_config(config_path, set())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = Dataset.load_jsonl(dataset_path)
    if dataset.Y is None:
        raise CliError("data", "eval needs a labeled dataset")
    instances = make_task_instances(dataset, seed)
    if not instances:
        raise CliError("data", "no records pass the >=2 condition filter")
    rows = []
    for name, path in model_paths:
        params = ModelParams.load(path)
        rows.append((name, evaluate_model(noisyor_predict_fn(params, dataset), instances)))
    if baselines:
        if ground_truth is None:
            raise CliError("config", "--baselines needs --ground-truth for noise rates")
        _, noise = read_ground_truth(ground_truth)
        naive = naive_labels_train(dataset, noise)
        rows.append(("naive_labels",
                     evaluate_model(noisyor_predict_fn(naive, dataset), instances)))
        oracle = oracle_mle_train(dataset)
        rows.append(("oracle_mle",
                     evaluate_model(noisyor_predict_fn(oracle, dataset), instances)))
        nt = noise_tolerant_train(dataset, noise)
        rows.append(("noise_tolerant",
                     evaluate_model(noise_tolerant_predict_fn(nt, dataset), instances)))
    save_report(out / "report.json", rows)
    save_report(out / "report.csv", rows)
    _write_manifest(out, "eval", {"seed": seed},
                    {"dataset": dataset_path}, ["report.json", "report.csv"])
    for r in results_report(rows)["rows"]:
        click.echo(f"{r['Model']:>24}  acc={r['Accuracy']:.3f}  "
                   f"top5={r['Top 5']:.3f}  mrr={r['MRR']:.3f}")


@main.command("select")
@common_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoints", "ckpt_dir", type=click.Path(exists=True), required=True)
@click.option("--ground-truth", type=click.Path(exists=True), default=None)
@click.option("--p-a1-y1", type=float, default=None)
@click.option("--p-a1-y0", type=float, default=None)
@click.option("--max-records", type=int, default=300, show_default=True)
def select_cmd(config_path, seed, out_dir, threads, deterministic, dataset_path,
               ckpt_dir, ground_truth, p_a1_y1, p_a1_y0, max_records):
    """Pick the checkpoint with the best held-out anchor score."""
    _load_config(config_path, set())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = Dataset.load_jsonl(dataset_path)
    noise = _load_noise(ground_truth, p_a1_y1, p_a1_y0, dataset.m)
    prefixes = sorted(set(p.with_suffix("") for p in Path(ckpt_dir).glob("*.json")))
    if not prefixes:
        raise CliError("data", f"no checkpoints under {ckpt_dir}")
    scores = {}
    best_prefix, best_score = None, -np.inf
    for prefix in prefixes:
        ck = Checkpoint.load(prefix)
        score = heldout_anchor_score(
            ck.params, dataset.X, dataset.A, noise,
            GibbsConfig(chains=2, burn_in=100, kept=300, seed=seed),
            rng=seed, max_records=max_records,
        )
        scores[prefix.name] = score
        if score > best_score:
            best_prefix, best_score = prefix, score
    best = Checkpoint.load(best_prefix)
    best.params.save(out / "selected_model.json")
    (out / "selection.json").write_text(json.dumps(
        {"best": best_prefix.name, "scores": scores}))
    _write_manifest(out, "select", {"seed": seed, "max_records": max_records},
                    {"dataset": dataset_path},
                    ["selected_model.json", "selection.json"])
    click.echo(f"selected {best_prefix.name} (anchor score {best_score:.4f})")


@main.command("serve")
@common_options
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), default=None)
@click.option("--ui-dir", type=click.Path(), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(config_path, seed, out_dir, threads, deterministic, model_path,
              vocab_path, ui_dir, host, port):
    """Start the interactive tag-suggestion service."""
    import uvicorn

    from .service import create_app, load_state

    _load_config(config_path, set())
    state = load_state(model_path, vocab_path)
    app = create_app(state, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
