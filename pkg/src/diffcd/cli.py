"""Command-line entry point wiring data preparation, prompt generation,
embedding ingestion, training, evaluation, and the sweep harnesses.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import dataclasses
import json
import os
import re
import sys
import time

import click
import numpy as np
import yaml

from . import evaluation
from .data import load_dataset, save_dataset, split as make_split, split_stratified, inject_noise
from .errors import ContractError, DataError, DiffcdError, ShapeError, TrainingError
from .io import load_checkpoint, write_manifest
from .semantics import (HttpEmbeddingClient, MockEmbeddingClient, SemanticTable,
                        build_prompts, fetch_embeddings, read_embedding_file,
                        write_embedding_file)
from .training import KNOWN_ABLATION_FLAGS, Pipeline, RunConfig, ablate, train


def _interpolate_env(text: str) -> str:
    return re.sub(r"\$\{(\w+)\}", lambda m: os.environ.get(m.group(1), ""), text)


def _apply_override(tree: dict, dotted: str, raw_value: str) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ContractError(f"override path {dotted!r} crosses a scalar")
    value = yaml.safe_load(raw_value)
    if isinstance(value, str):
        # YAML leaves bare scientific notation like 1e-3 as a string
        try:
            value = float(value)
        except ValueError:
            pass
    node[keys[-1]] = value


def load_config(path: str, overrides=()) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tree = yaml.safe_load(_interpolate_env(fh.read())) or {}
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise DataError(f"config parse error in {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise click.UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _apply_override(tree, key, value)
    return tree


def _run_config(tree: dict, seed=None) -> RunConfig:
    section = dict(tree.get("run", {}))
    if seed is not None:
        section["seed"] = seed
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(section) - known
    if unknown:
        raise click.UsageError(f"unknown run config keys: {sorted(unknown)}")
    if "hidden" in section:
        section["hidden"] = tuple(section["hidden"])
    return RunConfig(**section)


def _load_data(tree: dict):
    data = tree.get("data", {})
    if "logs" not in data or "qmatrix" not in data:
        raise click.UsageError("config needs data.logs and data.qmatrix paths")
    return load_dataset(data["logs"], data["qmatrix"],
                        min_responses=int(data.get("min_responses", 0)),
                        concept_names=data.get("concept_names"))


def _semantic_table(tree: dict):
    emb = tree.get("embeddings", {})
    if "students" in emb and "exercises" in emb:
        return SemanticTable(read_embedding_file(emb["students"]),
                             read_embedding_file(emb["exercises"]))
    return None


def _make_client(tree: dict):
    client_cfg = tree.get("client", {})
    if client_cfg.get("endpoint"):
        return HttpEmbeddingClient(
            endpoint=client_cfg["endpoint"],
            model=client_cfg.get("model", ""),
            token_env=client_cfg.get("token_env", "EMBEDDING_API_TOKEN"),
            timeout=float(client_cfg.get("timeout", 30.0)),
        )
    return MockEmbeddingClient(dim=int(client_cfg.get("mock_dim", 64)),
                               seed=int(client_cfg.get("seed", 0)))


def _out_dir(tree: dict, cfg: RunConfig, explicit=None) -> str:
    if explicit:
        return explicit
    root = tree.get("output", {}).get("root", "runs")
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    return os.path.join(root, f"{stamp}-{cfg.config_hash()}")


@click.group(name="diffcd")
def cli():
    """Noise-robust graph cognitive diagnosis toolkit."""


config_opt = click.option("--config", "config_path", required=True,
                          help="YAML config file")
set_opt = click.option("--set", "overrides", multiple=True,
                       help="dotted-path config override, e.g. run.lam=1e-3")
seed_opt = click.option("--seed", type=int, default=None, help="override run seed")
outdir_opt = click.option("--out-dir", default=None, help="explicit output directory")


@cli.command("prepare-data")
@config_opt
@set_opt
@seed_opt
@outdir_opt
def prepare_data(config_path, overrides, seed, out_dir):
    """Load, split, optionally noise-inject, and re-emit a dataset."""
    tree = load_config(config_path, overrides)
    cfg = _run_config(tree, seed)
    out = _out_dir(tree, cfg, out_dir)
    os.makedirs(out, exist_ok=True)
    ds = _load_data(tree)
    maker = split_stratified if cfg.stratified_split else make_split
    sp = maker(ds, cfg.seed)
    ds, sp, noise = inject_noise(ds, cfg.noise_level, cfg.seed, sp, cfg.noise_mode) \
        if cfg.noise_level > 0 else (ds, sp, None)
    save_dataset(ds, os.path.join(out, "logs.csv"), os.path.join(out, "qmatrix.csv"))
    write_manifest(os.path.join(out, "manifest.json"), {
        "config": cfg.as_dict(), "config_hash": cfg.config_hash(),
        "split": sp.as_dict(),
        "noise": None if noise is None else
        {"level": noise.level, "seed": noise.seed, "added": len(noise.added_logs)},
        "note": "student filtering (if any) runs after de-duplication",
    })
    click.echo(f"prepared dataset in {out}")


@cli.command("gen-prompts")
@config_opt
@set_opt
@seed_opt
@outdir_opt
def gen_prompts(config_path, overrides, seed, out_dir):
    """Emit per-student and per-exercise prompt files."""
    tree = load_config(config_path, overrides)
    cfg = _run_config(tree, seed)
    out = _out_dir(tree, cfg, out_dir)
    ds = _load_data(tree)
    sp = make_split(ds, cfg.seed)
    bundle = build_prompts(ds, sp.train, subject=cfg.subject)
    prompt_dir = os.path.join(out, "prompts")
    bundle.dump(prompt_dir)
    write_manifest(os.path.join(out, "manifest.json"),
                   {"config": cfg.as_dict(), "config_hash": cfg.config_hash(),
                    "prompts": prompt_dir})
    click.echo(f"wrote prompts to {prompt_dir}")


@cli.command("ingest-embeddings")
@config_opt
@set_opt
@seed_opt
@outdir_opt
@click.option("--fetch", is_flag=True,
              help="fetch embeddings through the configured client instead of "
                   "reading embedding files")
def ingest_embeddings(config_path, overrides, seed, out_dir, fetch):
    """Validate raw embeddings and write PCA-projected tables."""
    tree = load_config(config_path, overrides)
    cfg = _run_config(tree, seed)
    out = _out_dir(tree, cfg, out_dir)
    os.makedirs(out, exist_ok=True)
    ds = _load_data(tree)
    if fetch:
        sp = make_split(ds, cfg.seed)
        bundle = build_prompts(ds, sp.train, subject=cfg.subject)
        client = _make_client(tree)
        s_raw = fetch_embeddings([bundle.student_prompt(i)
                                  for i in range(ds.num_students)], client)
        e_raw = fetch_embeddings([bundle.exercise_prompt(j)
                                  for j in range(ds.num_exercises)], client)
    else:
        table = _semantic_table(tree)
        if table is None:
            raise click.UsageError("config needs embeddings.students and "
                                   "embeddings.exercises (or use --fetch)")
        s_raw, e_raw = table.students_raw, table.exercises_raw
        if s_raw.shape[0] != ds.num_students or e_raw.shape[0] != ds.num_exercises:
            raise DataError("embedding row counts do not match the dataset")
    d = cfg.resolve_dim(ds.num_concepts)
    table = SemanticTable(s_raw, e_raw).project(d)
    write_embedding_file(os.path.join(out, "students_raw.tsv"), s_raw)
    write_embedding_file(os.path.join(out, "exercises_raw.tsv"), e_raw)
    write_embedding_file(os.path.join(out, "students_projected.tsv"), table.students)
    write_embedding_file(os.path.join(out, "exercises_projected.tsv"), table.exercises)
    write_manifest(os.path.join(out, "manifest.json"),
                   {"config": cfg.as_dict(), "config_hash": cfg.config_hash(),
                    "raw_dim": int(s_raw.shape[1]), "projected_dim": d})
    click.echo(f"wrote embedding tables to {out}")


def _train_once(tree, cfg, out):
    ds = _load_data(tree)
    table = _semantic_table(tree)
    return train(cfg, ds, semantic_table=table, out_dir=out)


@cli.command("train")
@config_opt
@set_opt
@seed_opt
@outdir_opt
def train_cmd(config_path, overrides, seed, out_dir):
    """Train a model and write manifest, history, metrics, and checkpoint."""
    tree = load_config(config_path, overrides)
    cfg = _run_config(tree, seed)
    out = _out_dir(tree, cfg, out_dir)
    result = _train_once(tree, cfg, out)
    click.echo(f"best epoch {result.best_epoch}; test metrics "
               f"{json.dumps(result.test_metrics, sort_keys=True)}")
    click.echo(f"outputs in {out}")


@cli.command("evaluate")
@config_opt
@set_opt
@click.option("--checkpoint", "checkpoint_path", required=True)
@outdir_opt
def evaluate_cmd(config_path, overrides, checkpoint_path, out_dir):
    """Score a trained checkpoint on the held-out test split."""
    tree = load_config(config_path, overrides)
    arrays, meta = load_checkpoint(checkpoint_path)
    saved = dict(meta["config"])
    saved["hidden"] = tuple(saved["hidden"])
    cfg = RunConfig(**saved)
    ds = _load_data(tree)
    maker = split_stratified if cfg.stratified_split else make_split
    sp = maker(ds, cfg.seed)
    if cfg.noise_level > 0:
        ds, sp, _ = inject_noise(ds, cfg.noise_level, cfg.seed, sp, cfg.noise_mode)
    pipe = Pipeline(ds, sp, cfg, _semantic_table(tree))
    pipe.restore(arrays)
    metrics = pipe.evaluate_split(sp.test, "eval-refine/test")
    if cfg.head in ("ncdm", "cdmfkc"):
        mastery = pipe.mastery_report("eval-refine/test")
        metrics["doa"] = evaluation.doa(mastery, [ds.logs[i] for i in sp.test],
                                        ds.q_matrix)
    else:
        metrics["doa"] = None
    line = "\t".join(f"{k}={metrics[k]}" for k in ("acc", "auc", "f1", "doa"))
    click.echo(line)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        evaluation.write_table(os.path.join(out_dir, "metrics.tsv"),
                               [metrics], ["acc", "auc", "f1", "doa"])


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def _parse_ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


@cli.command("noise-sweep")
@config_opt
@set_opt
@outdir_opt
@click.option("--levels", default="0,0.05,0.10,0.15", show_default=True)
@click.option("--seeds", default="0,1,2,3,4", show_default=True)
def noise_sweep_cmd(config_path, overrides, out_dir, levels, seeds):
    """Retrain per noise level and seed; emit the ACC table and plot data."""
    tree = load_config(config_path, overrides)
    cfg = _run_config(tree)
    out = _out_dir(tree, cfg, out_dir)
    ds = _load_data(tree)
    rows = evaluation.noise_sweep(cfg, ds, _parse_floats(levels),
                                  _parse_ints(seeds), out_dir=out)
    click.echo(f"{len(rows)} sweep rows in {out}")


@cli.command("sweep-rho")
@config_opt
@set_opt
@outdir_opt
@click.option("--rhos", default="0.05,0.1,0.2,0.4", show_default=True)
@click.option("--levels", default="0", show_default=True)
@click.option("--seeds", default="0,1,2,3,4", show_default=True)
def sweep_rho_cmd(config_path, overrides, out_dir, rhos, levels, seeds):
    """Grid over the unconditional-loss weight."""
    tree = load_config(config_path, overrides)
    cfg = _run_config(tree)
    out = _out_dir(tree, cfg, out_dir)
    ds = _load_data(tree)
    rows = evaluation.rho_sweep(cfg, ds, _parse_floats(rhos), _parse_floats(levels),
                                _parse_ints(seeds), out_dir=out)
    click.echo(f"{len(rows)} sweep rows in {out}")


@cli.command("ablate")
@config_opt
@set_opt
@seed_opt
@outdir_opt
@click.option("--flag", "flags", multiple=True,
              help=f"flag=on|off, one of {', '.join(KNOWN_ABLATION_FLAGS)}")
def ablate_cmd(config_path, overrides, seed, out_dir, flags):
    """Train with ablation switches applied."""
    tree = load_config(config_path, overrides)
    cfg = _run_config(tree, seed)
    parsed = {}
    for item in flags:
        if "=" not in item:
            raise click.UsageError(f"--flag expects name=on|off, got {item!r}")
        name, value = item.split("=", 1)
        if value not in ("on", "off"):
            raise click.UsageError(f"flag value must be on/off, got {value!r}")
        parsed[name] = value == "on"
    cfg = ablate(cfg, parsed)
    out = _out_dir(tree, cfg, out_dir)
    result = _train_once(tree, cfg, out)
    click.echo(f"ablated run {json.dumps(parsed, sort_keys=True)}: test "
               f"{json.dumps(result.test_metrics, sort_keys=True)}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return 0 if exc.exit_code == 0 else 1
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except TrainingError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3
    except (DataError, ContractError, ShapeError, DiffcdError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
