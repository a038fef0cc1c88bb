"""Command-line entry point: ``adapose gen | train | eval | matrix``.

Exit codes: 0 success, 1 invalid spec / arguments / unwritable output,
2 missing dataset or checkpoint (or one that does not fit the model),
3 non-finite loss during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import TASKS, ExperimentSpec, load_spec
from .errors import ConfigurationError, DimensionError, NumericError
from .metrics import REPORT_COLUMNS, evaluate_dataset, report_row, rows_to_csv, rows_to_json
from .model import atomic_write, load_params
from .synthcsi import generate_domain, mask_labels, read_dataset, write_dataset
from .trainer import (
    METHODS,
    MatrixCell,
    average_rows,
    load_state,
    log_to_jsonl,
    run_experiment_matrix,
    save_state,
    train,
)

log = logging.getLogger("adapose")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3
DATASET_FILES = {"A": "scene_a.csid", "B": "scene_b.csid"}
MANIFEST = "manifest.json"


class MissingInput(Exception):
    """A dataset or checkpoint is absent or incompatible (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, text.encode())


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- gen ---------------------------------------------------------------------

def generate(spec: ExperimentSpec) -> dict:
    out = {}
    for key, scene_sec, motion_set in (("A", spec.scene_a, spec.motions.a), ("B", spec.scene_b, spec.motions.b)):
        motions = motion_set.motions()
        out[key] = generate_domain(scene_sec.scene(), motions, window_len=scene_sec.window_len,
                                   n_subcarriers=scene_sec.n_subcarriers,
                                   subcarrier_stride=scene_sec.subcarrier_stride, domain_id=key)
    return out


def cmd_gen(spec_path, out_dir=None) -> int:
    spec = load_spec(spec_path)
    out_dir = Path(out_dir or spec.output.data_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out_dir}: {exc.strerror}") from None
    datasets = generate(spec)
    manifest = {"data_hash": spec.data_hash(), "version": __version__, "domains": {}}
    for key, ds in datasets.items():
        scene_sec = spec.scene_a if key == "A" else spec.scene_b
        motion_set = spec.motions.a if key == "A" else spec.motions.b
        path = out_dir / DATASET_FILES[key]
        write_dataset(path, ds)
        manifest["domains"][key] = {
            "file": DATASET_FILES[key], "sha256": _sha256(path), "spec_hash": ds.spec_hash,
            "windows": len(ds), "window_shape": list(ds.window_shape),
            "scene_seed": scene_sec.seed, "motion_seed": motion_set.seed,
        }
        log.info("scene %s: %d windows -> %s", key, len(ds), path)
    _write_text(out_dir / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --- train -------------------------------------------------------------------

def _load_domains(spec: ExperimentSpec, data_dir):
    data_dir = Path(data_dir or spec.output.data_dir)
    manifest_path = data_dir / MANIFEST
    if not manifest_path.exists():
        raise MissingInput(f"no datasets in {data_dir} (missing {MANIFEST}); run `adapose gen` first")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("data_hash") != spec.data_hash():
        raise MissingInput(f"datasets in {data_dir} were generated from a different spec; rerun `adapose gen`")
    domains = {}
    for key, name in DATASET_FILES.items():
        path = data_dir / name
        if not path.exists():
            raise MissingInput(f"dataset {path} not found")
        domains[key] = read_dataset(path, domain_id=key)
    return domains


def _task_split(domains, task: str):
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}; choose from {TASKS}")
    src, tgt = (domains["A"], domains["B"]) if task == "A2B" else (domains["B"], domains["A"])
    return src, tgt


def _frac_tag(fraction: float) -> str:
    return f"{fraction:g}".replace(".", "p")


def run_stem(task: str, method: str, fraction: float, seed: int) -> str:
    return f"{task}_{method}_lf{_frac_tag(fraction)}_s{seed}"


def cmd_train(spec_path, task="A2B", method=None, label_fraction=None, seed=None, data_dir=None,
              checkpoint=None, log_path=None, resume=None, epochs=None) -> int:
    spec = load_spec(spec_path)
    if epochs is not None:
        spec = spec.model_copy(update={"train": spec.train.model_copy(update={"epochs": epochs})})
        spec = ExperimentSpec.model_validate(spec.model_dump())
    method = method or spec.train.methods[0]
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    fraction = spec.train.label_fraction if label_fraction is None else label_fraction
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError(f"label fraction {fraction} outside [0, 1]")
    seed = spec.train.seeds[0] if seed is None else seed
    source, target = _task_split(_load_domains(spec, data_dir), task)
    scale = spec.model_section().scale(source.window_shape)
    config = spec.train.config(scale, method, seed, fraction)
    target_masked = mask_labels(target, fraction, spec.train.mask_seed)

    stem = run_stem(task, method, fraction, seed)
    run_dir = Path(spec.output.run_dir)
    checkpoint = Path(checkpoint or run_dir / f"{stem}.apck")
    log_path = Path(log_path or checkpoint.with_suffix(".jsonl"))
    state = None
    if resume is not None:
        if not Path(resume).exists():
            raise MissingInput(f"checkpoint {resume} not found")
        state = load_state(resume, config)
        prior = Path(resume).with_suffix(".jsonl")
        if prior.exists():
            state.log = [json.loads(line) for line in prior.read_text().splitlines() if line.strip()]
    try:
        checkpoint.parent.mkdir(parents=True, exist_ok=True)
        log_path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory: {exc.strerror}") from None

    log.info("training %s (%s, label fraction %g, seed %d)", task, method, fraction, seed)
    state = train(config, source, target_masked, eval_set=target, state=state)
    save_state(checkpoint, state)
    _write_text(log_path, log_to_jsonl(state.log))
    final = state.log[-1]["pck"] if state.log else None
    if final:
        log.info("target pck@50 %.4f", final["pck@50"])
    return EXIT_OK


# --- eval --------------------------------------------------------------------

def _write_report(out, rows, columns=REPORT_COLUMNS, extra=None):
    out = Path(out)
    if out.suffix == ".json":
        targets = {out: "json"}
    elif out.suffix == ".csv":
        targets = {out: "csv"}
    else:
        targets = {out.with_name(out.name + ".csv"): "csv", out.with_name(out.name + ".json"): "json"}
    for path, kind in targets.items():
        if kind == "csv":
            _write_text(path, rows_to_csv(rows, columns))
        else:
            doc = json.loads(rows_to_json(rows, columns))
            if extra:
                doc.update(extra)
            _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return list(targets)


def cmd_eval(checkpoint, dataset, out, task="eval", method=None) -> int:
    for path in (checkpoint, dataset):
        if not Path(path).exists():
            raise MissingInput(f"{path} not found")
    try:
        params = load_params(checkpoint)
    except ConfigurationError as exc:
        raise MissingInput(str(exc)) from None
    ds = read_dataset(dataset)
    if tuple(ds.window_shape) != params.scale.input_shape:
        raise MissingInput(f"checkpoint expects windows {params.scale.input_shape}, "
                           f"dataset {dataset} has {tuple(ds.window_shape)}")
    if ds.poses.shape[1] != params.scale.joint_count:
        raise MissingInput(f"checkpoint predicts {params.scale.joint_count} joints, dataset has {ds.poses.shape[1]}")
    try:
        report = evaluate_dataset(params, ds)
    except (DimensionError, ConfigurationError) as exc:
        raise MissingInput(f"checkpoint does not fit dataset: {exc}") from None
    row = report_row(task, method or Path(checkpoint).stem, report)
    _write_report(out, [row], extra={"detail": report.as_dict()})
    return EXIT_OK


# --- matrix ------------------------------------------------------------------

def matrix_cells(spec: ExperimentSpec, domains) -> list[MatrixCell]:
    cells = []
    fraction = spec.train.label_fraction
    for task in spec.train.tasks:
        source, target = _task_split(domains, task)
        scale = spec.model_section().scale(source.window_shape)
        target_masked = mask_labels(target, fraction, spec.train.mask_seed)
        for method in spec.train.methods:
            for seed in spec.train.seeds:
                cells.append(MatrixCell(task, spec.train.config(scale, method, seed, fraction),
                                        source, target_masked, target))
    return cells


def ordering(averaged) -> dict:
    """Per task: adapose minus source_only at pck@50 (percent), when both ran."""
    by = {(r["task"], r["method"]): r for r in averaged}
    out = {}
    for task in sorted({r["task"] for r in averaged}):
        if (task, "adapose") in by and (task, "source_only") in by:
            gap = by[(task, "adapose")]["pck@50"] - by[(task, "source_only")]["pck@50"]
            out[task] = {"adapose_minus_source_only_pck@50": gap, "adapose_ahead": gap > 0}
    return out


def cmd_matrix(spec_path, data_dir=None, out_dir=None) -> int:
    spec = load_spec(spec_path)
    domains = _load_domains(spec, data_dir)
    out_dir = Path(out_dir or spec.output.report_dir)
    cells = matrix_cells(spec, domains)
    log.info("running %d cells", len(cells))
    rows = run_experiment_matrix(cells)
    raw = []
    for cell, row in zip(cells, rows):
        stem = run_stem(cell.task, cell.config.method, spec.train.label_fraction, cell.config.seed)
        _write_text(out_dir / "logs" / f"{stem}.jsonl", log_to_jsonl(row.pop("log")))
        raw.append(row)
    averaged = average_rows(raw)
    raw_columns = REPORT_COLUMNS[:2] + ("seed",) + REPORT_COLUMNS[2:]
    _write_text(out_dir / "matrix.csv", rows_to_csv(averaged))
    _write_text(out_dir / "matrix_raw.csv", rows_to_csv(raw, raw_columns))
    doc = {"label_fraction": spec.train.label_fraction, "seeds": spec.train.seeds, "averaged": averaged,
           "raw": raw, "ordering": ordering(averaged)}
    _write_text(out_dir / "matrix.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for row in averaged:
        log.info("%s %-18s pck@50 %.2f", row["task"], row["method"], row["pck@50"])
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adapose", description="Mapping-consistency domain adaptation for CSI pose regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate the two synthetic domains")
    g.add_argument("spec")
    g.add_argument("--out", help="output directory (default: output.data_dir)")

    t = sub.add_parser("train", help="train one (task, method, label fraction, seed) run")
    t.add_argument("spec")
    t.add_argument("--task", choices=TASKS, default="A2B")
    t.add_argument("--method", choices=METHODS)
    t.add_argument("--label-fraction", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--data-dir")
    t.add_argument("--checkpoint")
    t.add_argument("--log")
    t.add_argument("--resume", help="continue from a checkpoint written by an earlier run")

    e = sub.add_parser("eval", help="PCK report for a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--out", required=True, help="report path; .csv or .json, otherwise both are written")
    e.add_argument("--task", default="eval")
    e.add_argument("--method")

    m = sub.add_parser("matrix", help="tasks x methods x seeds table")
    m.add_argument("spec")
    m.add_argument("--data-dir")
    m.add_argument("--out", help="report directory (default: output.report_dir)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "gen":
            return cmd_gen(args.spec, args.out)
        if args.command == "train":
            return cmd_train(args.spec, args.task, args.method, args.label_fraction, args.seed, args.data_dir,
                             args.checkpoint, args.log, args.resume, args.epochs)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.dataset, args.out, args.task, args.method)
        return cmd_matrix(args.spec, args.data_dir, args.out)
    except MissingInput as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except ConfigurationError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s: %s", exc.filename or "output", exc.strerror)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
