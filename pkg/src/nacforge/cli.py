"""Command-line pipeline: global search, local search, compression, reports.

Subcommands: global, local, compress, bops, params, export, report.
Exit codes: 0 ok, 2 configuration problem (message names the field), 3
runtime failure.  All randomness derives from one master seed (config or
NACFORGE_SEED) hashed with a stage name, so reruns in serial mode produce
byte-identical CSV/JSON outputs; wall-clock times live only in run_meta.json.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from . import arch_ir as ir
from . import compress as cp
from . import data_forge as df
from . import evo_search as es
from . import search_space as ss
from . import tensor_engine as te
from . import tpe_opt as tp
from .cost_model import BitConfig, SparsityProfile, bops_model, megabops
from .errors import ConfigError, NacforgeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONFIG_VERSION = 1
SEED_ENV_VAR = "NACFORGE_SEED"

TASK_ALIASES = {
    "bragg": ir.PATCH_REGRESSION,
    "jets": ir.SET_CLASSIFICATION,
    ir.PATCH_REGRESSION: ir.PATCH_REGRESSION,
    ir.SET_CLASSIFICATION: ir.SET_CLASSIFICATION,
}

# Deliberately tight proxy: at this rate 10 epochs cannot saturate the
# synthetic tasks, so architecture-dependent learnability stays visible to
# the search (the HPO stage tunes the real training rate later).  Proxy
# training sees at most the first 4k samples of the train split; validation
# uses the whole val split.
PROXY_LR = 0.001
PROXY_BATCH = 64
PROXY_TRAIN_CAP = 4000
FINETUNE_BATCH = 64


def rng_for(master_seed: int, stage: str) -> np.random.Generator:
    """Stage-keyed stream: master seed plus a sha256 offset of the stage name."""
    offset = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([master_seed, offset]))


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    kind: str                  # "synthetic" | "file"
    n: int = 5000
    separation: float = 1.2    # jets synthetic
    noise_level: float = 0.05  # bragg synthetic
    path: str | None = None    # file kind


@dataclass(frozen=True)
class GlobalConfig:
    budget: int = 200
    pop_size: int = es.DEFAULT_POP_SIZE
    proxy_epochs: int = 10
    crossover_prob: float = es.DEFAULT_CROSSOVER_PROB
    mutation_rate: float = ss.DEFAULT_MUTATION_RATE
    workers: int = 1


@dataclass(frozen=True)
class LocalConfig:
    hpo_budget: int = 20
    hpo_epochs: int = 60
    bit_widths: tuple[int, ...] = cp.DEFAULT_BIT_WIDTHS
    prune_fraction: float = cp.DEFAULT_PRUNE_FRACTION
    prune_scope: str = "global"
    iterations: int = cp.DEFAULT_ITERATIONS
    epochs_per_iter: int = cp.DEFAULT_EPOCHS_PER_ITER
    tolerance: float = cp.DEFAULT_TOLERANCE
    finetune_lr: float = 0.01
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    task: str
    seed: int
    output_dir: str
    dataset: DatasetConfig
    global_cfg: GlobalConfig = field(default_factory=GlobalConfig)
    local_cfg: LocalConfig = field(default_factory=LocalConfig)


def _take(section: dict, field_name: str, kind, where: str, default=None, required=False):
    if field_name not in section:
        if required:
            raise ConfigError(f"missing field {where}.{field_name}")
        return default
    value = section[field_name]
    try:
        if kind is int and isinstance(value, bool):
            raise ValueError("boolean is not an integer")
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field {where}.{field_name} must be {kind.__name__}, "
                          f"got {value!r}") from None


def parse_config(raw: dict, base_dir: Path) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    version = _take(raw, "version", int, "config", required=True)
    if version != CONFIG_VERSION:
        raise ConfigError(f"field config.version must be {CONFIG_VERSION}, got {version}")
    task_raw = _take(raw, "task", str, "config", required=True)
    if task_raw not in TASK_ALIASES:
        raise ConfigError(f"field config.task must be one of {sorted(set(TASK_ALIASES))}")
    task = TASK_ALIASES[task_raw]
    seed = _take(raw, "seed", int, "config", required=True)
    if os.environ.get(SEED_ENV_VAR):
        try:
            seed = int(os.environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from None
    output_dir = _take(raw, "output_dir", str, "config", required=True)

    ds_raw = raw.get("dataset")
    if not isinstance(ds_raw, dict):
        raise ConfigError("missing field config.dataset")
    kind = _take(ds_raw, "kind", str, "dataset", required=True)
    if kind not in ("synthetic", "file"):
        raise ConfigError("field dataset.kind must be 'synthetic' or 'file'")
    path = _take(ds_raw, "path", str, "dataset")
    if kind == "file":
        if path is None:
            raise ConfigError("missing field dataset.path")
        resolved = (base_dir / path).resolve() if not Path(path).is_absolute() else Path(path)
        if not resolved.exists():
            raise ConfigError(f"field dataset.path: file not found: {path}")
        path = str(resolved)
    dataset = DatasetConfig(
        kind=kind,
        n=_take(ds_raw, "n", int, "dataset", default=5000),
        separation=_take(ds_raw, "separation", float, "dataset", default=1.2),
        noise_level=_take(ds_raw, "noise_level", float, "dataset", default=0.05),
        path=path,
    )
    if dataset.kind == "synthetic" and dataset.n < 10:
        raise ConfigError("field dataset.n must be >= 10")

    g_raw = raw.get("global_search", {})
    if not isinstance(g_raw, dict):
        raise ConfigError("field config.global_search must be an object")
    global_cfg = GlobalConfig(
        budget=_take(g_raw, "budget", int, "global_search", default=200),
        pop_size=_take(g_raw, "pop_size", int, "global_search", default=es.DEFAULT_POP_SIZE),
        proxy_epochs=_take(g_raw, "proxy_epochs", int, "global_search", default=10),
        crossover_prob=_take(g_raw, "crossover_prob", float, "global_search",
                             default=es.DEFAULT_CROSSOVER_PROB),
        mutation_rate=_take(g_raw, "mutation_rate", float, "global_search",
                            default=ss.DEFAULT_MUTATION_RATE),
        workers=_take(g_raw, "workers", int, "global_search", default=1),
    )
    if global_cfg.budget < global_cfg.pop_size:
        raise ConfigError("field global_search.budget must be >= pop_size")

    l_raw = raw.get("local_search", {})
    if not isinstance(l_raw, dict):
        raise ConfigError("field config.local_search must be an object")
    widths = l_raw.get("bit_widths", list(cp.DEFAULT_BIT_WIDTHS))
    if (not isinstance(widths, list) or not widths
            or any(w not in cp.DEFAULT_BIT_WIDTHS for w in widths)):
        raise ConfigError("field local_search.bit_widths must be a nonempty "
                          "subset of [4, 8, 16, 32]")
    scope = _take(l_raw, "prune_scope", str, "local_search", default="global")
    if scope not in cp.PRUNE_SCOPES:
        raise ConfigError(f"field local_search.prune_scope must be one of "
                          f"{list(cp.PRUNE_SCOPES)}")
    local_cfg = LocalConfig(
        hpo_budget=_take(l_raw, "hpo_budget", int, "local_search", default=20),
        hpo_epochs=_take(l_raw, "hpo_epochs", int, "local_search", default=60),
        bit_widths=tuple(int(w) for w in widths),
        prune_fraction=_take(l_raw, "prune_fraction", float, "local_search",
                             default=cp.DEFAULT_PRUNE_FRACTION),
        prune_scope=scope,
        iterations=_take(l_raw, "iterations", int, "local_search",
                         default=cp.DEFAULT_ITERATIONS),
        epochs_per_iter=_take(l_raw, "epochs_per_iter", int, "local_search",
                              default=cp.DEFAULT_EPOCHS_PER_ITER),
        tolerance=_take(l_raw, "tolerance", float, "local_search",
                        default=cp.DEFAULT_TOLERANCE),
        finetune_lr=_take(l_raw, "finetune_lr", float, "local_search", default=0.01),
        workers=_take(l_raw, "workers", int, "local_search", default=1),
    )
    return RunConfig(task, seed, output_dir, dataset, global_cfg, local_cfg)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return parse_config(raw, p.parent)


# --------------------------------------------------------------------------
# Dataset assembly (shared by stages; deterministic from config + seed)
# --------------------------------------------------------------------------

def build_splits(config: RunConfig) -> tuple[df.Dataset, df.Dataset, df.Dataset, dict]:
    ds_cfg = config.dataset
    data_seed = int(rng_for(config.seed, "dataset").integers(2**31))
    if config.task == ir.SET_CLASSIFICATION:
        if ds_cfg.kind == "synthetic":
            samples = df.gen_jets(ds_cfg.n, data_seed, ds_cfg.separation)
            params = {"separation": ds_cfg.separation}
        else:
            samples = df.load_sets(ds_cfg.path)
            params = {"path": ds_cfg.path}
        full = df.sets_to_dataset(samples)
    else:
        if ds_cfg.kind == "synthetic":
            samples = df.gen_bragg(ds_cfg.n, data_seed, ds_cfg.noise_level)
            params = {"noise_level": ds_cfg.noise_level}
        else:
            samples = df.load_patches(ds_cfg.path)
            params = {"path": ds_cfg.path}
        full = df.patches_to_dataset(samples)
    split_seed = int(rng_for(config.seed, "split").integers(2**31))
    train, val, test = df.split_dataset(full, split_seed)
    stats = df.fit_standardization(train)
    train = df.apply_standardization(train, stats)
    val = df.apply_standardization(val, stats)
    test = df.apply_standardization(test, stats)
    manifest = df.manifest(ds_cfg.kind, len(full), data_seed, params, stats)
    return train, val, test, manifest


# --------------------------------------------------------------------------
# Global-search proxy evaluator (module level so worker processes can pickle)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProxySpec:
    task: str
    dataset: DatasetConfig
    master_seed: int
    proxy_epochs: int


_PROXY_CACHE: dict[ProxySpec, tuple[df.Dataset, df.Dataset]] = {}


def _proxy_splits(spec: ProxySpec) -> tuple[df.Dataset, df.Dataset]:
    if spec not in _PROXY_CACHE:
        config = RunConfig(spec.task, spec.master_seed, ".", spec.dataset)
        train, val, _, _ = build_splits(config)
        if len(train) > PROXY_TRAIN_CAP:
            train = df.Dataset(train.task, train.x[:PROXY_TRAIN_CAP],
                               train.y[:PROXY_TRAIN_CAP])
        _PROXY_CACHE[spec] = (train, val)
    return _PROXY_CACHE[spec]


def proxy_evaluator(spec: ProxySpec, genome: ss.Genome, eval_seed: int) -> tuple[float, float]:
    """Short 'partial training' score plus analytic dense 32-bit cost."""
    train_ds, val_ds = _proxy_splits(spec)
    space = ss.space_for(spec.task)
    arch = ss.decode(space, genome)
    bops = bops_model(arch, BitConfig(32, 32)).total
    store = te.init_params(arch, np.random.default_rng(eval_seed))
    cfg = te.TrainConfig(learning_rate=PROXY_LR, batch_size=PROXY_BATCH,
                         epochs=spec.proxy_epochs, seed=eval_seed)
    te.train(arch, store, train_ds, cfg)
    error = tp.score_from_metric(spec.task, te.evaluate(arch, store, val_ds))
    return error, bops


# --------------------------------------------------------------------------
# Output helpers: deterministic bytes, metadata quarantined to run_meta.json
# --------------------------------------------------------------------------

def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_run_meta(out: Path, command: str, started: datetime.datetime) -> None:
    meta = {
        "command": command,
        "package_version": __version__,
        "started": started.isoformat(),
        "finished": datetime.datetime.now().isoformat(),
    }
    _write_json(out / "run_meta.json", meta)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_global(config: RunConfig) -> int:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now()
    space = ss.space_for(config.task)
    spec = ProxySpec(config.task, config.dataset, config.seed,
                     config.global_cfg.proxy_epochs)
    evaluator = partial(proxy_evaluator, spec)
    result = es.run_global_search(
        space, config.global_cfg.budget, config.global_cfg.pop_size,
        rng_for(config.seed, "global"), evaluator,
        crossover_prob=config.global_cfg.crossover_prob,
        mutation_rate=config.global_cfg.mutation_rate,
        workers=config.global_cfg.workers,
    )
    _write_csv(out / "trials.csv",
               ["trial_id", "genome_json", "error", "bops", "rank_at_insert"],
               ((t.trial_id, json.dumps(t.genome.to_json()), t.error, t.bops,
                 t.rank_at_insert) for t in result.trials))
    archive_payload = {
        "task": config.task,
        "candidates": [
            {"genome": c.genome.to_json(), "error": c.error, "bops": c.bops,
             "eval_seed": c.eval_seed}
            for c in result.archive.sorted_by_bops()
        ],
    }
    _write_json(out / "archive.json", archive_payload)
    _write_json(out / "space.json", space.to_json())
    _, _, _, manifest = build_splits(config)
    _write_json(out / "dataset_manifest.json", manifest)

    selected = es.select_by_bops(result.archive, k=4)
    selected_payload = {}
    for name, cand in selected.items():
        arch = ss.decode(space, cand.genome)
        arch_file = f"arch_{name}.json"
        (out / arch_file).write_text(ir.dumps(arch) + "\n")
        selected_payload[name] = {"file": arch_file, "genome": cand.genome.to_json(),
                                  "error": cand.error, "bops": cand.bops,
                                  "params": ir.count_params(arch)}
    _write_json(out / "selected.json", selected_payload)
    _write_run_meta(out, "global", started)
    print(f"global search: {len(result.trials)} trials, archive {len(result.archive)}, "
          f"selected {sorted(selected)}")
    return EXIT_OK


def _load_arch_file(path: Path) -> ir.ArchDescriptor:
    if not path.exists():
        raise ConfigError(f"architecture file not found: {path}")
    try:
        arch = ir.loads(path.read_text())
    except (json.JSONDecodeError, KeyError, ValueError) as err:
        raise ConfigError(f"architecture file {path}: {err}") from None
    problems = ir.validate(arch)
    if problems:
        raise ConfigError(f"architecture file {path}: {problems[0]}")
    return arch


def _arch_files_for_local(config: RunConfig, args_files: list[str]) -> list[Path]:
    if args_files:
        return [Path(f) for f in args_files]
    selected_path = Path(config.output_dir) / "selected.json"
    if not selected_path.exists():
        raise ConfigError("no architecture files given and no selected.json in "
                          f"{config.output_dir}; run 'global' first")
    selected = json.loads(selected_path.read_text())
    return [Path(config.output_dir) / entry["file"] for entry in selected.values()]


def _local_one(config: RunConfig, arch_path: Path, train_ds, val_ds, out: Path) -> dict:
    name = arch_path.stem.removeprefix("arch_")
    arch = _load_arch_file(arch_path)
    lc = config.local_cfg
    hpo = tp.run_local_hpo(arch, train_ds, val_ds, lc.hpo_budget,
                           rng_for(config.seed, f"hpo:{name}"), epochs=lc.hpo_epochs)
    _write_csv(out / f"hpo_{name}.csv",
               ["trial_id", "lr", "weight_decay", "schedule", "batch_size", "score", "status"],
               ((i, t.assignment["learning_rate"], t.assignment["weight_decay"],
                 t.assignment["lr_schedule"], t.assignment["batch_size"],
                 t.score if math.isfinite(t.score) else "", t.status)
                for i, t in enumerate(hpo.history)))

    dense = te.init_params(arch, np.random.default_rng(hpo.best_config.seed))
    te.train(arch, dense, train_ds, hpo.best_config)
    ckpt_dir = out / "checkpoints" / name
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    te.save_checkpoint(ckpt_dir / "dense.ckpt", arch, dense)

    plan = cp.CompressionPlan(lc.bit_widths, lc.prune_fraction, lc.iterations,
                              lc.epochs_per_iter, lc.prune_scope)
    finetune_cfg = te.TrainConfig(learning_rate=lc.finetune_lr, batch_size=FINETUNE_BATCH,
                                  epochs=lc.epochs_per_iter,
                                  weight_decay=hpo.best_config.weight_decay,
                                  seed=hpo.best_config.seed)
    result = cp.run_compression(arch, train_ds, val_ds, plan, finetune_cfg, dense,
                                rng_for(config.seed, f"compress:{name}"),
                                workers=lc.workers)
    _write_csv(out / f"curves_{name}.csv",
               ["bit_width", "iteration", "sparsity", "metric", "bops"],
               cp.curve_rows(result))
    for (bits, it), store in sorted(result.checkpoints.items()):
        te.save_checkpoint(ckpt_dir / f"b{bits:02d}_i{it:02d}.ckpt", arch, store)
    chosen, warning = cp.select_compressed(result, lc.tolerance)
    summary = {
        "arch_file": _relative_to(arch_path, out),
        "dense_metric": result.dense_metric,
        "best_train_config": {
            "learning_rate": hpo.best_config.learning_rate,
            "weight_decay": hpo.best_config.weight_decay,
            "batch_size": hpo.best_config.batch_size,
            "lr_schedule": hpo.best_config.lr_schedule,
            "epochs": hpo.best_config.epochs,
            "seed": hpo.best_config.seed,
        },
        "best_hpo_score": hpo.best_score,
        "chosen": {
            "bit_width": chosen.bit_width,
            "iteration": chosen.iteration,
            "sparsity": chosen.sparsity,
            "metric": chosen.metric,
            "bops": chosen.bops,
            "checkpoint": _relative_to(
                ckpt_dir / f"b{chosen.bit_width:02d}_i{chosen.iteration:02d}.ckpt", out),
        },
        "warning_no_point_within_tolerance": warning,
    }
    _write_json(out / f"summary_{name}.json", summary)
    return summary


def _relative_to(path: Path, base: Path) -> str:
    try:
        return str(path.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path)


def cmd_local(config: RunConfig, arch_files: list[str]) -> int:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now()
    paths = _arch_files_for_local(config, arch_files)
    train_ds, val_ds, _, _ = build_splits(config)
    for path in paths:
        summary = _local_one(config, path, train_ds, val_ds, out)
        chosen = summary["chosen"]
        print(f"{path.stem}: dense={summary['dense_metric']:.4g} -> "
              f"{chosen['bit_width']}b sparsity={chosen['sparsity']:.3f} "
              f"metric={chosen['metric']:.4g}")
    _write_run_meta(out, "local", started)
    return EXIT_OK


def cmd_compress(config: RunConfig, arch_file: str, checkpoint: str) -> int:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now()
    arch = _load_arch_file(Path(arch_file))
    ckpt_arch, dense = te.load_checkpoint(checkpoint)
    if ckpt_arch != arch:
        raise ConfigError("checkpoint architecture does not match the arch file")
    train_ds, val_ds, _, _ = build_splits(config)
    lc = config.local_cfg
    name = Path(arch_file).stem.removeprefix("arch_")
    plan = cp.CompressionPlan(lc.bit_widths, lc.prune_fraction, lc.iterations,
                              lc.epochs_per_iter, lc.prune_scope)
    cfg = te.TrainConfig(learning_rate=lc.finetune_lr, batch_size=FINETUNE_BATCH,
                         epochs=lc.epochs_per_iter, seed=config.seed)
    result = cp.run_compression(arch, train_ds, val_ds, plan, cfg, dense,
                                rng_for(config.seed, f"compress:{name}"),
                                workers=lc.workers)
    _write_csv(out / f"curves_{name}.csv",
               ["bit_width", "iteration", "sparsity", "metric", "bops"],
               cp.curve_rows(result))
    ckpt_dir = out / "checkpoints" / name
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for (bits, it), store in sorted(result.checkpoints.items()):
        te.save_checkpoint(ckpt_dir / f"b{bits:02d}_i{it:02d}.ckpt", arch, store)
    chosen, warning = cp.select_compressed(result, lc.tolerance)
    _write_json(out / f"summary_{name}.json", {
        "arch_file": _relative_to(Path(arch_file), out),
        "dense_metric": result.dense_metric,
        "chosen": {"bit_width": chosen.bit_width, "iteration": chosen.iteration,
                   "sparsity": chosen.sparsity, "metric": chosen.metric,
                   "bops": chosen.bops},
        "warning_no_point_within_tolerance": warning,
    })
    _write_run_meta(out, "compress", started)
    print(f"compress {name}: chose {chosen.bit_width}b iter {chosen.iteration} "
          f"(sparsity {chosen.sparsity:.3f}, metric {chosen.metric:.4g})")
    return EXIT_OK


def _format_report(rows: list[tuple], header: list[str], fmt: str) -> str:
    if fmt == "json":
        payload = [dict(zip(header, row)) for row in rows]
        return json.dumps(payload, indent=2, sort_keys=True)
    if fmt == "csv":
        lines = [",".join(header)]
        lines += [",".join(str(v) for v in row) for row in rows]
        return "\n".join(lines)
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def cmd_bops(arch_file: str, weight_bits: int, act_bits: int, density: float,
             fmt: str) -> int:
    arch = _load_arch_file(Path(arch_file))
    if not 0.0 <= density <= 1.0:
        raise ConfigError("field --density must be in [0, 1]")
    try:
        bits = BitConfig(weight_bits, act_bits)
    except NacforgeError as err:
        raise ConfigError(f"field --weight-bits/--act-bits: {err}") from None
    prunable = {i for i, layer in enumerate(arch.layers)
                if type(layer).__name__ in te.PRUNABLE_KEYS}
    profile = SparsityProfile({i: density for i in prunable})
    report = bops_model(arch, bits, profile)
    rows = [(e.index, e.layer_type, e.bops) for e in report.layers]
    rows.append(("total", "", report.total))
    print(_format_report(rows, ["layer_index", "layer_type", "bops"], fmt))
    if fmt == "table":
        print(f"total: {report.total:.3f} BOPs = {megabops(report.total):.3f} MegaBOPs")
    return EXIT_OK


def cmd_params(arch_file: str, fmt: str) -> int:
    arch = _load_arch_file(Path(arch_file))
    rows = []
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, ir.Conv2d):
            n = layer.out_ch * layer.in_ch * layer.kernel**2 + layer.out_ch
        elif isinstance(layer, ir.Linear):
            n = layer.out_dim * layer.in_dim + layer.out_dim
        elif isinstance(layer, ir.BatchNorm):
            n = 2 * layer.channels
        elif isinstance(layer, ir.ConvAttention):
            c, d = layer.channels, layer.qkv_dim
            n = 3 * (d * c + d) + (c * d + c)
        else:
            n = 0
        rows.append((i, type(layer).__name__, n))
    total = ir.count_params(arch)
    rows.append(("total", "", total))
    print(_format_report(rows, ["layer_index", "layer_type", "params"], fmt))
    return EXIT_OK


# --------------------------------------------------------------------------
# Export: deployment manifest toward external synthesis tooling
# --------------------------------------------------------------------------

EXPORT_VERSION = 1
REUSE_FACTOR = {ir.PATCH_REGRESSION: 4, ir.SET_CLASSIFICATION: 2}


def export_manifest(arch: ir.ArchDescriptor, params: te.ParamStore) -> dict:
    quant = params.quant or BitConfig(32, 32)
    layers = []
    for i, lp in enumerate(params.layers):
        entry = {"index": i, "type": type(arch.layers[i]).__name__,
                 "tensors": {}, "masks": {}, "buffers": {}}
        for key in sorted(lp.params):
            data = lp.params[key].data
            mask = lp.masks.get(key)
            if mask is not None:
                data = data * mask  # masked weights serialize as exact zeros
                entry["masks"][key] = [int(v) for v in mask.ravel()]
            entry["tensors"][key] = {
                "shape": list(data.shape),
                "values": [float(np.float32(v)) for v in data.ravel()],
            }
        for key in sorted(lp.buffers):
            entry["buffers"][key] = {
                "shape": list(lp.buffers[key].shape),
                "values": [float(np.float32(v)) for v in lp.buffers[key].ravel()],
            }
        layers.append(entry)
    return {
        "format": "nacforge-deploy",
        "version": EXPORT_VERSION,
        "architecture": ir.arch_to_json(arch),
        "weight_bits": quant.weight_bits,
        "act_bits": quant.act_bits,
        "reuse_factor": REUSE_FACTOR[arch.task],
        "layers": layers,
    }


def import_manifest(payload: dict) -> tuple[ir.ArchDescriptor, te.ParamStore]:
    arch = ir.arch_from_json(payload["architecture"])
    layers = []
    for entry in payload["layers"]:
        lp = te.LayerParams()
        for key, spec in entry["tensors"].items():
            arr = np.array(spec["values"], dtype=np.float64).reshape(spec["shape"])
            lp.params[key] = te.Tensor(arr, requires_grad=True)
        for key, values in entry["masks"].items():
            lp.masks[key] = np.array(values, dtype=np.float64).reshape(
                entry["tensors"][key]["shape"])
        for key, spec in entry["buffers"].items():
            lp.buffers[key] = np.array(spec["values"], dtype=np.float64).reshape(spec["shape"])
        layers.append(lp)
    quant = BitConfig(payload["weight_bits"], payload["act_bits"])
    return arch, te.ParamStore(layers, quant)


def cmd_export(checkpoint: str, output: str | None) -> int:
    try:
        arch, params = te.load_checkpoint(checkpoint)
    except (OSError, NacforgeError, json.JSONDecodeError, KeyError, ValueError) as err:
        print(f"error: corrupt checkpoint {checkpoint}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    payload = export_manifest(arch, params)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if output:
        Path(output).write_text(text)
        print(f"wrote {output}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_report(output_dir: str) -> int:
    out = Path(output_dir)
    if not out.exists():
        raise ConfigError(f"output directory not found: {output_dir}")
    printed = False
    archive_path = out / "archive.json"
    if archive_path.exists():
        archive = json.loads(archive_path.read_text())
        print(f"archive: {len(archive['candidates'])} non-dominated candidates "
              f"({archive['task']})")
        printed = True
    selected_path = out / "selected.json"
    if selected_path.exists():
        selected = json.loads(selected_path.read_text())
        rows = [(name, entry["error"], megabops(entry["bops"]), entry["params"])
                for name, entry in sorted(selected.items())]
        print(_format_report(rows, ["model", "error", "megabops", "params"], "table"))
        printed = True
    for summary_path in sorted(out.glob("summary_*.json")):
        s = json.loads(summary_path.read_text())
        chosen = s["chosen"]
        warn = " [outside tolerance]" if s.get("warning_no_point_within_tolerance") else ""
        print(f"{summary_path.stem}: dense={s['dense_metric']:.4g} chose "
              f"{chosen['bit_width']}b iter={chosen['iteration']} "
              f"sparsity={chosen['sparsity']:.3f} metric={chosen['metric']:.4g}{warn}")
        printed = True
    if not printed:
        raise ConfigError(f"no pipeline outputs found under {output_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nacforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_global = sub.add_parser("global", help="evolutionary architecture search")
    p_global.add_argument("--config", required=True)

    p_local = sub.add_parser("local", help="training HPO + compression")
    p_local.add_argument("--config", required=True)
    p_local.add_argument("arch_files", nargs="*",
                         help="architecture JSONs (default: selected.json of the run)")

    p_comp = sub.add_parser("compress", help="compression loop from a checkpoint")
    p_comp.add_argument("--config", required=True)
    p_comp.add_argument("--arch", required=True)
    p_comp.add_argument("--checkpoint", required=True)

    p_bops = sub.add_parser("bops", help="per-layer bit-operation report")
    p_bops.add_argument("arch_file")
    p_bops.add_argument("--weight-bits", type=int, default=32)
    p_bops.add_argument("--act-bits", type=int, default=32)
    p_bops.add_argument("--density", type=float, default=1.0)
    p_bops.add_argument("--format", choices=("csv", "json", "table"), default="table")

    p_params = sub.add_parser("params", help="per-layer parameter report")
    p_params.add_argument("arch_file")
    p_params.add_argument("--format", choices=("csv", "json", "table"), default="table")

    p_export = sub.add_parser("export", help="deployment manifest from a checkpoint")
    p_export.add_argument("checkpoint")
    p_export.add_argument("--output")

    p_report = sub.add_parser("report", help="summarize a run directory")
    p_report.add_argument("output_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "global":
            return cmd_global(load_config(args.config))
        if args.command == "local":
            return cmd_local(load_config(args.config), args.arch_files)
        if args.command == "compress":
            return cmd_compress(load_config(args.config), args.arch, args.checkpoint)
        if args.command == "bops":
            return cmd_bops(args.arch_file, args.weight_bits, args.act_bits,
                            args.density, args.format)
        if args.command == "params":
            return cmd_params(args.arch_file, args.format)
        if args.command == "export":
            return cmd_export(args.checkpoint, args.output)
        if args.command == "report":
            return cmd_report(args.output_dir)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NacforgeError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
