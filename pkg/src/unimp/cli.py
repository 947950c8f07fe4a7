"""Command-line surface: mask, pretrain, finetune, impute, evaluate, gradcheck.

Every subcommand is a pure function of its inputs, flags and seed; reruns
reproduce outputs byte-exactly except the timestamp line in run manifests.
Configuration files hold ``key = value`` lines with ``#`` comments; flags
override file values, and the ``UNIMP_SEED`` environment variable backs the
seed when neither provides one.

Exit codes: 0 success, 2 usage/parameter problems, 3 I/O problems,
4 non-finite numerics.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time
from dataclasses import fields as dataclass_fields

import numpy as np

from . import baselines, metrics
from .errors import MetricError, NonFiniteError, ParameterError, UnimpError
from .gradcheck import run_gradcheck
from .infer import impute, write_provenance
from .masking import MissSpec, simulate
from .model import ModelState
from .tabular import (
    ColumnKind,
    Table,
    apply_scalers,
    fit_scalers,
    load_csv,
    load_mask,
    read_schema_file,
    write_csv,
    write_mask,
)
from .train import TrainConfig, finetune, pretrain

_CONFIG_KEYS = {f.name: f.type for f in dataclass_fields(TrainConfig)}
_INT_KEYS = {"chunk_size", "batch_size", "epochs", "seed", "l_max",
             "embed_dim", "max_decode_len", "workers"}


def _read_config_file(path: str) -> dict:
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ParameterError(f"{path}:{ln}: expected 'key = value'")
            if key not in _CONFIG_KEYS:
                raise ParameterError(f"{path}:{ln}: unknown config key {key!r}")
            out[key] = int(value) if key in _INT_KEYS else float(value)
    return out


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("UNIMP_SEED")
    return int(env) if env else 0


def _build_train_config(args) -> TrainConfig:
    values = _read_config_file(args.config) if args.config else {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if "seed" not in values:
        values["seed"] = _resolve_seed(args)
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def _load_table(path: str) -> Table:
    schema_path = path + ".schema"
    schema = read_schema_file(schema_path) if os.path.exists(schema_path) else None
    return load_csv(path, schema)


def _load_tables(data: str) -> list[Table]:
    if os.path.isdir(data):
        paths = sorted(glob.glob(os.path.join(data, "*.csv")))
        if not paths:
            raise OSError(f"no CSV files under {data}")
        return [_load_table(p) for p in paths]
    return [_load_table(data)]


def _write_lines(path: str, lines: list[str]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    os.replace(tmp, path)


def _write_manifest(path: str, cfg: TrainConfig, epoch_lines: list[str]) -> None:
    header = [f"# unimp run manifest",
              f"# timestamp: {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    header.extend(f"# {f.name} = {getattr(cfg, f.name)}"
                  for f in dataclass_fields(TrainConfig))
    _write_lines(path, header + epoch_lines)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_mask(args) -> int:
    table = _load_table(args.input)
    seed = _resolve_seed(args)
    spec = MissSpec(mechanism=args.mechanism, rate=args.rate, seed=seed,
                    cause_fraction=args.cause_fraction)
    spec.validate()
    existing = table.mask()
    if spec.mechanism == "mcar":
        generated = simulate(table, spec)
    else:
        scalers = fit_scalers(table, existing)
        generated = simulate(apply_scalers(table, scalers), spec)
    combined = (generated & existing).astype(np.uint8)
    write_mask(combined, args.out)
    fraction = 1.0 - float(combined.mean())
    print(f"wrote {args.out}: realized missing fraction {fraction:.4f}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _build_train_config(args)
    tables = _load_tables(args.data)
    model, _, manifest = pretrain(tables, cfg)
    model.save(args.out)
    _write_manifest(args.out + ".manifest", cfg, manifest)
    print(f"wrote {args.out} ({len(manifest)} epochs)")
    return 0


def cmd_finetune(args) -> int:
    if args.config is None and args.epochs is None:
        args.epochs = TrainConfig.finetune_defaults().epochs
    cfg = _build_train_config(args)
    tables = _load_tables(args.data)
    if len(tables) != 1:
        raise ParameterError("finetune expects exactly one table")
    model = ModelState.load(args.ckpt)
    model, _, manifest = finetune(model, tables[0], cfg)
    model.save(args.out)
    _write_manifest(args.out + ".manifest", cfg, manifest)
    print(f"wrote {args.out} ({len(manifest)} epochs)")
    return 0


def cmd_impute(args) -> int:
    table = _load_table(args.input)
    mask = load_mask(args.mask) if args.mask else table.mask()
    if mask.shape != (table.n, table.d):
        raise ParameterError(
            f"mask shape {mask.shape} does not match table {table.n}x{table.d}")
    if args.method == "mean":
        result_table = baselines.impute_mean_mode(table, mask)
        provenance = [(i, j, bool(mask[i, j] == 0))
                      for i in range(table.n) for j in range(table.d)]
    elif args.method == "knni":
        result_table = baselines.impute_knni(table, mask, k=args.k)
        provenance = [(i, j, bool(mask[i, j] == 0))
                      for i in range(table.n) for j in range(table.d)]
    else:
        if not args.ckpt:
            raise ParameterError("--ckpt is required for method unimp")
        model = ModelState.load(args.ckpt)
        result = impute(table, mask, model, chunk_size=args.chunk_size)
        result_table, provenance = result.table, result.provenance
    write_csv(result_table, args.out)
    from .infer import ImputeResult
    write_provenance(ImputeResult(result_table, provenance),
                     args.out + ".provenance")
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    truth = _load_table(args.truth)
    imputed = load_csv(args.imputed, schema=list(truth.kinds))
    mask = load_mask(args.mask)
    if truth.n != imputed.n or truth.d != imputed.d:
        raise ParameterError("truth and imputed tables differ in shape")
    if mask.shape != (truth.n, truth.d):
        raise ParameterError("mask shape does not match the tables")
    scalers = fit_scalers(truth, np.ones_like(mask))
    truth_scaled = apply_scalers(truth, scalers)
    imputed_scaled = apply_scalers(imputed, scalers)

    values: list[tuple[str, str, float]] = []
    for kind, label in ((ColumnKind.NUMERICAL, "numerical"),
                        (ColumnKind.CATEGORICAL, "categorical")):
        cols = [j for j, k in enumerate(truth.kinds) if k is kind]
        if not cols:
            continue
        t = np.stack([truth_scaled.columns[j] for j in cols], axis=1)
        p = np.stack([imputed_scaled.columns[j] for j in cols], axis=1)
        m = mask[:, cols]
        if (m == 0).any():
            values.append(("rmse", label, metrics.rmse(t, p, m)))
            values.append(("mae", label, metrics.mae(t, p, m)))
    text_cols = [j for j, k in enumerate(truth.kinds) if k is ColumnKind.TEXT]
    text_cells = [(i, j) for j in text_cols
                  for i in np.nonzero(mask[:, j] == 0)[0]]
    if text_cells:
        from .encoder import FrozenBackbone, build_vocab, table_corpus
        vocab = build_vocab(table_corpus(truth))
        embedder = metrics.TextEmbedder(FrozenBackbone(len(vocab)), vocab)
        rouges = []
        sims = []
        for i, j in text_cells:
            gen = imputed.columns[j][i] or ""
            ref = truth.columns[j][i] or ""
            rouges.append(metrics.rouge1(str(gen), str(ref)))
            sims.append(metrics.cos_sim(str(gen), str(ref), embedder))
        r, p, f1 = (float(np.mean([x[axis] for x in rouges])) for axis in (0, 1, 2))
        values.append(("rouge1_recall", "text", r))
        values.append(("rouge1_precision", "text", p))
        values.append(("rouge1_f1", "text", f1))
        values.append(("cos_sim", "text", float(np.mean(sims))))
    if not values:
        raise MetricError("no masked cells to evaluate")
    _write_lines(args.report, metrics.report_lines(values))
    print(metrics.summary_table(values))
    return 0


def cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args)
    worst = run_gradcheck(dim=args.dim, num_layers=args.layers, seed=seed,
                          verbose=True)
    if worst >= 1e-4:
        print(f"FAIL: max relative error {worst:.3e} >= 1e-4")
        return 4
    print(f"OK: max relative error {worst:.3e} < 1e-4")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--l-max", dest="l_max", type=int, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--max-decode-len", dest="max_decode_len", type=int, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="accepted for interface stability; execution is "
                        "deterministic regardless of its value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unimp",
        description="Mixed-type tabular imputation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="simulate a missingness mask")
    p.add_argument("--input", required=True)
    p.add_argument("--mechanism", required=True, choices=["mcar", "mar", "mnar"])
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cause-fraction", dest="cause_fraction", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("pretrain", help="train a model over CSV tables")
    p.add_argument("--data", required=True, help="CSV file or directory of CSVs")
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="continue training on one table")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="starting checkpoint")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("impute", help="fill masked cells of a table")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", default=None, help="0/1 mask CSV; defaults to the table's own missingness")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--method", default="unimp", choices=["mean", "knni", "unimp"])
    p.add_argument("--k", type=int, default=5, help="neighbours for knni")
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("evaluate", help="score an imputed table against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--imputed", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (OSError, EOFError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except UnimpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
