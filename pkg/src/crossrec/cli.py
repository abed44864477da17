"""Operator commands: generate | train | eval | export | compare.

Every command is a pure function of (config file, input files, seed):
re-running writes identical bytes. Exit codes: 0 ok, 2 config error,
3 data error, 4 numeric failure. Failures remove partial outputs and
print `<category>: <message>` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from . import runconfig
from .autodiff import no_grad
from .checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .evaluation import build_catalog, evaluate
from .events import DatasetManifest, TrainingExample
from .ingest import ingest_events
from .model import VARIANTS, ModelParameters, user_embedding
from .pipeline import assemble_batch, build_examples, split_train_test, stitch, trim_to_cap
from .runconfig import RunConfig
from .synthgen import generate_dataset
from .training import train


def _out_dir(rc: RunConfig) -> Path:
    if not rc.paths.out:
        raise ConfigError("no output directory: set [paths] out or pass --out")
    out = Path(rc.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_manifest(rc: RunConfig) -> DatasetManifest:
    if not rc.paths.manifest:
        raise ConfigError("[paths] manifest is required")
    try:
        text = Path(rc.paths.manifest).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    return DatasetManifest.from_json(text)


def _load_examples(rc: RunConfig, manifest: DatasetManifest):
    """Ingest events and window them; window length is the positional capacity."""
    if not rc.paths.data:
        raise ConfigError("[paths] data is required")
    per_user = ingest_events(rc.paths.data, manifest)
    return build_examples(per_user, window_len=rc.model.positional_capacity)


def _checkpoint_path(rc: RunConfig) -> Path:
    if not rc.paths.checkpoint:
        raise ConfigError("[paths] checkpoint is required")
    return Path(rc.paths.checkpoint)


def cmd_generate(rc: RunConfig) -> int:
    out = _out_dir(rc)
    paths = generate_dataset(rc.generator, out)
    echo = out / "generator_config.json"
    echo.write_text(
        json.dumps(dataclasses.asdict(rc.generator), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    for name in ("events", "manifest", "intents"):
        print(f"{name}: {paths[name]}")
    print(f"config echo: {echo}")
    return 0


def cmd_train(rc: RunConfig) -> int:
    out = _out_dir(rc)
    manifest = _read_manifest(rc)
    rc.model.validate()
    per_user = _load_examples(rc, manifest)
    train_examples, _ = split_train_test(per_user)
    params = ModelParameters.init(rc.model, manifest, seed=rc.train.seed)
    ckpt = out / "checkpoint.ckpt"
    trace = out / "trace.csv"
    _, rows = train(train_examples, params, rc.train, manifest,
                    trace_path=trace, checkpoint_path=ckpt)
    print(f"steps: {len(rows)}")
    print(f"final loss: {rows[-1].total!r}")
    print(f"checkpoint: {ckpt} ({checkpoint_id(ckpt)})")
    print(f"trace: {trace}")
    return 0


def cmd_eval(rc: RunConfig) -> int:
    out = _out_dir(rc)
    manifest = _read_manifest(rc)
    ckpt = _checkpoint_path(rc)
    params = load_checkpoint(ckpt, expect_config=rc.model)
    per_user = _load_examples(rc, manifest)
    _, test_examples = split_train_test(per_user)
    catalog = build_catalog([ex for exs in per_user.values() for ex in exs])
    report = evaluate(params, test_examples, rc.eval, catalog=catalog,
                      checkpoint_ref=checkpoint_id(ckpt))
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.csv").write_text(report.csv() + "\n", encoding="utf-8")
    print(report.to_json())
    return 0


def cmd_export(rc: RunConfig) -> int:
    out = _out_dir(rc)
    manifest = _read_manifest(rc)
    ckpt = _checkpoint_path(rc)
    params = load_checkpoint(ckpt, expect_config=rc.model)
    if not rc.paths.data:
        raise ConfigError("[paths] data is required")
    per_user = ingest_events(rc.paths.data, manifest)
    capacity = params.config.positional_capacity
    lines = [f"f={params.config.f},checkpoint={checkpoint_id(ckpt)}"]
    with no_grad():
        for user_id in sorted(per_user):
            events = trim_to_cap(stitch(user_id, per_user[user_id])).events[-capacity:]
            example = TrainingExample(user_id=user_id, context=list(events), label=events[-1])
            batch = assemble_batch([example], manifest)
            h_star = user_embedding(batch, params).data[0]
            lines.append(f"{user_id}," + ",".join(repr(float(v)) for v in h_star))
    path = out / "embeddings.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"embeddings: {path} ({len(lines) - 1} users)")
    return 0


def cmd_compare(rc: RunConfig) -> int:
    out = _out_dir(rc)
    manifest = _read_manifest(rc)
    per_user = _load_examples(rc, manifest)
    train_examples, test_examples = split_train_test(per_user)
    catalog = build_catalog([ex for exs in per_user.values() for ex in exs])

    runs: dict[str, dict[str, list[float]]] = {}
    csv_rows = ["variant,seed,recall_at_k,ndcg_at_k"]
    for variant in VARIANTS:
        model_cfg = dataclasses.replace(rc.model, variant=variant)
        model_cfg.validate()
        recalls, ndcgs = [], []
        for seed in rc.compare_seeds:
            params = ModelParameters.init(model_cfg, manifest, seed=seed)
            train_cfg = dataclasses.replace(rc.train, seed=seed, variant=variant)
            train(train_examples, params, train_cfg, manifest)
            eval_cfg = dataclasses.replace(rc.eval, seed=seed)
            report = evaluate(params, test_examples, eval_cfg, catalog=catalog)
            recalls.append(report.recall_at_k)
            ndcgs.append(report.ndcg_at_k)
            csv_rows.append(f"{variant},{seed},{report.recall_at_k!r},{report.ndcg_at_k!r}")
        runs[variant] = {"recall": recalls, "ndcg": ndcgs}

    def stdev(vals: list[float]) -> float:
        return statistics.stdev(vals) if len(vals) > 1 else 0.0

    summary = {
        variant: {
            "recall_mean": statistics.fmean(m["recall"]),
            "recall_stdev": stdev(m["recall"]),
            "ndcg_mean": statistics.fmean(m["ndcg"]),
            "ndcg_stdev": stdev(m["ndcg"]),
            "recall": m["recall"],
            "ndcg": m["ndcg"],
        }
        for variant, m in runs.items()
    }
    payload = {"k": rc.eval.k, "seeds": list(rc.compare_seeds), "variants": summary}
    (out / "compare.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out / "compare.csv").write_text("\n".join(csv_rows) + "\n", encoding="utf-8")

    k = rc.eval.k
    print(f"{'variant':<24}{f'recall@{k}':<20}ndcg@{k}")
    for variant in VARIANTS:
        s = summary[variant]
        print(
            f"{variant:<24}"
            f"{s['recall_mean']:.4f} ± {s['recall_stdev']:.4f}    "
            f"{s['ndcg_mean']:.4f} ± {s['ndcg_stdev']:.4f}"
        )
    return 0


_COMMANDS = {
    "generate": (cmd_generate, ("events.ndjson", "manifest.json", "intents.json", "generator_config.json")),
    "train": (cmd_train, ("checkpoint.ckpt", "trace.csv")),
    "eval": (cmd_eval, ("report.json", "report.csv")),
    "export": (cmd_export, ("embeddings.csv",)),
    "compare": (cmd_compare, ("compare.json", "compare.csv")),
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="TOML run configuration")
    shared.add_argument("--seed", type=int, default=None,
                        help="override every per-module seed in the config")
    shared.add_argument("--out", default=None, help="override [paths] out")

    parser = argparse.ArgumentParser(
        prog="crossrec",
        description="Cross-domain sequential recommender: synthesize data, "
                    "train user towers, evaluate retrieval, export embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[shared], help="write a synthetic dataset")
    sub.add_parser("train", parents=[shared], help="train a model; write checkpoint + loss trace")
    sub.add_parser("eval", parents=[shared], help="score a checkpoint on the held-out windows")
    sub.add_parser("export", parents=[shared], help="write one pooled embedding row per user")
    sub.add_parser("compare", parents=[shared], help="train all variants over seeds; tabulate metrics")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command, artifacts = _COMMANDS[args.command]
    try:
        rc = runconfig.load(args.config)
        rc = runconfig.apply_overrides(rc, seed=args.seed, out=args.out)
        try:
            return command(rc)
        except BaseException:
            if rc.paths.out:
                for name in artifacts:
                    (Path(rc.paths.out) / name).unlink(missing_ok=True)
            raise
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
