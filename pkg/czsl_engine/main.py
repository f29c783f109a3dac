"""
Command-line entry point
Subcommands: gen-data, build-split, train, eval, attention-dump, retrieve.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from .checkpoint import load_checkpoint
from .config import RunConfig, env_overrides
from .data import (
    LabeledSample,
    TripletIndex,
    build_czsl_split,
    generate_synthetic,
    load_features,
    load_manifest,
    load_masks,
    load_split,
    load_synonyms,
    load_word_embeddings,
    mates_for,
    write_synthetic,
)
from .data.split import SplitSpec
from .diagnostics import attention_maps, attribute_mask_mass, retrieve_by_hallucination, write_grid
from .errors import ConfigError, CzslError, DataError, MateNotFoundError
from .evaluation import build_score_matrix, evaluate, write_curves, write_predictions, write_report
from .runner import TrainingRunner

logger = logging.getLogger(__name__)

RUN_CONFIG_FILE = "run.cfg"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="czsl",
        description="Compositional zero-shot learning: data, training, evaluation and diagnostics.",
    )
    parser.add_argument("--config", required=True, help="run configuration file (key=value)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--out", default=None, help="output directory (default: CZSL_OUT_DIR or out_dir)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="write a synthetic benchmark with planted factors")
    sub.add_parser("build-split", help="derive a generalized CZSL split from a manifest")
    sub.add_parser("train", help="train a model end to end")

    p_eval = sub.add_parser("eval", help="generalized evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=("val", "test"), default="test")
    p_eval.add_argument("--ks", default=None, help="comma-separated top-k values (default eval.ks)")
    p_eval.add_argument("--predictions", action="store_true", help="also write top-3 predictions CSV")

    p_att = sub.add_parser("attention-dump", help="write 7x7 affinity maps for samples")
    p_att.add_argument("--checkpoint", required=True)
    p_att.add_argument("--samples", nargs="+", required=True, help="sample ids")
    p_att.add_argument("--uniform", action="store_true", help="debug mode with lam=gamma=0")

    p_ret = sub.add_parser("retrieve", help="rank samples by a hallucinated composition")
    p_ret.add_argument("--checkpoint", required=True)
    p_ret.add_argument("--pair", nargs=2, required=True, metavar=("ATTR", "OBJ"))
    p_ret.add_argument("--top-n", type=int, default=5)
    p_ret.add_argument("--split", choices=("val", "test"), default="test")
    return parser


# ---- helpers ----------------------------------------------------------
def load_run_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config)
    env = env_overrides()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        config.seed = args.seed
        config.synthetic.seed = args.seed
    if args.out:
        config.out_dir = args.out
    elif "CZSL_OUT_DIR" in env:
        config.out_dir = env["CZSL_OUT_DIR"]
    if "CZSL_WORKERS" in env:
        try:
            config.eval.workers = int(env["CZSL_WORKERS"])
        except ValueError:
            raise ConfigError(f"CZSL_WORKERS must be an integer, got {env['CZSL_WORKERS']!r}") from None
    config.validate()
    return config


def _require(path: str, key: str) -> Path:
    if not path:
        raise ConfigError(f"{key} is not set")
    return Path(path)


def load_dataset(config: RunConfig):
    """Feature store, split and (when configured) word vectors for `config`."""
    store = load_features(_require(config.data.features, "data.features"))
    split = load_split(_require(config.data.split, "data.split"))
    missing = [s for s in split.train_ids + split.val_ids + split.test_ids if s not in store]
    if missing:
        raise DataError(f"{len(missing)} split samples have no features, e.g. {missing[0]!r}")
    vectors = None
    if config.data.embeddings:
        vectors = load_word_embeddings(config.data.embeddings, expected_dim=config.model.d_w)
    return store, split, vectors


def load_model(checkpoint_path: str, split: SplitSpec, store):
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.attributes != split.attributes() or ckpt.objects != split.objects():
        raise ConfigError(
            f"checkpoint vocabulary ({len(ckpt.attributes)} attrs, {len(ckpt.objects)} objs) "
            f"does not match the dataset ({len(split.attributes())} attrs, {len(split.objects())} objs)"
        )
    if ckpt.config.model.n0 != store.n0:
        raise ConfigError(f"checkpoint expects n0={ckpt.config.model.n0}, features have n0={store.n0}")
    return ckpt.build_model(), ckpt


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from e
    return out


# ---- commands ---------------------------------------------------------
def cmd_gen_data(config: RunConfig) -> Dict[str, str]:
    out = _out_dir(config)
    dataset = generate_synthetic(config.synthetic)
    files = write_synthetic(dataset, out)

    # a ready-to-use run config pointing at the generated files
    run = RunConfig.from_flat(config.to_flat())
    run.data.features = str(files["features"])
    run.data.manifest = str(files["manifest"])
    run.data.split = str(files["split"])
    run.data.masks = str(files["masks"])
    run.data.embeddings = str(files["embeddings"])
    run.model.n0 = config.synthetic.feature_dim
    run.model.d_w = config.synthetic.word_dim
    run.model.d_emb = config.synthetic.word_dim
    run.validate()
    run.save(out / RUN_CONFIG_FILE)

    result = {name: str(path) for name, path in files.items()}
    result["config"] = str(out / RUN_CONFIG_FILE)
    return result


def cmd_build_split(config: RunConfig) -> Dict[str, object]:
    manifest = load_manifest(_require(config.data.manifest, "data.manifest"))
    synonyms = load_synonyms(config.data.synonyms) if config.data.synonyms else None
    d = config.data
    spec = build_czsl_split(
        manifest,
        min_frequency=d.min_frequency,
        synonym_map=synonyms,
        unseen_fraction=d.unseen_fraction,
        seed=d.split_seed,
        holdout_fraction=d.holdout_fraction,
    )
    path = _out_dir(config) / "split.json"
    spec.save(path)
    return {
        "split": str(path),
        "train_pairs": len(spec.train_pairs),
        "val_unseen_pairs": len(spec.val_unseen_pairs),
        "test_unseen_pairs": len(spec.test_unseen_pairs),
        "train": len(spec.train_ids),
        "val": len(spec.val_ids),
        "test": len(spec.test_ids),
    }


def cmd_train(config: RunConfig) -> Dict[str, object]:
    store, split, vectors = load_dataset(config)
    result = TrainingRunner(config, store, split, vectors, _out_dir(config)).run()
    return {
        "final_checkpoint": str(result.final_checkpoint),
        "best_checkpoint": str(result.best_checkpoint),
        "log": str(result.log_path),
        "epochs": len(result.history),
        "best_val_auc": result.best_val_auc,
        "best_epoch": result.best_epoch,
    }


def _parse_ks(raw: Optional[str], default: Sequence[int]) -> List[int]:
    if raw is None:
        return list(default)
    try:
        return [int(k) for k in raw.split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"--ks expects comma-separated integers, got {raw!r}") from None


def cmd_eval(config: RunConfig, checkpoint: str, which: str, ks: Sequence[int], predictions: bool) -> dict:
    store, split, _ = load_dataset(config)
    model, _ = load_model(checkpoint, split, store)
    sm = build_score_matrix(model, store, split, which, workers=config.eval.workers)
    report, curves = evaluate(sm, ks, which)

    out = _out_dir(config)
    write_report(out / f"metrics_{which}.json", [report])
    if config.eval.dump_curves:
        write_curves(out / f"curves_{which}.csv", curves, which)
    if predictions or config.eval.predictions:
        write_predictions(out / f"predictions_{which}.csv", sm, report.best_bias, top=3)
    return report.to_json()


def cmd_attention_dump(config: RunConfig, checkpoint: str, sample_ids: Sequence[str], uniform: bool) -> dict:
    store, split, _ = load_dataset(config)
    model, _ = load_model(checkpoint, split, store)
    masks = load_masks(config.data.masks) if config.data.masks else None
    index = TripletIndex(split.train_ids, split.labels)
    rng = np.random.default_rng(config.seed)
    out = _out_dir(config) / "attention"
    out.mkdir(parents=True, exist_ok=True)

    results: Dict[str, dict] = {}
    for sid in sample_ids:
        if sid not in split.labels:
            results[sid] = {"error": f"unknown sample {sid!r}"}
            continue
        attr, obj = split.labels[sid]
        try:
            triplet = mates_for(LabeledSample(sid, attr, obj), index, rng)
        except MateNotFoundError as e:
            logger.warning(f"attention-dump: {e.message}")
            results[sid] = {"error": e.one_line()}
            continue
        maps = attention_maps(model, store, triplet, uniform=uniform)
        for name, weights in maps.items():
            write_grid(out / f"{sid}_{name}.csv", weights)
        entry = {"attr_mate": triplet.attr_mate.id, "obj_mate": triplet.obj_mate.id,
                 "sums": {name: float(np.sum(w)) for name, w in maps.items()}}
        if masks is not None:
            entry["attribute_mask_mass"] = attribute_mask_mass(maps, triplet, masks)
        results[sid] = entry
    return {"dir": str(out), "samples": results}


def cmd_retrieve(config: RunConfig, checkpoint: str, pair: Tuple[str, str], top_n: int, which: str) -> dict:
    store, split, _ = load_dataset(config)
    model, _ = load_model(checkpoint, split, store)
    ranked = retrieve_by_hallucination(model, store, split, pair, top_n, which=which,
                                       rng=np.random.default_rng(config.seed))
    return {
        "pair": list(pair),
        "results": [{"id": sid, "score": score, "label": list(split.labels[sid])} for sid, score in ranked],
    }


def dispatch(args: argparse.Namespace, config: RunConfig) -> dict:
    if args.command == "gen-data":
        return cmd_gen_data(config)
    if args.command == "build-split":
        return cmd_build_split(config)
    if args.command == "train":
        return cmd_train(config)
    if args.command == "eval":
        return cmd_eval(config, args.checkpoint, args.split, _parse_ks(args.ks, config.eval.ks), args.predictions)
    if args.command == "attention-dump":
        return cmd_attention_dump(config, args.checkpoint, args.samples, args.uniform)
    if args.command == "retrieve":
        return cmd_retrieve(config, args.checkpoint, tuple(args.pair), args.top_n, args.split)
    raise ConfigError(f"unknown command {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    load_dotenv()
    args = build_parser().parse_args(argv)

    level_name = (args.log_level or os.getenv("CZSL_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)

    try:
        config = load_run_config(args)
        result = dispatch(args, config)
    except CzslError as e:
        logger.debug("command failed", exc_info=True)
        print(e.one_line(), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        reason = " ".join(str(e).split()) or type(e).__name__
        print(f"error kind=internal exit=4 reason={reason}", file=sys.stderr)
        return 4

    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
