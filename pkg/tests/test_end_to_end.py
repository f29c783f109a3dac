"""
Full training on the synthetic benchmark: the model has to pick up the planted factors.
"""

import math

import numpy as np
import pytest

from czsl_engine.config import RunConfig
from czsl_engine.data import (
    generate_synthetic,
    load_features,
    load_masks,
    load_split,
    load_word_embeddings,
    write_synthetic,
)
from czsl_engine.diagnostics import mean_attribute_mass, prototype_accuracy, prototype_features
from czsl_engine.evaluation import build_score_matrix, evaluate
from czsl_engine.runner import TrainingRunner

pytestmark = pytest.mark.slow

CLS_ONLY = {"loss.alpha1": "0", "loss.alpha2": "0", "loss.alpha3": "0", "loss.alpha4": "0"}


def _train(root, **overrides):
    config = RunConfig.from_flat({"train.preset": "synthetic", **overrides})
    dataset = generate_synthetic(config.synthetic)
    files = write_synthetic(dataset, root / "data")
    config.data.masks = str(files["masks"])
    config.out_dir = str(root / "run")

    store = load_features(files["features"])
    split = load_split(files["split"])
    vectors = load_word_embeddings(files["embeddings"], expected_dim=config.model.d_w)
    runner = TrainingRunner(config, store, split, vectors)
    untrained_auc = runner.validation_auc()
    result = runner.run()
    return runner, result, untrained_auc


def _val_report(runner):
    sm = build_score_matrix(runner.model, runner.store, runner.split, "val")
    report, _ = evaluate(sm, ks=[1], split="val")
    return report


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    return _train(tmp_path_factory.mktemp("synthetic"))


@pytest.fixture(scope="module")
def cls_only(tmp_path_factory):
    return _train(tmp_path_factory.mktemp("synthetic_cls_only"), **CLS_ONLY)


def test_classification_loss_drops(trained):
    runner, result, _ = trained
    seen = len(runner.seen_pairs)
    assert seen == 320
    assert result.history[-1]["cls"] < math.log(seen) - 1.0
    assert result.history[-1]["loss"] < result.history[0]["loss"]


def test_validation_auc_beats_the_untrained_baseline(trained):
    _, result, untrained_auc = trained
    assert untrained_auc is not None
    assert result.best_val_auc > untrained_auc
    assert result.best_val_auc >= 5 * untrained_auc


def test_prototypes_recover_attributes(trained):
    runner, _, _ = trained
    protos = prototype_features(runner.model, runner.store, runner.split, np.random.default_rng(0))
    acc = prototype_accuracy(runner.model, runner.store, runner.split, protos, "val", ks=(1,))
    assert acc["attr@1"] > 2 / 20


def test_attention_lands_on_attribute_blocks(trained):
    runner, _, _ = trained
    masks = load_masks(runner.config.data.masks)
    value = mean_attribute_mass(runner.model, runner.store, runner.split, masks, "val")
    uniform = runner.config.synthetic.blocks_per_factor / 49
    assert np.isfinite(value) and value <= 1.0
    assert value >= 1.5 * uniform


def test_auxiliary_losses_do_not_hurt(trained, cls_only):
    full_runner, full_result, _ = trained
    base_runner, base_result, _ = cls_only
    assert full_result.best_val_auc >= base_result.best_val_auc

    full, base = _val_report(full_runner), _val_report(base_runner)
    assert full.attr >= base.attr - 0.01
    assert full.obj >= base.obj - 0.01
