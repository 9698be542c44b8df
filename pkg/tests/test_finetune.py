import json

import numpy as np
import pytest
import torch
from PIL import Image

from promptseg.backends import SyntheticDualEncoder, ToyTrainableDualEncoder
from promptseg.data import CaptionedImageSet
from promptseg.errors import BackendFrozen, BatchTooSmall
from promptseg.finetune import TrainConfig, finetune, lr_schedule
from promptseg.losses import LossConfig

VOCAB = [f"organ{i}" for i in range(8)]


def write_concept_images(tmp_path):
    """One 64x64 image per concept with a bright block at a distinct
    location, so grayscale pooling separates the concepts."""
    paths = []
    for i, _ in enumerate(VOCAB):
        arr = np.zeros((64, 64, 3), dtype=np.uint8)
        r, c = divmod(i, 4)
        arr[r * 32 : r * 32 + 32, c * 16 : c * 16 + 16] = 255
        path = tmp_path / f"concept_{i}.png"
        Image.fromarray(arr).save(path)
        paths.append(str(path))
    return paths


@pytest.fixture
def toy_data(tmp_path):
    paths = write_concept_images(tmp_path)
    records = list(zip(paths, VOCAB))
    return {
        "train": CaptionedImageSet(records=records, split="train"),
        "val": CaptionedImageSet(records=records, split="val"),
    }


def test_lr_schedule_examples():
    assert lr_schedule(1e-6, 0.5, 0) == pytest.approx(1e-6)
    assert lr_schedule(1e-6, 0.5, 1) == pytest.approx(5e-7)
    assert lr_schedule(1e-6, 0.5, 3) == pytest.approx(1.25e-7)


def test_lr_schedule_decay_one_is_constant():
    for i in range(10):
        assert lr_schedule(3e-4, 1.0, i) == 3e-4


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay=1.5)
    with pytest.raises(ValueError):
        TrainConfig(decay_trigger="whenever")


def test_batch_size_one_rejected(toy_data):
    backend = ToyTrainableDualEncoder(VOCAB)
    with pytest.raises(BatchTooSmall):
        finetune(backend, toy_data, TrainConfig(batch_size=1))


def test_frozen_backend_rejected(toy_data):
    backend = SyntheticDualEncoder(vocabulary=VOCAB)
    with pytest.raises(BackendFrozen):
        finetune(backend, toy_data, TrainConfig())


def test_toy_convergence(toy_data):
    backend = ToyTrainableDualEncoder(VOCAB, seed=0)
    cfg = TrainConfig(
        loss_kind="dhn_nce",
        loss=LossConfig(temperature=0.6, beta1=0.15, beta2=0.15),
        learning_rate=5e-3,
        lr_decay=1.0,
        batch_size=8,
        max_epochs=10,
        seed=0,
    )
    result = finetune(backend, toy_data, cfg)
    assert result["best_val_top1"] >= 0.9


def test_training_loss_decreases(toy_data):
    backend = ToyTrainableDualEncoder(VOCAB, seed=1)
    cfg = TrainConfig(learning_rate=5e-3, lr_decay=1.0, batch_size=8, max_epochs=10, seed=0)
    result = finetune(backend, toy_data, cfg)
    losses = [r["loss"] for r in result["log"] if "loss" in r]
    assert losses[-1] < losses[0]


def test_per_epoch_decay_applied(toy_data):
    backend = ToyTrainableDualEncoder(VOCAB, seed=2)
    cfg = TrainConfig(learning_rate=1e-3, lr_decay=0.5, decay_trigger="epoch",
                      batch_size=8, max_epochs=3, seed=0)
    result = finetune(backend, toy_data, cfg)
    lrs = sorted({r["lr"] for r in result["log"]}, reverse=True)
    assert lrs == [pytest.approx(1e-3), pytest.approx(5e-4), pytest.approx(2.5e-4)]


def test_max_steps_caps_training(toy_data):
    backend = ToyTrainableDualEncoder(VOCAB, seed=3)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=50, max_steps=4, seed=0)
    result = finetune(backend, toy_data, cfg)
    steps = [r["step"] for r in result["log"] if "loss" in r]
    assert max(steps) == 4


def test_checkpoint_roundtrip_restores_metric(toy_data, tmp_path):
    ckdir = tmp_path / "ck"
    cfg = TrainConfig(learning_rate=5e-3, lr_decay=1.0, batch_size=8,
                      max_epochs=5, seed=0, checkpoint_dir=str(ckdir))
    backend = ToyTrainableDualEncoder(VOCAB, seed=0)
    result = finetune(backend, toy_data, cfg)

    fresh = ToyTrainableDualEncoder(VOCAB, seed=99)
    fresh.load_state_dict(torch.load(ckdir / "best.pt", weights_only=True))

    from promptseg.finetune import _load_split, _validation_top1

    images, captions = _load_split(fresh, toy_data["val"])
    metric = _validation_top1(fresh, images, captions, cfg.batch_size, cfg.seed)
    assert metric == pytest.approx(result["best_val_top1"], abs=1e-6)

    manifest = json.loads((ckdir / "manifest.json").read_text())
    assert manifest["metric"]["val_top1"] == result["best_val_top1"]
    log_lines = (ckdir / "train_log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == len(result["log"])


def test_freeze_text_tower_keeps_weights(toy_data):
    backend = ToyTrainableDualEncoder(VOCAB, seed=4)
    before = backend.text_proj.weight.detach().clone()
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=2, seed=0,
                      freeze_text_tower=True)
    finetune(backend, toy_data, cfg)
    torch.testing.assert_close(backend.text_proj.weight, before)
