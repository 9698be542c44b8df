#!/usr/bin/env python3
"""Desk-scale fine-tuning demo: build an 8-concept synthetic corpus, tune the
toy dual encoder with the hard-negative loss, and print the training log."""
import json
import tempfile
from pathlib import Path

import click
import numpy as np
from PIL import Image

from promptseg.backends import ToyTrainableDualEncoder
from promptseg.data import CaptionedImageSet
from promptseg.finetune import TrainConfig, finetune
from promptseg.losses import LossConfig


def build_corpus(root: Path, vocab: list[str]) -> CaptionedImageSet:
    records = []
    for i, concept in enumerate(vocab):
        arr = np.zeros((64, 64, 3), dtype=np.uint8)
        r, c = divmod(i, 4)
        arr[r * 32 : r * 32 + 32, c * 16 : c * 16 + 16] = 255
        path = root / f"{concept}.png"
        Image.fromarray(arr).save(path)
        records.append((str(path), concept))
    return CaptionedImageSet(records=records, split="train")


@click.command()
@click.option("--loss", "loss_kind", default="dhn_nce",
              type=click.Choice(["dhn_nce", "infonce", "dcl", "hn_nce"]))
@click.option("--lr", default=5e-3, show_default=True)
@click.option("--epochs", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--checkpoint-dir", default=None, type=click.Path())
def main(loss_kind, lr, epochs, seed, checkpoint_dir):
    vocab = [f"organ{i}" for i in range(8)]
    with tempfile.TemporaryDirectory() as tmp:
        corpus = build_corpus(Path(tmp), vocab)
        data = {"train": corpus, "val": corpus}
        backend = ToyTrainableDualEncoder(vocab, seed=seed)
        cfg = TrainConfig(
            loss_kind=loss_kind,
            loss=LossConfig(temperature=0.6, beta1=0.15, beta2=0.15),
            learning_rate=lr,
            lr_decay=1.0,
            batch_size=8,
            max_epochs=epochs,
            seed=seed,
            checkpoint_dir=checkpoint_dir,
        )
        result = finetune(backend, data, cfg)
    for record in result["log"]:
        click.echo(json.dumps(record))
    click.echo(f"best val top-1: {result['best_val_top1']:.2%} at step {result['best_step']}")


if __name__ == "__main__":
    main()
