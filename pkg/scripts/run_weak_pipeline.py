#!/usr/bin/env python3
"""Integration script: zero-shot pseudo-mask generation followed by residual
U-Net training on those pseudo-masks.

Expects dataset_root/{images/, masks/, splits.json}; ground-truth masks are
used only for validation scoring, never for training.
"""
import json
from pathlib import Path

import click
import numpy as np

from promptseg.backends import create_backend
from promptseg.data import load_image, load_mask, load_segmentation_set, save_mask
from promptseg.errors import EmptySegmentation
from promptseg.maskgen import ZeroShotOptions, create_segmenter, zero_shot_segment
from promptseg.weak import ResUNetSpec, WeakTrainConfig, train_weak_arrays


@click.command()
@click.option("--dataset-root", required=True, type=click.Path(exists=True))
@click.option("--prompt", required=True, help="text prompt naming the target structure")
@click.option("--backend-config", required=True, type=click.Path(exists=True))
@click.option("--segmenter-config", default=None, type=click.Path(exists=True))
@click.option("--pseudo-dir", required=True, type=click.Path(), help="pseudo-masks written here")
@click.option("--checkpoint", default="weak.pt", type=click.Path())
@click.option("--epochs", default=50, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
def main(dataset_root, prompt, backend_config, segmenter_config, pseudo_dir,
         checkpoint, epochs, lr, seed):
    with open(backend_config) as f:
        backend = create_backend(json.load(f))
    seg_cfg = {}
    if segmenter_config:
        with open(segmenter_config) as f:
            seg_cfg = json.load(f)
    segmenter = create_segmenter(seg_cfg)
    size = backend.image_input_size

    train = load_segmentation_set(dataset_root, split="train")
    val = load_segmentation_set(dataset_root, split="val")

    Path(pseudo_dir).mkdir(parents=True, exist_ok=True)
    train_images, pseudo_masks, skipped = [], [], 0
    for image_path, _ in train.records:
        image = load_image(image_path, size)
        try:
            result = zero_shot_segment(backend, segmenter, image, prompt, ZeroShotOptions())
        except EmptySegmentation:
            skipped += 1
            continue
        train_images.append(image)
        pseudo_masks.append(result.mask)
        save_mask(result.mask, Path(pseudo_dir) / (Path(image_path).stem + ".png"))
    click.echo(f"pseudo-masks: {len(pseudo_masks)} generated, {skipped} empty")

    val_images = np.stack([load_image(p, size) for p, _ in val.records])
    val_masks = np.stack([load_mask(m, size) for _, m in val.records if m])
    cfg = WeakTrainConfig(epochs=epochs, learning_rate=lr, seed=seed)
    out = train_weak_arrays(
        ResUNetSpec(), np.stack(train_images), np.stack(pseudo_masks),
        val_images, val_masks, cfg, checkpoint_path=checkpoint,
    )
    click.echo(json.dumps(out["report"], default=float))


if __name__ == "__main__":
    main()
