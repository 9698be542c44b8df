#!/usr/bin/env python3
"""Integration script: cross-modal top-K retrieval on a captioned dataset.

Expects dataset_root/{images/, captions.csv, splits.json}. Runs the shuffled
in-batch protocol (batch 50, 5 runs by default) and, when two backend configs
are given, the exact McNemar test between their per-item correctness vectors.
"""
import json

import click
import numpy as np

from promptseg.backends import create_backend
from promptseg.data import load_captions_csv
from promptseg.metrics import mcnemar_test
from promptseg.retrieval import RetrievalProtocol, result_to_csv_rows, run_protocol


def load_backend(path):
    with open(path) as f:
        return create_backend(json.load(f))


@click.command()
@click.option("--dataset-root", required=True, type=click.Path(exists=True))
@click.option("--split", default="val", show_default=True)
@click.option("--backend-config", "backend_configs", multiple=True, required=True,
              type=click.Path(exists=True), help="JSON backend config; pass twice to compare")
@click.option("--batch-size", default=50, show_default=True)
@click.option("--runs", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
def main(dataset_root, split, backend_configs, batch_size, runs, seed):
    corpus = load_captions_csv(dataset_root, split=split)
    protocol = RetrievalProtocol(batch_size=batch_size, runs=runs, seed=seed)
    results = []
    for path in backend_configs:
        backend = load_backend(path)
        result = run_protocol(backend, corpus, protocol)
        results.append(result)
        for row in result_to_csv_rows(result, model=backend.name):
            click.echo(json.dumps(row))
    if len(results) == 2:
        for direction in results[0].correctness:
            for k in results[0].correctness[direction]:
                # concatenate per-run correctness so every evaluation counts once
                a = np.concatenate(results[0].correctness[direction][k])
                b = np.concatenate(results[1].correctness[direction][k])
                p = mcnemar_test(a, b)
                click.echo(f"mcnemar {direction} top-{k}: p = {p:.4g}")


if __name__ == "__main__":
    main()
