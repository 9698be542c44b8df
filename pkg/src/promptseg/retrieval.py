"""Cross-modal top-K retrieval benchmark: shuffled in-batch retrieval over
multiple runs with mean/std aggregation and per-item correctness vectors for
McNemar testing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import DualEncoderHandle
from .data import CaptionedImageSet, load_image
from .embedding import IMAGE_TO_TEXT, TEXT_TO_IMAGE, EmbeddingBatch, SimilarityMatrix, similarity_matrix
from .errors import CorpusTooSmall, KTooLarge
from .metrics import mcnemar_test  # noqa: F401  (retrieval significance testing)

DIRECTIONS = (IMAGE_TO_TEXT, TEXT_TO_IMAGE)


@dataclass(frozen=True)
class RetrievalProtocol:
    batch_size: int = 50
    runs: int = 5
    ks: tuple[int, ...] = (1, 2)
    seed: int = 0
    drop_partial_batch: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass
class RetrievalResult:
    """accuracy[direction][k] = (mean, std) in percent over runs;
    correctness[direction][k] = per-run boolean arrays aligned to corpus order."""

    accuracy: dict = field(default_factory=dict)
    correctness: dict = field(default_factory=dict)
    evaluated_examples: int = 0


def topk_correct(sim: SimilarityMatrix, k: int) -> np.ndarray:
    """Boolean vector: is the diagonal entry among the k largest of its row?

    Ties are broken by candidate index ascending.
    """
    s = sim.values
    b = s.shape[0]
    if k >= b:
        raise KTooLarge(f"k={k} must be < batch size {b}")
    # lexsort: descending value, then ascending candidate index on ties
    order = np.lexsort((np.tile(np.arange(b), (b, 1)), -s), axis=1)
    return (order[:, :k] == np.arange(b)[:, None]).any(axis=1)


def topk_retrieval_accuracy(sim: SimilarityMatrix, k: int) -> float:
    """Fraction of anchors whose positive is retrieved within the top k."""
    return float(topk_correct(sim, k).mean())


def encode_corpus(backend: DualEncoderHandle, corpus: CaptionedImageSet) -> EmbeddingBatch:
    imgs = np.stack(
        [backend.encode_image(load_image(p, backend.image_input_size)) for p, _ in corpus.records]
    )
    txts = np.stack([backend.encode_text(c) for _, c in corpus.records])
    return EmbeddingBatch(imgs, txts)


def run_protocol(
    backend: DualEncoderHandle,
    corpus: CaptionedImageSet,
    protocol: RetrievalProtocol = RetrievalProtocol(),
    embeddings: EmbeddingBatch | None = None,
) -> RetrievalResult:
    """Shuffle, batch, and score the corpus for each run; aggregate mean/std.

    Pass precomputed `embeddings` to skip encoding (rows aligned to records).
    """
    n = len(corpus.records)
    if n < protocol.batch_size:
        raise CorpusTooSmall(f"corpus of {n} < batch size {protocol.batch_size}")
    emb = embeddings or encode_corpus(backend, corpus)

    per_run_acc = {d: {k: [] for k in protocol.ks} for d in DIRECTIONS}
    correctness = {d: {k: [] for k in protocol.ks} for d in DIRECTIONS}
    evaluated = 0
    for run in range(protocol.runs):
        rng = np.random.default_rng(protocol.seed + run)
        order = rng.permutation(n)
        n_full = (n // protocol.batch_size) * protocol.batch_size
        if protocol.drop_partial_batch:
            order = order[:n_full]
        run_correct = {d: {k: np.zeros(n, dtype=bool) for k in protocol.ks} for d in DIRECTIONS}
        run_mask = np.zeros(n, dtype=bool)
        for start in range(0, len(order), protocol.batch_size):
            idx = order[start : start + protocol.batch_size]
            if len(idx) < 2:
                continue
            batch = EmbeddingBatch(emb.image_embeddings[idx], emb.text_embeddings[idx])
            evaluated += len(idx)
            run_mask[idx] = True
            for d in DIRECTIONS:
                sim = similarity_matrix(batch, d)
                for k in protocol.ks:
                    run_correct[d][k][idx] = topk_correct(sim, k)
        for d in DIRECTIONS:
            for k in protocol.ks:
                per_run_acc[d][k].append(float(run_correct[d][k][run_mask].mean()))
                correctness[d][k].append(run_correct[d][k])

    result = RetrievalResult(evaluated_examples=evaluated)
    for d in DIRECTIONS:
        result.accuracy[d] = {}
        result.correctness[d] = {}
        for k in protocol.ks:
            accs = np.asarray(per_run_acc[d][k]) * 100.0
            result.accuracy[d][k] = (float(accs.mean()), float(accs.std()))
            result.correctness[d][k] = correctness[d][k]
    return result


def result_to_csv_rows(result: RetrievalResult, model: str) -> list[dict]:
    rows = []
    for d, by_k in result.accuracy.items():
        for k, (mean, std) in by_k.items():
            rows.append({"model": model, "direction": d, "k": k, "mean": mean, "std": std})
    return rows
