"""CBOW word embeddings trained on the corpus.

The centroid vectors of these embeddings link click-absent queries and
documents to their closest click-existing neighbours, so estimation works
by semantic rather than surface-string similarity.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DegenerateTrainingError, ModelFormatError, NotFittedError


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; defined as 0.0 when either norm is 0."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class CbowEmbeddings(BaseEstimator):
    """Continuous bag-of-words embeddings with negative sampling.

    The context mean predicts the target token through sigmoid dot products
    against the target's output vector and `negatives` sampled noise tokens.
    Training is single-threaded and deterministic for a fixed seed.

    Parameters
    ----------
    dim : embedding dimensionality.
    window : context radius (tokens each side of the target).
    negatives : negative samples per target.
    epochs : full passes over the corpus.
    learning_rate : initial SGD step, decayed linearly to near zero.
    min_count : minimum corpus frequency for a token to enter the vocabulary.
    seed : RNG seed.
    """

    def __init__(
        self,
        dim: int = 64,
        window: int = 4,
        negatives: int = 5,
        epochs: int = 5,
        learning_rate: float = 0.025,
        min_count: int = 2,
        seed: int = 0,
    ):
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.min_count = min_count
        self.seed = seed

    def fit(self, sentences: Iterable[Sequence[str]], y=None) -> "CbowEmbeddings":
        """Train on token sequences. Sets vocab_, vectors_, loss_per_epoch_."""
        for name in ("dim", "window", "negatives", "epochs", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

        corpus = [list(s) for s in sentences]
        counts: dict[str, int] = {}
        for sent in corpus:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
        # Deterministic vocabulary order: frequency desc, then token.
        vocab_items = sorted(
            ((t, c) for t, c in counts.items() if c >= self.min_count),
            key=lambda tc: (-tc[1], tc[0]),
        )
        vocab = {tok: i for i, (tok, _) in enumerate(vocab_items)}
        encoded = [[vocab[t] for t in sent if t in vocab] for sent in corpus]
        n_contexts = sum(len(s) for s in encoded if len(s) >= 2)
        if not vocab or n_contexts == 0:
            raise DegenerateTrainingError("no trainable contexts")

        rng = np.random.default_rng(self.seed)
        size = len(vocab)
        vectors = (rng.random((size, self.dim)) - 0.5) / self.dim
        out_vectors = np.zeros((size, self.dim))

        # Unigram^0.75 noise distribution, cumulative for inverse sampling.
        freqs = np.array([c for _, c in vocab_items], dtype=float) ** 0.75
        noise_cdf = np.cumsum(freqs / freqs.sum())

        total_targets = n_contexts * self.epochs
        seen = 0
        losses: list[float] = []
        for _epoch in range(self.epochs):
            epoch_loss = 0.0
            epoch_targets = 0
            for sent in encoded:
                if len(sent) < 2:
                    continue
                for pos, target in enumerate(sent):
                    lo = max(0, pos - self.window)
                    hi = min(len(sent), pos + self.window + 1)
                    context = sent[lo:pos] + sent[pos + 1 : hi]
                    if not context:
                        continue
                    lr = self.learning_rate * max(1.0 - seen / total_targets, 1e-4)
                    seen += 1
                    h = vectors[context].mean(axis=0)
                    negs = np.searchsorted(noise_cdf, rng.random(self.negatives))
                    negs = negs[negs != target]
                    samples = np.concatenate(([target], negs))
                    labels = np.zeros(len(samples))
                    labels[0] = 1.0
                    scores = out_vectors[samples] @ h
                    preds = 1.0 / (1.0 + np.exp(-scores))
                    # Negative-sampling objective, for the per-epoch trace.
                    eps = 1e-10
                    epoch_loss += -(
                        math.log(preds[0] + eps)
                        + float(np.log(1.0 - preds[1:] + eps).sum())
                    )
                    epoch_targets += 1
                    g = (labels - preds) * lr
                    h_err = g @ out_vectors[samples]
                    # add.at accumulates correctly when an index repeats.
                    np.add.at(out_vectors, samples, g[:, None] * h)
                    np.add.at(vectors, context, h_err / len(context))
            losses.append(epoch_loss / max(epoch_targets, 1))

        self.vocab_ = vocab
        self.vectors_ = vectors
        self.loss_per_epoch_ = losses
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "vectors_"):
            raise NotFittedError("CbowEmbeddings is not fitted")

    def __contains__(self, token: str) -> bool:
        self._check_fitted()
        return token in self.vocab_

    def vector(self, token: str) -> np.ndarray:
        self._check_fitted()
        return self.vectors_[self.vocab_[token]]

    def centroid(self, tokens: Sequence[str]) -> np.ndarray:
        """Mean of the embedding rows of in-vocabulary tokens.

        Returns the all-zeros vector when nothing is in vocabulary. Rows are
        accumulated in sorted index order, making the result invariant to
        token permutation, bit for bit.
        """
        self._check_fitted()
        idxs = sorted(self.vocab_[t] for t in tokens if t in self.vocab_)
        if not idxs:
            return np.zeros(self.dim)
        return self.vectors_[idxs].mean(axis=0)

    def transform(self, token_sequences: Iterable[Sequence[str]]) -> np.ndarray:
        """Centroid vector per token sequence, stacked into a matrix."""
        return np.vstack([self.centroid(seq) for seq in token_sequences])

    def save(self, path: str | Path) -> None:
        """Write the classic text vector format: '<V> <dim>' then one
        'token v1 ... vdim' line per vocabulary entry, in index order."""
        self._check_fitted()
        by_index = sorted(self.vocab_.items(), key=lambda kv: kv[1])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(by_index)} {self.dim}\n")
            for token, idx in by_index:
                vals = " ".join(repr(float(x)) for x in self.vectors_[idx])
                fh.write(f"{token} {vals}\n")

    @classmethod
    def load(cls, path: str | Path) -> "CbowEmbeddings":
        """Read the text vector format back into a fitted instance."""
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ModelFormatError(f"{path}: bad embedding header")
            size, dim = int(header[0]), int(header[1])
            vocab: dict[str, int] = {}
            vectors = np.zeros((size, dim))
            for i in range(size):
                parts = fh.readline().rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    raise ModelFormatError(f"{path}: bad vector line {i + 2}")
                vocab[parts[0]] = i
                vectors[i] = [float(x) for x in parts[1:]]
        model = cls(dim=dim)
        model.vocab_ = vocab
        model.vectors_ = vectors
        model.loss_per_epoch_ = []
        return model
