"""Convolutional siamese text scorer trained on click preference.

Word-embedding lookup (no character-trigram layer: the bilingual corpus has
a small vocabulary, so tokens map straight to learned vectors), a tanh
convolution over token windows, elementwise max-pooling, and a tanh
projection produce one semantic vector per text. A query/document pair is
scored by the cosine of the two vectors (feature F7). Training maximizes
the softmax probability of each clicked document against sampled
non-clicked ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import ClickPair
from .errors import DegenerateTrainingError, ModelFormatError, NotFittedError

DEEP_FORMAT = "clickrank-deepmodel"
DEEP_VERSION = 1

_PAD = 0
_UNK = 1

# Four shipped size presets (conv maps, semantic dim). Artifact defaults,
# not tuned values; pick by name on the CLI.
PRESETS: dict[str, dict[str, int]] = {
    "deep1": {"d_c": 128, "d_s": 64},
    "deep2": {"d_c": 64, "d_s": 32},
    "deep3": {"d_c": 256, "d_s": 128},
    "deep4": {"d_c": 128, "d_s": 32},
}


@dataclass
class TrainPair:
    """A query, its clicked document, and sampled non-clicked documents."""

    query: tuple[str, ...]
    positive: tuple[str, ...]
    negatives: list[tuple[str, ...]] = field(default_factory=list)


def build_train_pairs(
    pairs: Iterable[ClickPair],
    doc_tokens: Mapping[str, Sequence[str]],
    negatives: int = 4,
    seed: int = 0,
) -> list[TrainPair]:
    """Turn aggregated click pairs into training examples.

    One example per clicked pair. Negatives come from the same query's
    non-clicked documents first, topped up with uniformly sampled documents
    when fewer than `negatives` exist. Deterministic for a fixed seed.
    """
    pairs = list(pairs)
    all_docs = sorted(doc_tokens)
    rng = np.random.default_rng(seed)
    nonclicked: dict[str, list[str]] = {}
    for pair in pairs:
        if pair.click_count == 0:
            nonclicked.setdefault(pair.query_text, []).append(pair.doc_id)

    out: list[TrainPair] = []
    for pair in pairs:
        if pair.click_count < 1:
            continue
        pool = [d for d in nonclicked.get(pair.query_text, []) if d != pair.doc_id]
        if len(pool) > negatives:
            picked = [pool[i] for i in rng.permutation(len(pool))[:negatives]]
        else:
            picked = list(pool)
        tries = 0
        while len(picked) < negatives and len(all_docs) > 1 and tries < 50 * negatives:
            cand = all_docs[int(rng.integers(len(all_docs)))]
            tries += 1
            if cand != pair.doc_id and cand not in picked:
                picked.append(cand)
        out.append(
            TrainPair(
                query=tuple(pair.query_tokens),
                positive=tuple(doc_tokens.get(pair.doc_id, pair.doc_tokens)),
                negatives=[tuple(doc_tokens[d]) for d in picked],
            )
        )
    return out


class SemanticMatcher(BaseEstimator):
    """Siamese embed/convolve/max-pool/project scorer.

    Parameters
    ----------
    d_w : word embedding width.
    window : convolution window in tokens; must be odd.
    d_c : convolution feature maps.
    d_s : semantic vector dimension.
    gamma : softmax smoothing applied to cosine scores during training.
    negatives : non-clicked documents per clicked one when fit() is given
        ClickPairs to convert (ignored for ready-made TrainPairs).
    learning_rate, epochs, batch_size, seed : plain SGD controls.
    init_vectors : optional embedding table seeding the word table where
        vocabularies overlap (by default the table starts random, keeping
        this model independent of the embeddings module).
    """

    def __init__(
        self,
        d_w: int = 64,
        window: int = 3,
        d_c: int = 128,
        d_s: int = 64,
        gamma: float = 10.0,
        negatives: int = 4,
        learning_rate: float = 0.5,
        epochs: int = 5,
        batch_size: int = 16,
        seed: int = 0,
        init_vectors=None,
    ):
        self.d_w = d_w
        self.window = window
        self.d_c = d_c
        self.d_s = d_s
        self.gamma = gamma
        self.negatives = negatives
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.init_vectors = init_vectors

    # -- forward ---------------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("SemanticMatcher is not fitted")

    def _ids(self, tokens: Sequence[str]) -> list[int]:
        ids = [self.vocab_.get(t, _UNK) for t in tokens]
        if len(ids) < self.window:
            pad = self.window - len(ids)
            left = pad // 2
            ids = [_PAD] * left + ids + [_PAD] * (pad - left)
        return ids

    def _forward(self, tokens: Sequence[str]):
        """Semantic vector plus the caches backprop needs."""
        p = self.params_
        ids = self._ids(tokens)
        emb = p["emb"][ids]                                   # (L, d_w)
        n_pos = len(ids) - self.window + 1
        windows = np.concatenate(
            [emb[j : j + n_pos] for j in range(self.window)], axis=1
        )                                                     # (P, window*d_w)
        pre_conv = windows @ p["Wc"].T + p["bc"]
        conv = np.tanh(pre_conv)                              # (P, d_c)
        argmax = conv.argmax(axis=0)
        pooled = conv[argmax, np.arange(self.d_c)]            # (d_c,)
        out = np.tanh(p["Ws"] @ pooled + p["bs"])             # (d_s,)
        return out, (ids, windows, conv, argmax, pooled)

    def forward(self, tokens: Sequence[str]) -> np.ndarray:
        """Map a token sequence to its semantic vector (components in (-1, 1))."""
        self._check_fitted()
        return self._forward(tokens)[0]

    def score(self, query: Sequence[str], doc: Sequence[str]) -> float:
        """Cosine of the two semantic vectors (feature F7); 0.0 on zero norm."""
        self._check_fitted()
        yq = self.forward(query)
        yd = self.forward(doc)
        nq = float(np.linalg.norm(yq))
        nd = float(np.linalg.norm(yd))
        if nq == 0.0 or nd == 0.0:
            return 0.0
        return float(yq @ yd / (nq * nd))

    def pair_probability(self, pair: TrainPair) -> float:
        """Softmax probability of the clicked document under the model."""
        self._check_fitted()
        cos = self._pair_cosines(pair)[0]
        logits = self.gamma * cos
        logits -= logits.max()
        e = np.exp(logits)
        return float(e[0] / e.sum())

    def _pair_cosines(self, pair: TrainPair):
        yq, cq = self._forward(pair.query)
        docs = [self._forward(pair.positive)] + [self._forward(n) for n in pair.negatives]
        nq = np.linalg.norm(yq)
        cos = np.empty(len(docs))
        for k, (yd, _) in enumerate(docs):
            nd = np.linalg.norm(yd)
            cos[k] = yq @ yd / (nq * nd) if nq > 0 and nd > 0 else 0.0
        return cos, yq, cq, docs

    # -- backward --------------------------------------------------------

    def _backward_text(self, dy, cache, grads) -> None:
        p = self.params_
        ids, windows, conv, argmax, pooled = cache
        dz = dy * (1.0 - np.tanh(p["Ws"] @ pooled + p["bs"]) ** 2)
        grads["Ws"] += np.outer(dz, pooled)
        grads["bs"] += dz
        dpool = p["Ws"].T @ dz
        dconv = np.zeros_like(conv)
        dconv[argmax, np.arange(self.d_c)] = dpool
        dpre = dconv * (1.0 - conv**2)
        grads["Wc"] += dpre.T @ windows
        grads["bc"] += dpre.sum(axis=0)
        dwin = dpre @ p["Wc"]                                 # (P, window*d_w)
        demb_rows = np.zeros((len(ids), self.d_w))
        n_pos = dwin.shape[0]
        for j in range(self.window):
            demb_rows[j : j + n_pos] += dwin[:, j * self.d_w : (j + 1) * self.d_w]
        np.add.at(grads["emb"], ids, demb_rows)

    def loss_and_gradients(self, pairs: Sequence[TrainPair]):
        """Mean softmax loss over pairs and gradients for every parameter.

        Exposed so the analytic gradients can be checked against finite
        differences without touching the training loop.
        """
        self._check_fitted()
        grads = {k: np.zeros_like(v) for k, v in self.params_.items()}
        total = 0.0
        for pair in pairs:
            cos, yq, cq, docs = self._pair_cosines(pair)
            logits = self.gamma * cos
            m = logits.max()
            logz = m + np.log(np.exp(logits - m).sum())
            total += logz - logits[0]
            probs = np.exp(logits - logz)
            dcos = self.gamma * probs
            dcos[0] -= self.gamma
            nq = float(np.linalg.norm(yq))
            dyq = np.zeros_like(yq)
            for k, (yd, cd) in enumerate(docs):
                nd = float(np.linalg.norm(yd))
                if nq == 0.0 or nd == 0.0:
                    continue
                c = cos[k]
                dyq += dcos[k] * (yd / (nq * nd) - c * yq / (nq * nq))
                dyd = dcos[k] * (yq / (nq * nd) - c * yd / (nd * nd))
                self._backward_text(dyd / len(pairs), cd, grads)
            self._backward_text(dyq / len(pairs), cq, grads)
        return total / len(pairs), grads

    # -- training --------------------------------------------------------

    def fit(self, pairs: Sequence[TrainPair] | Sequence[ClickPair], doc_tokens=None) -> "SemanticMatcher":
        """Train from TrainPairs, or from ClickPairs plus a doc-token map.

        Sets params_, vocab_, loss_per_epoch_. Deterministic given seed.
        """
        if self.window % 2 == 0 or self.window < 1:
            raise ValueError("window must be odd and >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        pairs = list(pairs)
        if not pairs:
            raise DegenerateTrainingError("no training pairs")
        if pairs and isinstance(pairs[0], ClickPair):
            if doc_tokens is None:
                doc_tokens = {p.doc_id: p.doc_tokens for p in pairs}
            pairs = build_train_pairs(
                pairs, doc_tokens, negatives=self.negatives, seed=self.seed
            )
            if not pairs:
                raise DegenerateTrainingError("no clicked pairs to train on")

        counts: dict[str, int] = {}
        for pair in pairs:
            for text in (pair.query, pair.positive, *pair.negatives):
                for tok in text:
                    counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts.items(), key=lambda tc: (-tc[1], tc[0]))
        self.vocab_ = {tok: i + 2 for i, (tok, _) in enumerate(ordered)}

        rng = np.random.default_rng(self.seed)
        n_rows = len(self.vocab_) + 2
        emb = (rng.random((n_rows, self.d_w)) - 0.5) / self.d_w
        if self.init_vectors is not None:
            for tok, row in self.vocab_.items():
                if tok in self.init_vectors:
                    vec = np.asarray(self.init_vectors.vector(tok), dtype=float)
                    if vec.shape != (self.d_w,):
                        raise ValueError(
                            f"init vectors have dim {vec.shape}, need ({self.d_w},)"
                        )
                    emb[row] = vec
        self.params_ = {
            "emb": emb,
            "Wc": rng.normal(0.0, 1.0 / np.sqrt(self.window * self.d_w), (self.d_c, self.window * self.d_w)),
            "bc": np.zeros(self.d_c),
            "Ws": rng.normal(0.0, 1.0 / np.sqrt(self.d_c), (self.d_s, self.d_c)),
            "bs": np.zeros(self.d_s),
        }

        self.loss_per_epoch_ = []
        for _epoch in range(self.epochs):
            order = rng.permutation(len(pairs))
            epoch_loss = 0.0
            for start in range(0, len(order), self.batch_size):
                batch = [pairs[i] for i in order[start : start + self.batch_size]]
                loss, grads = self.loss_and_gradients(batch)
                epoch_loss += loss * len(batch)
                for name, grad in grads.items():
                    self.params_[name] -= self.learning_rate * grad
            self.loss_per_epoch_.append(epoch_loss / len(pairs))
        return self

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Versioned binary blob (npz) with a plain-text JSON header inside."""
        self._check_fitted()
        header = {
            "format": DEEP_FORMAT,
            "version": DEEP_VERSION,
            "d_w": self.d_w,
            "window": self.window,
            "d_c": self.d_c,
            "d_s": self.d_s,
            "gamma": self.gamma,
            "vocab": sorted(self.vocab_, key=self.vocab_.get),
        }
        np.savez(path, header=json.dumps(header, ensure_ascii=False), **self.params_)

    @classmethod
    def load(cls, path: str | Path) -> "SemanticMatcher":
        with np.load(path, allow_pickle=False) as blob:
            header = json.loads(str(blob["header"]))
            if header.get("format") != DEEP_FORMAT or header.get("version") != DEEP_VERSION:
                raise ModelFormatError(f"{path}: expected {DEEP_FORMAT} v{DEEP_VERSION}")
            params = {k: blob[k] for k in ("emb", "Wc", "bc", "Ws", "bs")}
        model = cls(
            d_w=header["d_w"],
            window=header["window"],
            d_c=header["d_c"],
            d_s=header["d_s"],
            gamma=header["gamma"],
        )
        expected = {
            "emb": (len(header["vocab"]) + 2, header["d_w"]),
            "Wc": (header["d_c"], header["window"] * header["d_w"]),
            "bc": (header["d_c"],),
            "Ws": (header["d_s"], header["d_c"]),
            "bs": (header["d_s"],),
        }
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ModelFormatError(
                    f"{path}: parameter {name} has shape {params[name].shape}, "
                    f"signature requires {shape}"
                )
        model.vocab_ = {tok: i + 2 for i, tok in enumerate(header["vocab"])}
        model.params_ = params
        model.loss_per_epoch_ = []
        return model
