"""Tokenization, vocabulary building, TF-IDF, and word-vector report features."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from urbanfuse.core import Dataset, FeatureBlock, InvalidInputError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase tokens: maximal alphanumeric runs, Unicode-aware.

    Tokens shorter than two characters and tokens carrying any digit are
    dropped, so bare numbers and measurement shorthand never become terms.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    return [t for t in tokens if len(t) >= 2 and not any(c.isdigit() for c in t)]


@dataclass(frozen=True)
class Vocabulary:
    """Ordered term set with document frequencies.

    Terms are ordered by descending document frequency, ties broken
    lexicographically, which makes the vocabulary independent of corpus
    document order.
    """

    terms: tuple[str, ...]
    document_frequency: dict[str, int]
    corpus_size: int

    def __post_init__(self) -> None:
        for t in self.terms:
            df = self.document_frequency.get(t, 0)
            if not 1 <= df <= self.corpus_size:
                raise InvalidInputError(f"term {t!r} has df {df} outside [1, N]")
        object.__setattr__(
            self, "term_to_index", {t: i for i, t in enumerate(self.terms)}
        )

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.term_to_index


def build_vocabulary(
    corpus: list[list[str]], max_terms: int, min_df: int = 1
) -> Vocabulary:
    """Keep terms with df >= min_df; cap at the top max_terms by df."""
    if not corpus:
        raise InvalidInputError("corpus must be non-empty")
    if max_terms < 1:
        raise InvalidInputError("max_terms must be >= 1")
    df: dict[str, int] = {}
    for tokens in corpus:
        for t in set(tokens):
            df[t] = df.get(t, 0) + 1
    kept = [t for t, c in df.items() if c >= min_df]
    kept.sort(key=lambda t: (-df[t], t))
    kept = kept[:max_terms]
    return Vocabulary(tuple(kept), {t: df[t] for t in kept}, len(corpus))


@dataclass(frozen=True)
class TfidfModel:
    """Smoothed TF-IDF: idf(t) = ln((1+N) / (1+df(t))) + 1, always > 0."""

    vocabulary: Vocabulary
    idf: np.ndarray
    normalize: bool = True

    model_type = "tfidf"

    def to_params(self) -> dict:
        return {
            "terms": list(self.vocabulary.terms),
            "document_frequency": dict(self.vocabulary.document_frequency),
            "corpus_size": self.vocabulary.corpus_size,
            "idf": [float(v) for v in self.idf],
            "normalize": self.normalize,
        }

    @classmethod
    def from_params(cls, params: dict) -> "TfidfModel":
        vocab = Vocabulary(
            tuple(params["terms"]),
            {k: int(v) for k, v in params["document_frequency"].items()},
            int(params["corpus_size"]),
        )
        return cls(vocab, np.asarray(params["idf"], dtype=np.float64), bool(params["normalize"]))


def tfidf_fit(
    corpus: list[list[str]], vocabulary: Vocabulary, normalize: bool = True
) -> TfidfModel:
    """Fit idf over the given corpus for the vocabulary's terms."""
    if not corpus:
        raise InvalidInputError("corpus must be non-empty")
    n = len(corpus)
    df = dict.fromkeys(vocabulary.terms, 0)
    for tokens in corpus:
        for t in set(tokens):
            if t in df:
                df[t] += 1
    idf = np.array(
        [np.log((1.0 + n) / (1.0 + df[t])) + 1.0 for t in vocabulary.terms],
        dtype=np.float64,
    )
    return TfidfModel(vocabulary, idf, normalize)


def tfidf_transform(model: TfidfModel, text: str) -> np.ndarray:
    """One dense row over the vocabulary; OOV tokens are ignored.

    With normalization on, nonzero rows are scaled to unit L2 norm.
    """
    row = np.zeros(len(model.vocabulary))
    index = model.vocabulary.term_to_index
    for t in tokenize(text):
        i = index.get(t)
        if i is not None:
            row[i] += 1.0
    row *= model.idf
    if model.normalize:
        norm = np.linalg.norm(row)
        if norm > 0.0:
            row /= norm
    return row


def tfidf_term_weights(model: TfidfModel, text: str) -> dict[str, float]:
    """Nonzero TF-IDF entries of one document, keyed by term."""
    row = tfidf_transform(model, text)
    terms = model.vocabulary.terms
    return {terms[i]: float(row[i]) for i in np.nonzero(row)[0]}


@dataclass(frozen=True)
class WordVectors:
    vocabulary: Vocabulary
    dims: int
    matrix: np.ndarray  # one row per vocabulary term

    model_type = "wordvec"

    def __post_init__(self) -> None:
        if self.matrix.shape != (len(self.vocabulary), self.dims):
            raise InvalidInputError("word vector matrix shape mismatch")
        if self.matrix.size and not np.isfinite(self.matrix).all():
            raise InvalidInputError("word vectors must be finite")

    def vector(self, term: str) -> np.ndarray:
        return self.matrix[self.vocabulary.term_to_index[term]]

    def to_params(self) -> dict:
        return {
            "terms": list(self.vocabulary.terms),
            "document_frequency": dict(self.vocabulary.document_frequency),
            "corpus_size": self.vocabulary.corpus_size,
            "dims": self.dims,
            "matrix": [[float(v) for v in row] for row in self.matrix],
        }

    @classmethod
    def from_params(cls, params: dict) -> "WordVectors":
        vocab = Vocabulary(
            tuple(params["terms"]),
            {k: int(v) for k, v in params["document_frequency"].items()},
            int(params["corpus_size"]),
        )
        return cls(vocab, int(params["dims"]), np.asarray(params["matrix"], dtype=np.float64))


def train_word_vectors(
    corpus: list[list[str]],
    dims: int = 256,
    window: int = 10,
    negatives: int = 5,
    epochs: int = 5,
    seed: int = 0,
    learning_rate: float = 0.025,
) -> WordVectors:
    """Skip-gram word vectors, treating each report's token list as a sequence.

    Shares the negative-sampling trainer with the node embedder; training
    is single-threaded and deterministic for a fixed seed.
    """
    from urbanfuse.embedding import train_skipgram

    if not corpus:
        raise InvalidInputError("corpus must be non-empty")
    if dims < 1:
        raise InvalidInputError("dims must be >= 1")
    if not any(corpus):
        raise InvalidInputError("empty vocabulary: no usable tokens in corpus")
    vocab = build_vocabulary(corpus, max_terms=2**31 - 1, min_df=1)
    embeddings = train_skipgram(
        corpus,
        dims=dims,
        window=window,
        negatives=negatives,
        epochs=epochs,
        learning_rate=learning_rate,
        seed=seed,
    )
    matrix = np.stack([embeddings.vector(t) for t in vocab.terms])
    return WordVectors(vocab, dims, matrix)


TextModel = Union[TfidfModel, WordVectors]


def report_text_block(dataset: Dataset, model: TextModel) -> FeatureBlock:
    """Per-report text features: TF-IDF rows, or the mean of in-vocabulary
    token vectors (zero vector when no token is known)."""
    if isinstance(model, TfidfModel):
        matrix = np.stack([tfidf_transform(model, r.text) for r in dataset.reports])
        return FeatureBlock(
            "text", "raw", dataset.ids, matrix, list(model.vocabulary.terms)
        )
    if isinstance(model, WordVectors):
        matrix = np.zeros((len(dataset), model.dims))
        for i, r in enumerate(dataset.reports):
            vecs = [model.vector(t) for t in tokenize(r.text) if t in model.vocabulary]
            if vecs:
                matrix[i] = np.mean(vecs, axis=0)
        names = [f"wv_{j}" for j in range(model.dims)]
        return FeatureBlock("text", "raw", dataset.ids, matrix, names)
    raise InvalidInputError(f"unsupported text model {type(model).__name__}")
