"""Text pipeline for retrieval: segmentation, tokenization, embedding,
cosine similarity, and threshold filtering, plus the retrieve() entry point
the agent workflow calls.

The default embedder is deterministic signed feature hashing so every score
in the system is reproducible across runs and platforms; real encoder models
plug in through the provider interface.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import InvalidArgumentError, ProviderError, UndefinedSimilarityError

DEFAULT_DIMENSION = 256

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_PARAGRAPH_RE = re.compile(r"\n\s*\n")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    """Case-fold and split on non-alphanumerics, dropping empty tokens.

    Deliberately simple so tests can recompute token sets by hand; subword
    tokenizers can be swapped in at the embedding-provider boundary.
    """
    return _TOKEN_RE.findall(text.casefold())


@dataclass(frozen=True)
class Segment:
    doc_id: str
    index: int
    text: str
    token_count: int


def segment(text: str, max_tokens: int, doc_id: str = "") -> list[Segment]:
    """Split text into segments of at most max_tokens tokens.

    Paragraphs stay whole when they fit; oversized paragraphs split at
    sentence boundaries; a lone oversized sentence splits at token
    boundaries. Concatenating the segments reproduces the text modulo
    boundary whitespace.
    """
    if max_tokens < 16:
        raise InvalidArgumentError("max_tokens must be >= 16")
    pieces: list[str] = []
    for paragraph in _PARAGRAPH_RE.split(text):
        paragraph = paragraph.strip()
        if not paragraph:
            continue
        if len(tokenize(paragraph)) <= max_tokens:
            pieces.append(paragraph)
            continue
        for sentence_pack in _pack_sentences(paragraph, max_tokens):
            pieces.append(sentence_pack)
    return [Segment(doc_id=doc_id, index=i, text=p, token_count=len(tokenize(p)))
            for i, p in enumerate(pieces)]


def _pack_sentences(paragraph: str, max_tokens: int) -> list[str]:
    packs: list[str] = []
    current: list[str] = []
    current_tokens = 0
    for sentence in _SENTENCE_RE.split(paragraph):
        n = len(tokenize(sentence))
        if n > max_tokens:
            if current:
                packs.append(" ".join(current))
                current, current_tokens = [], 0
            packs.extend(_pack_words(sentence, max_tokens))
            continue
        if current and current_tokens + n > max_tokens:
            packs.append(" ".join(current))
            current, current_tokens = [], 0
        current.append(sentence)
        current_tokens += n
    if current:
        packs.append(" ".join(current))
    return packs


def _pack_words(sentence: str, max_tokens: int) -> list[str]:
    packs: list[str] = []
    current: list[str] = []
    current_tokens = 0
    for word in sentence.split():
        n = len(tokenize(word))
        if n > max_tokens:  # pathological glued word: split it in half
            if current:
                packs.append(" ".join(current))
                current, current_tokens = [], 0
            mid = len(word) // 2
            packs.extend(_pack_words(f"{word[:mid]} {word[mid:]}", max_tokens))
            continue
        if current and current_tokens + n > max_tokens:
            packs.append(" ".join(current))
            current, current_tokens = [], 0
        current.append(word)
        current_tokens += n
    if current:
        packs.append(" ".join(current))
    return packs


@dataclass(frozen=True)
class Embedding:
    """Fixed-dimension dense vector; normalized unless it is the zero vector."""

    values: tuple[float, ...]
    normalized: bool

    @property
    def is_zero(self) -> bool:
        return not self.normalized

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class RelevanceThresholds:
    """tau gates cosine relevance; delta gates step uncertainty."""

    tau: float = 0.30
    delta: float = 0.50

    def __post_init__(self):
        if not (-1.0 <= self.tau <= 1.0):
            raise InvalidArgumentError(f"tau out of [-1, 1]: {self.tau}")
        if not (0.0 <= self.delta <= 1.0):
            raise InvalidArgumentError(f"delta out of [0, 1]: {self.delta}")


class EmbeddingProvider(Protocol):
    dimension: int

    def embed_tokens(self, tokens: Sequence[str]) -> Sequence[float]:
        """Map a token list to a raw (unnormalized) fixed-dimension vector."""


class HashingEmbedder:
    """Signed feature hashing with term-frequency weights.

    Hash choice is keyed on the token bytes only (blake2b), so vectors are
    identical on every platform and run.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 2:
            raise InvalidArgumentError("dimension must be >= 2")
        self.dimension = dimension

    def embed_tokens(self, tokens: Sequence[str]) -> list[float]:
        values = [0.0] * self.dimension
        for token in tokens:
            idx, sign = self._slot(token)
            values[idx] += sign
        if tokens and not any(values):
            # Opposite-sign collisions cancelled everything; pin one slot so
            # "zero vector iff no tokens" stays exact.
            idx, sign = self._slot("\x1f".join(sorted(tokens)))
            values[idx] = sign
        return values

    def _slot(self, token: str) -> tuple[int, int]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
        idx = int.from_bytes(digest[:8], "big") % self.dimension
        sign = 1 if digest[8] & 1 else -1
        return idx, sign


class RemoteEmbedder:
    """HTTP provider: POST {"tokens": [...]} -> {"values": [...]}."""

    def __init__(self, url: str, dimension: int, timeout: float = 10.0, retries: int = 2):
        self.url = url
        self.dimension = dimension
        self.timeout = timeout
        self.retries = retries

    def embed_tokens(self, tokens: Sequence[str]) -> list[float]:
        import httpx

        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                reply = httpx.post(self.url, json={"tokens": list(tokens)}, timeout=self.timeout)
                reply.raise_for_status()
                values = reply.json()["values"]
                if len(values) != self.dimension:
                    raise ProviderError(
                        f"provider returned {len(values)} dims, expected {self.dimension}")
                return [float(v) for v in values]
            except ProviderError:
                raise
            except Exception as exc:  # noqa: BLE001 - network errors are retryable
                last = exc
        raise ProviderError(f"embedding provider failed after {self.retries + 1} attempts: {last}")


_default_embedder = HashingEmbedder()


def embed(tokens: Sequence[str], provider: EmbeddingProvider | None = None) -> Embedding:
    """Embed a token list; the zero vector (flagged) iff the list is empty."""
    provider = provider or _default_embedder
    raw = list(provider.embed_tokens(tokens))
    norm = math.sqrt(math.fsum(v * v for v in raw))
    if norm == 0.0:
        return Embedding(values=tuple(raw), normalized=False)
    return Embedding(values=tuple(v / norm for v in raw), normalized=True)


def embed_counts(term_counts: Mapping[str, int],
                 provider: EmbeddingProvider | None = None) -> Embedding:
    """Project a token-frequency vector through the same hashing as embed().

    This is how graph token vectors enter the shared similarity space.
    """
    tokens: list[str] = []
    for term in sorted(term_counts):
        tokens.extend([term] * term_counts[term])
    return embed(tokens, provider)


def cosine(q: Embedding, d: Embedding) -> float:
    """Cosine similarity q.d / (|q||d|); undefined for zero vectors."""
    if q.is_zero or d.is_zero:
        raise UndefinedSimilarityError("cosine of the zero vector is undefined")
    if q.dimension != d.dimension:
        raise InvalidArgumentError(f"dimension mismatch: {q.dimension} vs {d.dimension}")
    dot = math.fsum(a * b for a, b in zip(q.values, d.values))
    nq = math.sqrt(math.fsum(a * a for a in q.values))
    nd = math.sqrt(math.fsum(b * b for b in d.values))
    return max(-1.0, min(1.0, dot / (nq * nd)))


def filter_relevant(query: Embedding, docs: Iterable[tuple[str, Embedding]],
                    tau: float) -> list[tuple[str, float]]:
    """Keep docs with cosine >= tau (boundary inclusive); drop zero vectors.

    Ordered by score descending, id ascending on ties.
    """
    if not (-1.0 <= tau <= 1.0):
        raise InvalidArgumentError(f"tau out of [-1, 1]: {tau}")
    kept = []
    for doc_id, emb in docs:
        if emb.is_zero:
            continue
        score = cosine(query, emb)
        if score >= tau:
            kept.append((doc_id, score))
    kept.sort(key=lambda item: (-item[1], item[0]))
    return kept


@dataclass(frozen=True)
class RetrievedItem:
    """One candidate in D_s: where it came from, its text, and its score."""

    source: str  # "mesh" | "graph"
    id: str
    text: str
    emb: Embedding = field(repr=False)
    score: float
    origin: str = ""  # source_url / node url; feeds source-independence counting
    record: object | None = field(default=None, repr=False, compare=False)


def retrieve(query_text: str, kg_store, mesh_store, k: int,
             provider: EmbeddingProvider | None = None) -> list[RetrievedItem]:
    """Gather the top-k candidates for a query from the mesh and the graph.

    Ranks by cosine before any tau cut; the workflow applies tau afterwards
    in its filter step. Deterministic for fixed stores.
    """
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    tokens = tokenize(query_text)
    if not tokens:
        raise InvalidArgumentError("empty query embeds to the zero vector")
    q = embed(tokens, provider)
    items: list[RetrievedItem] = []
    if mesh_store is not None:
        for record in mesh_store.all_records():
            text = record.text()
            emb = embed(tokenize(text), provider)
            if emb.is_zero:
                continue
            items.append(RetrievedItem(
                source="mesh", id=record.record_id, text=text, emb=emb,
                score=cosine(q, emb), origin=record.source_url, record=record))
    if kg_store is not None:
        for node_id, term_counts, text, origin in kg_store.nodes_with_vectors():
            emb = embed_counts(term_counts, provider)
            if emb.is_zero:
                continue
            items.append(RetrievedItem(
                source="graph", id=node_id, text=text, emb=emb,
                score=cosine(q, emb), origin=origin))
    items.sort(key=lambda item: (-item.score, item.id, item.source))
    return items[:k]
