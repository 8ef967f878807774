"""Canonical question bank: curated intents matched by embedding similarity.

Similarity is cosine on unit vectors, thresholded at tau with top-k
truncation and a TTL result cache. The shipped mock provider is a
deterministic hashed character-trigram embedding; it is NOT semantically
meaningful, so tests control similarity through token overlap.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .core import HintLevel

NORM_TOL = 1e-6


class BankError(Exception):
    """Raised when a bank file fails to load or validate."""


class ProviderError(Exception):
    """Raised when an embedding provider fails; callers fall back to heuristics."""


class EmbeddingProvider(Protocol):
    provider_id: str
    dimensionality: int

    def embed(self, text: str) -> np.ndarray: ...


class MockEmbeddingProvider:
    """Deterministic embedding via hashed bag-of-character-trigrams.

    Identical strings always map to identical unit vectors. Disjoint-trigram
    strings are near-orthogonal at dimension >= 256.
    """

    def __init__(self, seed: int = 0, dimensionality: int = 384):
        self.provider_id = f"mock-trigram-{seed}"
        self.dimensionality = dimensionality
        self._seed = seed

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimensionality, dtype=np.float64)
        padded = f"  {text.lower()}  "
        for i in range(len(padded) - 2):
            tri = padded[i : i + 3]
            h = hashlib.blake2b(
                tri.encode("utf-8"), digest_size=8, salt=str(self._seed).encode()
            ).digest()
            idx = int.from_bytes(h[:4], "little") % self.dimensionality
            sign = 1.0 if h[4] & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm


def mock_provider(seed: int = 0, dimensionality: int = 384) -> MockEmbeddingProvider:
    return MockEmbeddingProvider(seed=seed, dimensionality=dimensionality)


@dataclass
class CanonicalEntry:
    id: str
    text: str
    preferred_model: str
    tags: list[str] = field(default_factory=list)
    overlay: str | None = None
    max_cost_usd: float = 0.05
    max_hint_level: HintLevel = HintLevel.L3
    vector: np.ndarray | None = None
    vector_hash: str | None = None
    embedding_provider: str | None = None


@dataclass(frozen=True)
class MatchResult:
    entry_id: str
    score: float
    rank: int


def vector_checksum(vector: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(vector, dtype=np.float32).tobytes()).hexdigest()


class MatchCache:
    """TTL cache keyed by (provider_id, query hash); atomic read-check-insert."""

    def __init__(self, ttl_seconds: float = 300.0, clock=time.monotonic):
        self.ttl_seconds = ttl_seconds
        self._clock = clock
        self._lock = threading.Lock()
        self._store: dict[tuple[str, str], tuple[float, list[MatchResult]]] = {}

    @staticmethod
    def _key(provider_id: str, query: str) -> tuple[str, str]:
        return provider_id, hashlib.sha256(query.encode("utf-8")).hexdigest()

    def get(self, provider_id: str, query: str) -> list[MatchResult] | None:
        key = self._key(provider_id, query)
        with self._lock:
            hit = self._store.get(key)
            if hit is None:
                return None
            inserted_at, results = hit
            if self._clock() - inserted_at > self.ttl_seconds:
                del self._store[key]
                return None
            return list(results)

    def put(self, provider_id: str, query: str, results: list[MatchResult]) -> None:
        key = self._key(provider_id, query)
        with self._lock:
            self._store[key] = (self._clock(), list(results))

    def flush(self) -> None:
        with self._lock:
            self._store.clear()


class Bank:
    """Immutable-after-load set of canonical entries with precomputed vectors."""

    def __init__(self, entries: list[CanonicalEntry], warnings: list[str] | None = None):
        self.entries: dict[str, CanonicalEntry] = {}
        self.warnings = warnings or []
        for e in entries:
            if e.id in self.entries:
                raise BankError(f"duplicate entry id: {e.id}")
            self.entries[e.id] = e
        ordered = sorted(self.entries.values(), key=lambda e: e.id)
        self._ids = [e.id for e in ordered]
        if ordered and all(e.vector is not None for e in ordered):
            self._matrix = np.stack([e.vector for e in ordered])
        else:
            self._matrix = None

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, entry_id: str) -> CanonicalEntry:
        return self.entries[entry_id]

    def match(
        self,
        query: str,
        provider: EmbeddingProvider,
        tau: float = 0.82,
        top_k: int = 3,
        cache: MatchCache | None = None,
        score_scale: float = 1.0,
    ) -> list[MatchResult]:
        """Entries scoring >= tau, best first, ties broken by ascending id.

        score_scale < 1 models encoder mismatch between the query provider and
        the vectors seeding the bank (degrades scores before thresholding).
        """
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must be in [0,1]")
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self._matrix is None:
            return []
        cache_key_query = f"{query}\x00scale={score_scale}\x00tau={tau}\x00k={top_k}"
        if cache is not None:
            cached = cache.get(provider.provider_id, cache_key_query)
            if cached is not None:
                return cached
        try:
            qvec = provider.embed(query)
        except Exception as exc:  # provider is pluggable; normalize failures
            raise ProviderError(str(exc)) from exc
        scores = self._matrix @ qvec
        scores = np.clip(scores * score_scale, -1.0, 1.0)
        candidates = [
            (float(s), self._ids[i]) for i, s in enumerate(scores) if s >= tau
        ]
        candidates.sort(key=lambda t: (-t[0], t[1]))
        results = [
            MatchResult(entry_id=eid, score=s, rank=i + 1)
            for i, (s, eid) in enumerate(candidates[:top_k])
        ]
        if cache is not None:
            cache.put(provider.provider_id, cache_key_query, results)
        return results


def _parse_entry(raw: dict, provider: EmbeddingProvider | None) -> tuple[CanonicalEntry, list[str]]:
    warnings: list[str] = []
    entry_id = raw.get("id")
    if not entry_id:
        raise BankError(f"entry missing id: {raw!r}")
    text = raw.get("text", "")
    if not text:
        raise BankError(f"entry {entry_id}: text must be non-empty")
    max_cost = float(raw.get("max_cost_usd", 0.05))
    if max_cost < 0:
        raise BankError(f"entry {entry_id}: max_cost_usd must be >= 0")
    emb = raw.get("embedding", {})
    vector = None
    if "vector" in emb:
        vector = np.asarray(emb["vector"], dtype=np.float64)
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > NORM_TOL:
            raise BankError(f"entry {entry_id}: vector not unit-normalized (norm={norm:.6f})")
    elif provider is not None:
        try:
            vector = provider.embed(text)
        except Exception as exc:
            raise BankError(f"entry {entry_id}: provider failed: {exc}") from exc
    stored_hash = emb.get("vector_hash")
    if vector is not None and stored_hash:
        actual = vector_checksum(vector)
        if actual != stored_hash:
            warnings.append(
                f"entry {entry_id}: vector_hash mismatch (stored {stored_hash[:12]}..., actual {actual[:12]}...)"
            )
    entry = CanonicalEntry(
        id=entry_id,
        text=text,
        preferred_model=raw.get("preferred_model", ""),
        tags=list(raw.get("tags", [])),
        overlay=raw.get("overlay"),
        max_cost_usd=max_cost,
        max_hint_level=HintLevel.parse(raw.get("max_hint_level", "L3")),
        vector=vector,
        vector_hash=stored_hash,
        embedding_provider=emb.get("provider"),
    )
    return entry, warnings


def load_bank(path, provider: EmbeddingProvider | None = None) -> Bank:
    """Load a bank file (JSON array of entries, fields as documented).

    Entries lacking stored vectors are embedded via the given provider at
    load time. vector_hash mismatches are load warnings, not failures.
    """
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise BankError(f"cannot load bank {path}: {exc}") from exc
    if isinstance(raw, dict):
        raw = raw.get("entries", [])
    entries: list[CanonicalEntry] = []
    warnings: list[str] = []
    for item in raw:
        entry, w = _parse_entry(item, provider)
        entries.append(entry)
        warnings.extend(w)
    return Bank(entries, warnings=warnings)


def hashed_query(query: str, salt: str) -> str:
    """Salted hash of the query text, embedded instead of raw text when
    privacy_mode=hashed."""
    return hashlib.sha256((salt + "\x00" + query).encode("utf-8")).hexdigest()
