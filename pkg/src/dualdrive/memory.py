"""Experience memory: (description, reasoning, decision) samples with embeddings.

Scenes are reduced to compressed captions (category, lane, 5 m distance
bucket and motion per object), embedded, and retrieved by cosine
similarity for few-shot prompting.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from dualdrive.actions import MetaAction
from dualdrive.perception import SceneDescription

BANK_FORMAT_VERSION = 1
PROVENANCES = ("analytic", "reflection")


class BankFormatError(ValueError):
    pass


class EncoderMismatchError(ValueError):
    pass


# -- captions and encoding -------------------------------------------------

def distance_bucket(distance: float, width: float = 5.0) -> str:
    lo = int(math.floor(distance / width) * width)
    return f"{lo}-{lo + int(width)}m"


def compress_caption(d: SceneDescription) -> str:
    """``category|lane|bucket|motion`` per object, nearest first, ``;``-joined."""
    if not d.objects:
        return "none"
    return ";".join(
        f"{o.label}|{o.lane}|{distance_bucket(o.distance)}|{o.motion}" for o in d.sorted_objects()
    )


def tokenize(text: str) -> list[str]:
    return [t for t in (s.strip() for s in re.split(r"[|;]", text)) if t]


class TextEncoder(Protocol):
    encoder_id: str
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class HashedBagEncoder:
    """Offline encoder: hashed token counts, L2-normalised."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.encoder_id = f"hashed-bow-blake2b-{dim}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def encode(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            v[self.bucket(tok)] += 1.0
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    encoder_id: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("embedding has non-finite components")

    @property
    def dim(self) -> int:
        return len(self.vector)


DEFAULT_ENCODER = HashedBagEncoder()


def embed(text: str, encoder: TextEncoder | None = None) -> Embedding:
    enc = encoder or DEFAULT_ENCODER
    return Embedding(np.asarray(enc.encode(text), dtype=float), enc.encoder_id)


def _vec(e) -> np.ndarray:
    return np.asarray(e.vector if isinstance(e, Embedding) else e, dtype=float)


def cosine_similarity(e_q, e_i) -> float:
    """Cosine of the angle between two vectors; 0 if either is the zero vector."""
    a, b = _vec(e_q), _vec(e_i)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# -- samples and the bank --------------------------------------------------

@dataclass(frozen=True)
class ExperienceSample:
    description: SceneDescription
    reasoning: str
    decision: MetaAction
    provenance: str = "analytic"
    source: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.reasoning.strip():
            raise ValueError("reasoning must be non-empty")
        object.__setattr__(self, "decision", MetaAction(self.decision))
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")

    def to_dict(self) -> dict:
        return {"description": self.description.to_dict(), "reasoning": self.reasoning,
                "decision": self.decision.value, "provenance": self.provenance,
                "source": self.source, "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperienceSample":
        return cls(SceneDescription.from_dict(d["description"]), d["reasoning"],
                   MetaAction(d["decision"]), d["provenance"], d["source"], d["timestamp"])


@dataclass(frozen=True)
class ScoredSample:
    index: int
    sample: ExperienceSample
    score: float


@dataclass(frozen=True)
class InsertResult:
    inserted: bool
    index: int | None = None
    duplicate_of: int | None = None
    similarity: float | None = None


@dataclass
class MemoryBank:
    encoder: TextEncoder = field(default_factory=lambda: DEFAULT_ENCODER)
    dedup: bool = True
    dedup_threshold: float = 0.98
    samples: list = field(default_factory=list)
    _rows: list = field(default_factory=list, repr=False)
    _matrix: np.ndarray | None = field(default=None, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    @property
    def encoder_id(self) -> str:
        return self.encoder.encoder_id

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None or len(self._matrix) != len(self._rows):
            self._matrix = np.vstack(self._rows) if self._rows else np.zeros((0, self.dim))
        return self._matrix

    def embedding(self, i: int) -> np.ndarray:
        return self._rows[i]

    def add(self, sample: ExperienceSample, vector) -> int:
        """Store a sample with a precomputed embedding, bypassing dedup."""
        v = np.asarray(_vec(vector), dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"embedding dimension {v.shape} does not match bank dimension {self.dim}")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite components")
        with self._lock:
            self.samples.append(sample)
            self._rows.append(v)
            return len(self.samples) - 1

    def encode_scene(self, d: SceneDescription) -> Embedding:
        return embed(compress_caption(d), self.encoder)

    def insert(self, sample: ExperienceSample) -> InsertResult:
        e = self.encode_scene(sample.description)
        with self._lock:
            if self.dedup and self.samples:
                scores = self.scores(e.vector)
                same = np.array([s.decision == sample.decision for s in self.samples])
                scores = np.where(same, scores, -np.inf)
                j = int(np.argmax(scores))
                if scores[j] > self.dedup_threshold:
                    return InsertResult(False, duplicate_of=j, similarity=float(scores[j]))
            return InsertResult(True, index=self.add(sample, e.vector))

    def scores(self, e_q) -> np.ndarray:
        q = _vec(e_q)
        if q.shape != (self.dim,):
            raise ValueError(f"query dimension {q.shape} does not match bank dimension {self.dim}")
        m = self.matrix
        if len(m) == 0:
            return np.zeros(0)
        norms = np.linalg.norm(m, axis=1)
        qn = np.linalg.norm(q)
        denom = norms * qn
        raw = m @ q
        out = np.divide(raw, denom, out=np.zeros_like(raw), where=denom > 0)
        return np.clip(out, -1.0, 1.0)

    def query(self, e_q, k: int) -> list[ScoredSample]:
        if k < 0:
            raise ValueError("k must be non-negative")
        if k == 0 or not self.samples:
            return []
        s = self.scores(e_q)
        order = np.argsort(-s, kind="stable")[:k]
        return [ScoredSample(int(i), self.samples[i], float(s[i])) for i in order]

    def snapshot(self) -> "MemoryBank":
        with self._lock:
            return MemoryBank(self.encoder, self.dedup, self.dedup_threshold,
                              list(self.samples), list(self._rows))

    def subsample(self, n: int) -> "MemoryBank":
        """Evenly spaced subset of ``n`` samples (indices floor(i * M / n))."""
        m = len(self)
        n = max(0, min(n, m))
        idx = [i * m // n for i in range(n)]
        return MemoryBank(self.encoder, self.dedup, self.dedup_threshold,
                          [self.samples[i] for i in idx], [self._rows[i] for i in idx])

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        state["_matrix"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    def __eq__(self, other) -> bool:
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return (self.encoder_id == other.encoder_id and self.dim == other.dim
                and self.dedup == other.dedup and self.samples == other.samples
                and len(self._rows) == len(other._rows)
                and all(np.array_equal(a, b) for a, b in zip(self._rows, other._rows)))

    # -- persistence -------------------------------------------------------

    def persist(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock, path.open("w") as fh:
            header = {"format_version": BANK_FORMAT_VERSION, "encoder_id": self.encoder_id,
                      "dim": self.dim, "dedup": self.dedup,
                      "dedup_threshold": self.dedup_threshold}
            fh.write(json.dumps(header) + "\n")
            for s, v in zip(self.samples, self._rows):
                rec = s.to_dict()
                rec["embedding"] = [float(x) for x in v]
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path: str | Path, encoder: TextEncoder | None = None,
             strict: bool = True) -> "MemoryBank":
        """Read a bank file.

        With ``strict`` the file's encoder id must match ``encoder``; without
        it the stored vectors are kept as-is and the given encoder is only
        used for new inserts.
        """
        encoder = encoder or DEFAULT_ENCODER
        with Path(path).open() as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise BankFormatError(f"{path}: unreadable header") from exc
            version = header.get("format_version")
            if version != BANK_FORMAT_VERSION:
                raise BankFormatError(
                    f"{path}: unsupported format_version {version} (expected {BANK_FORMAT_VERSION})")
            if header["encoder_id"] != encoder.encoder_id:
                if strict:
                    raise EncoderMismatchError(
                        f"{path}: bank built with encoder {header['encoder_id']!r}, "
                        f"configured encoder is {encoder.encoder_id!r}")
            if header["dim"] != encoder.dim:
                raise EncoderMismatchError(f"{path}: bank dimension {header['dim']} != {encoder.dim}")
            bank = cls(encoder, header.get("dedup", True), header.get("dedup_threshold", 0.98))
            for n, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    vec = np.array(rec.pop("embedding"), dtype=float)
                    bank.add(ExperienceSample.from_dict(rec), vec)
                except (KeyError, ValueError, TypeError) as exc:
                    raise BankFormatError(f"{path}:{n}: bad record ({exc})") from exc
        return bank


def query_top_k(bank: MemoryBank, e_q, k: int) -> list[ScoredSample]:
    """The ``min(k, M)`` most similar samples, best first; ties keep insertion order."""
    return bank.query(e_q, k)


def insert(bank: MemoryBank, sample: ExperienceSample) -> InsertResult:
    return bank.insert(sample)


def persist(bank: MemoryBank, path) -> None:
    bank.persist(path)


def load(path, encoder: TextEncoder | None = None, strict: bool = True) -> MemoryBank:
    return MemoryBank.load(path, encoder, strict)
