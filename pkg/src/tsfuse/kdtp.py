"""Knowledge-driven prompt construction.

A flat document index (hashed bag-of-token embeddings plus keyword sets)
stands behind the retrieve-then-generate contract: the enhanced prompt is
``generate(query, retrieve(query, index))`` enriched with descriptors of the
series itself.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .series import EPS_STD, TimeSeries

log = logging.getLogger(__name__)

D_EMB = 64
EMBED_SEED = 0x5EED
EXCERPT_CHARS = 200
T_P_MAX = 128
OUTLIER_Z = 3.0
ACF_FLOOR = 0.3

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class RetrievalError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def token_vector(token: str, d_emb: int = D_EMB, seed: int = EMBED_SEED) -> np.ndarray:
    """Seeded hash of ``token`` expanded into a standard normal vector."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16,
                             key=seed.to_bytes(8, "little")).digest()
    rng = np.random.Generator(np.random.Philox(int.from_bytes(digest, "little")))
    return rng.standard_normal(d_emb)


def embed_text(text: str, d_emb: int = D_EMB, seed: int = EMBED_SEED) -> np.ndarray | None:
    """L2-normalized mean of token vectors, or None when no tokens/zero norm.

    Tokens are accumulated in sorted order so the result depends only on the
    token multiset.
    """
    counts = Counter(tokenize(text))
    if not counts:
        return None
    total = np.zeros(d_emb)
    for tok in sorted(counts):
        total += counts[tok] * token_vector(tok, d_emb, seed)
    vec = total / sum(counts.values())
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        return None
    return vec / norm


@dataclass
class Document:
    id: str
    text: str
    keywords: frozenset[str]
    embedding: np.ndarray


@dataclass
class DocumentIndex:
    documents: list[Document]
    d_emb: int = D_EMB
    seed: int = EMBED_SEED
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.documents)

    def save(self, path: str | Path) -> None:
        payload = {
            "d_emb": self.d_emb, "seed": self.seed,
            "documents": [{"id": d.id, "text": d.text, "keywords": sorted(d.keywords),
                           "embedding": d.embedding.tolist()} for d in self.documents],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DocumentIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        docs = [Document(d["id"], d["text"], frozenset(d["keywords"]),
                         np.asarray(d["embedding"], dtype=np.float64))
                for d in payload["documents"]]
        return cls(docs, payload["d_emb"], payload["seed"])


def build_index(corpus, d_emb: int = D_EMB, seed: int = EMBED_SEED) -> DocumentIndex:
    """Index ``corpus``: a mapping id -> text, or a sequence of texts / (id, text) pairs.

    Documents without any alphanumeric token are skipped and counted.
    """
    if isinstance(corpus, dict):
        items = list(corpus.items())
    else:
        items = [(str(i), c) if isinstance(c, str) else (str(c[0]), c[1])
                 for i, c in enumerate(corpus)]
    if not items:
        raise RetrievalError("cannot index an empty corpus")
    docs: list[Document] = []
    seen: set[str] = set()
    skipped = 0
    for doc_id, text in items:
        if doc_id in seen:
            raise RetrievalError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        emb = embed_text(text, d_emb, seed)
        if emb is None:
            skipped += 1
            continue
        docs.append(Document(doc_id, text, frozenset(tokenize(text)), emb))
    if skipped:
        log.warning("skipped %d empty document(s) while indexing", skipped)
    if not docs:
        raise RetrievalError("every document in the corpus was empty")
    return DocumentIndex(docs, d_emb, seed, skipped)


def load_corpus(path: str | Path) -> dict[str, str]:
    """A directory of text files (id = file name) or a JSON-lines file of {id, text}."""
    path = Path(path)
    if path.is_dir():
        return {p.name: p.read_text(encoding="utf-8")
                for p in sorted(path.iterdir()) if p.is_file()}
    corpus: dict[str, str] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                corpus[str(rec["id"])] = str(rec["text"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise RetrievalError(f"{path}: line {lineno}: expected {{id, text}} ({exc})") from None
    return corpus


def retrieve(query: str, index: DocumentIndex, k: int = 3) -> list[tuple[Document, float]]:
    """Top-``k`` documents by cosine similarity; ties go to the smaller id."""
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    if not len(index):
        raise RetrievalError("index is empty")
    q = embed_text(query, index.d_emb, index.seed)
    if q is None:
        raise RetrievalError(f"query {query!r} has no tokens")
    scored = [(doc, float(np.clip(np.dot(doc.embedding, q), -1.0, 1.0)))
              for doc in index.documents]
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    return scored[:min(k, len(scored))]


@dataclass
class SeriesDescriptor:
    trend: str
    global_min: tuple[float, int]
    global_max: tuple[float, int]
    mean: float
    std: float
    dominant_period: int | None
    outlier_indices: list[int] = field(default_factory=list)

    def sentences(self) -> str:
        parts = [f"The series trend is {self.trend}.",
                 f"Minimum {self.global_min[0]:.3g} at step {self.global_min[1]}, "
                 f"maximum {self.global_max[0]:.3g} at step {self.global_max[1]}.",
                 f"Mean {self.mean:.3g}, std {self.std:.3g}."]
        if self.dominant_period is not None:
            parts.append(f"Dominant period about {self.dominant_period} steps.")
        else:
            parts.append("No dominant period.")
        if self.outlier_indices:
            shown = ", ".join(str(i) for i in self.outlier_indices[:5])
            more = "" if len(self.outlier_indices) <= 5 else " and more"
            parts.append(f"{len(self.outlier_indices)} outliers at steps {shown}{more}.")
        else:
            parts.append("No outliers.")
        return " ".join(parts)


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    full = np.correlate(xc, xc, mode="full")[len(x) - 1:]
    return full / denom


def describe_series(x: TimeSeries | np.ndarray) -> SeriesDescriptor:
    """Trend, extrema, spread, dominant period and |z| > 3 outliers.

    Multichannel input is summarized through its channel mean. The period
    is the highest local peak of the (biased) autocorrelation over lags
    [2, L/2], reported only when that peak exceeds 0.3.
    """
    v = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    v = v.mean(axis=0) if v.ndim == 2 else v
    n = v.size
    if n < 4:
        raise ValueError(f"describe_series needs L >= 4, got {n}")
    mu, sd = float(v.mean()), float(v.std())
    t = np.arange(n, dtype=np.float64)
    slope = float(np.polyfit(t, v, 1)[0])
    if sd < EPS_STD or abs(slope) < 1e-3 * sd / n:
        trend = "flat"
    else:
        trend = "increasing" if slope > 0 else "decreasing"

    period = None
    if sd >= EPS_STD:
        acf = _autocorrelation(v)
        hi = n // 2
        best, best_val = None, ACF_FLOOR
        for lag in range(2, hi + 1):
            if lag + 1 < n and acf[lag] >= acf[lag - 1] and acf[lag] >= acf[lag + 1] \
                    and acf[lag] > best_val:
                best, best_val = lag, float(acf[lag])
        period = best

    outliers = [] if sd < EPS_STD else [int(i) for i in np.nonzero(np.abs(v - mu) / sd > OUTLIER_Z)[0]]
    imin, imax = int(np.argmin(v)), int(np.argmax(v))
    return SeriesDescriptor(trend, (float(v[imin]), imin), (float(v[imax]), imax),
                            mu, sd, period, outliers)


@dataclass
class EnhancedPrompt:
    text: str
    source_doc_ids: list[str]
    descriptor: SeriesDescriptor | None
    query: str


def _cap_words(text: str, budget: int) -> str:
    words = text.split()
    return " ".join(words[:max(budget, 0)])


def generate_enhanced_prompt(query: str, retrieved, desc: SeriesDescriptor | None,
                             t_p_max: int = T_P_MAX) -> EnhancedPrompt:
    """Fixed template: task line, descriptor sentences, then excerpts in rank order.

    ``retrieved`` holds Documents or (Document, score) pairs. The text is
    capped at ``t_p_max`` whitespace tokens; the task line is always kept
    whole.
    """
    docs = [r[0] if isinstance(r, tuple) else r for r in retrieved]
    lines = [f"Task: {query}"]
    budget = t_p_max - len(lines[0].split())
    if desc is not None and budget > 0:
        s = _cap_words(desc.sentences(), budget)
        lines.append(s)
        budget -= len(s.split())
    used: list[str] = []
    for doc in docs:
        label = f"Context [{doc.id}]:"
        room = budget - len(label.split())
        if room <= 0:
            break
        excerpt = _cap_words(" ".join(doc.text[:EXCERPT_CHARS].split()), room)
        if not excerpt:
            continue
        lines.append(f"{label} {excerpt}")
        budget = room - len(excerpt.split())
        used.append(doc.id)
    return EnhancedPrompt("\n".join(lines), used, desc, query)


def build_prompt(query: str, series: TimeSeries | None, index: DocumentIndex | None,
                 k: int = 3, enabled: bool = True) -> EnhancedPrompt:
    """End-to-end prompt; with ``enabled=False`` the prompt is the raw query."""
    if not enabled:
        return EnhancedPrompt(query, [], None, query)
    hits = retrieve(query, index, k) if index is not None and len(index) and tokenize(query) else []
    desc = describe_series(series) if series is not None and series.length >= 4 else None
    return generate_enhanced_prompt(query, hits, desc)
