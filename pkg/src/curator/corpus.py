"""Corpus ingestion, two-level tokenization and synthetic corpus generation.

Documents carry two token views: `model_tokens` is the byte sequence of the
UTF-8 text (vocabulary 256, round-trips exactly), and `lexical_terms` are the
lowercased maximal runs of Unicode alphanumerics (what the BM25 scorer
consumes). Corpora are immutable after construction and safe to share.

The synthetic corpus emits two domains from fixed stochastic character
grammars chosen so that a model fit on domain A has strictly higher loss on
domain B:

* Domain "A" (syllabic): words of 1-3 consonant+vowel syllables drawn from
  fixed non-uniform letter distributions, separated by single spaces. The
  strong bigram structure makes A learnable by a small model.
* Domain "B" (noise): i.i.d. uniform characters over A's alphabet plus the
  ten digits. B has no learnable transition structure beyond its uniform
  unigram, and its support overlaps A's, so training on B actively degrades
  A predictions.

File format: UTF-8 JSON-Lines, one object per line with exactly the keys
{"id", "text", "domain", "split"}; unknown keys are rejected. The writer
sorts keys alphabetically so identical corpora serialize identically.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)

REQUIRED_KEYS = ("domain", "id", "split", "text")
SPLITS = ("train", "val")

SYLLABLE_CONSONANTS = "bdfgklmnprst"
SYLLABLE_CONSONANT_P = np.array([5, 4, 3, 3, 2, 2, 2, 1, 1, 1, 1, 1], dtype=np.float64)
SYLLABLE_CONSONANT_P /= SYLLABLE_CONSONANT_P.sum()
SYLLABLE_VOWELS = "aeiou"
SYLLABLE_VOWEL_P = np.array([6, 4, 3, 2, 1], dtype=np.float64)
SYLLABLE_VOWEL_P /= SYLLABLE_VOWEL_P.sum()
NOISE_ALPHABET = SYLLABLE_CONSONANTS + SYLLABLE_VOWELS + " 0123456789"


class CorpusFormatError(ValueError):
    """A corpus file violated the line format; message names the line."""


def tokenize_lexical(text: str) -> tuple[str, ...]:
    """Lowercased maximal runs of Unicode alphanumeric characters, in order."""
    return tuple(_WORD_RE.findall(text.lower()))


def tokenize_bytes(text: str) -> np.ndarray:
    """UTF-8 bytes of `text` as int64 token ids in [0, 256)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)


def detokenize_bytes(tokens) -> str:
    """Inverse of `tokenize_bytes`."""
    return bytes(int(t) for t in tokens).decode("utf-8")


@dataclass(frozen=True, eq=False)
class Document:
    id: str
    text: str
    domain: str
    split: str
    model_tokens: np.ndarray = field(repr=False)
    lexical_terms: tuple[str, ...] = field(repr=False)

    @classmethod
    def make(cls, id: str, text: str, domain: str, split: str) -> "Document":
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return cls(
            id=id, text=text, domain=domain, split=split,
            model_tokens=tokenize_bytes(text),
            lexical_terms=tokenize_lexical(text),
        )

    def to_record(self) -> dict:
        return {"id": self.id, "text": self.text, "domain": self.domain,
                "split": self.split}


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    domains: frozenset[str] = field(default=None)

    def __post_init__(self):
        seen = set()
        for doc in self.documents:
            if doc.id in seen:
                raise ValueError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)
        object.__setattr__(
            self, "domains", frozenset(d.domain for d in self.documents))

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def filter(self, split: str | None = None,
               domains: set[str] | None = None) -> "Corpus":
        docs = tuple(
            d for d in self.documents
            if (split is None or d.split == split)
            and (domains is None or d.domain in domains)
        )
        return Corpus(documents=docs)

    def by_domain(self) -> dict[str, list[Document]]:
        out: dict[str, list[Document]] = {}
        for d in self.documents:
            out.setdefault(d.domain, []).append(d)
        return out


@dataclass(frozen=True)
class AnchorSet:
    """Validation/query pool with its current unit-norm embedding matrix.

    Refreshing produces a new AnchorSet (snapshot-swap): readers holding the
    old instance keep a consistent matrix.
    """

    anchors: tuple[Document, ...]
    embeddings: np.ndarray
    last_refresh_step: int = 0

    def __post_init__(self):
        if self.embeddings.shape[0] != len(self.anchors):
            raise ValueError("embedding row count must equal anchor count")

    def __len__(self) -> int:
        return len(self.anchors)

    def with_embeddings(self, embeddings: np.ndarray, step: int) -> "AnchorSet":
        return replace(self, embeddings=embeddings, last_refresh_step=step)


def load_corpus(path) -> Corpus:
    """Parse a JSON-Lines corpus file; empty file yields an empty corpus.

    Errors (malformed JSON, missing/unknown keys, non-string values, bad
    split, duplicate ids) name the offending 1-based line number.
    """
    docs: list[Document] = []
    seen_ids: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip() == "":
                raise CorpusFormatError(f"line {lineno}: blank line")
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"line {lineno}: malformed JSON ({e.msg})")
            if not isinstance(record, dict):
                raise CorpusFormatError(f"line {lineno}: record is not an object")
            missing = [k for k in REQUIRED_KEYS if k not in record]
            if missing:
                raise CorpusFormatError(f"line {lineno}: missing key {missing[0]!r}")
            unknown = [k for k in record if k not in REQUIRED_KEYS]
            if unknown:
                raise CorpusFormatError(f"line {lineno}: unknown key {unknown[0]!r}")
            for k in REQUIRED_KEYS:
                if not isinstance(record[k], str):
                    raise CorpusFormatError(f"line {lineno}: key {k!r} must be a string")
            if record["split"] not in SPLITS:
                raise CorpusFormatError(
                    f"line {lineno}: split must be one of {SPLITS}")
            if record["id"] in seen_ids:
                raise CorpusFormatError(
                    f"line {lineno}: duplicate id {record['id']!r} "
                    f"(first seen on line {seen_ids[record['id']]})")
            seen_ids[record["id"]] = lineno
            docs.append(Document.make(**record))
    return Corpus(documents=tuple(docs))


def save_corpus(corpus: Corpus, path) -> None:
    """Deterministic JSON-Lines writer (alphabetical keys, one doc per line)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for doc in corpus:
            f.write(json.dumps(doc.to_record(), sort_keys=True, ensure_ascii=False))
            f.write("\n")


def _gen_syllabic(rng: np.random.Generator, length: int) -> str:
    # worst case every word is one syllable (3 bytes with its space)
    n_words_max = length // 2 + 2
    word_lens = rng.integers(1, 4, n_words_max)
    n_syll = int(word_lens.sum())
    cons = rng.choice(len(SYLLABLE_CONSONANTS), size=n_syll, p=SYLLABLE_CONSONANT_P)
    vows = rng.choice(len(SYLLABLE_VOWELS), size=n_syll, p=SYLLABLE_VOWEL_P)
    words: list[str] = []
    k = 0
    size = 0
    for wl in word_lens:
        words.append("".join(
            SYLLABLE_CONSONANTS[cons[k + j]] + SYLLABLE_VOWELS[vows[k + j]]
            for j in range(wl)))
        k += wl
        size += 2 * wl + 1
        if size - 1 >= length:  # joined length excludes the trailing space
            break
    return " ".join(words)[:length]


def _gen_noise(rng: np.random.Generator, length: int) -> str:
    idx = rng.integers(0, len(NOISE_ALPHABET), length)
    return "".join(NOISE_ALPHABET[i] for i in idx)


def synth_corpus(n_per_domain: int, seq_len: int, seed: int) -> Corpus:
    """Two-domain synthetic corpus; see the module docstring for the grammars.

    Emits n_per_domain train documents and max(1, n_per_domain // 10) val
    documents per domain, each exactly seq_len bytes. Byte-identical for a
    given (n_per_domain, seq_len, seed).
    """
    if n_per_domain < 1:
        raise ValueError("n_per_domain must be >= 1")
    if seq_len < 2:
        raise ValueError("seq_len must be >= 2")
    n_val = max(1, n_per_domain // 10)
    generators = {"A": _gen_syllabic, "B": _gen_noise}
    docs: list[Document] = []
    for split, count in (("train", n_per_domain), ("val", n_val)):
        for domain, gen in generators.items():
            # independent child streams keep each block reproducible
            rng = np.random.default_rng([seed, ord(domain), split == "val"])
            for i in range(count):
                text = gen(rng, seq_len)
                docs.append(Document.make(
                    id=f"{domain}-{split}-{i:05d}", text=text,
                    domain=domain, split=split))
    return Corpus(documents=tuple(docs))


def build_anchor_set(val_corpus: Corpus, per_domain: int, seed: int,
                     model, eps: float = 1e-8) -> AnchorSet:
    """Sample per_domain validation docs per domain (0 means take all) and
    embed them with one forward pass of `model`.

    Deterministic given seed: domains are visited in sorted order with one
    shared PCG64 stream.
    """
    pool = [d for d in val_corpus if d.split == "val"]
    by_domain: dict[str, list[Document]] = {}
    for d in pool:
        by_domain.setdefault(d.domain, []).append(d)
    rng = np.random.default_rng(seed)
    chosen: list[Document] = []
    for domain in sorted(by_domain):
        docs = by_domain[domain]
        if per_domain == 0:
            chosen.extend(docs)
            continue
        if len(docs) < per_domain:
            raise ValueError(
                f"domain {domain!r} has {len(docs)} val docs, need {per_domain}")
        idx = rng.choice(len(docs), size=per_domain, replace=False)
        chosen.extend(docs[i] for i in sorted(idx))
    d_model = model.config.d_model
    base = AnchorSet(
        anchors=tuple(chosen),
        embeddings=np.zeros((len(chosen), d_model), dtype=np.float64),
        last_refresh_step=0,
    )
    from curator.scoring import refresh_anchors  # deferred: avoids module cycle

    return refresh_anchors(model, base, step=0, eps=eps)
