"""Whitespace/punctuation tokenizer over a corpus-built vocabulary.

The vocabulary keeps the `vocab_size - 4` most frequent terms (ties broken
lexicographically) behind four reserved slots: pad, cls, mask, unk. Everything
out of vocabulary maps to unk.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .config import ModelConfig
from .errors import DataError, VocabularyError

UNK_TOKEN = "<unk>"
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_text(text: str) -> list[str]:
    """Split into word and single-punctuation tokens."""
    return _TOKEN_RE.findall(text)


class Tokenizer:
    """Maps term strings to ids under a fixed ModelConfig's special-id layout."""

    def __init__(self, config: ModelConfig, terms: Sequence[str]):
        reserved = {config.pad_token_id, config.cls_token_id, config.mask_token_id}
        free_ids = [i for i in range(config.vocab_size) if i not in reserved]
        if len(terms) > len(free_ids) - 1:
            raise DataError(
                f"{len(terms)} terms do not fit a vocab of {config.vocab_size} with 4 reserved slots")
        self.config = config
        self.unk_token_id = free_ids[0]
        self._id_of = {UNK_TOKEN: self.unk_token_id}
        for term, tid in zip(terms, free_ids[1:]):
            self._id_of[term] = tid
        self._term_of = {tid: term for term, tid in self._id_of.items()}
        self._term_of[config.pad_token_id] = "<pad>"
        self._term_of[config.cls_token_id] = "<cls>"
        self._term_of[config.mask_token_id] = "<mask>"
        self.terms = list(terms)

    @classmethod
    def build(cls, config: ModelConfig, texts: Iterable[str]) -> "Tokenizer":
        """Count terms over `texts` and keep the most frequent ones."""
        counts = Counter()
        for text in texts:
            counts.update(split_text(text))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        keep = config.vocab_size - 4
        return cls(config, [term for term, _ in ranked[:keep]])

    def encode_terms(self, tokens: Sequence[str]) -> list[int]:
        return [self._id_of.get(tok, self.unk_token_id) for tok in tokens]

    def encode(self, text: str) -> list[int]:
        """Token ids for `text`, without any special tokens."""
        return self.encode_terms(split_text(text))

    def decode(self, ids: Sequence[int]) -> str:
        """Space-joined terms; raises on ids outside the vocabulary."""
        words = []
        for tid in ids:
            tid = int(tid)
            if tid not in self._term_of:
                if not 0 <= tid < self.config.vocab_size:
                    raise VocabularyError(f"token id {tid} outside vocab of {self.config.vocab_size}")
                words.append(UNK_TOKEN)
            else:
                words.append(self._term_of[tid])
        return " ".join(words)

    def save(self, path: Path) -> None:
        payload = {"terms": self.terms}
        Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, config: ModelConfig, path: Path) -> "Tokenizer":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(config, payload["terms"])


def segment_token_ids(tokenizer: Tokenizer, segments: Sequence[str]) -> tuple[list[int], list[tuple[int, int]]]:
    """Tokenize ordered segments into one cls-prefixed sequence.

    Returns (token_ids, spans) where spans are half-open [start, end) ranges
    into token_ids, one per segment, jointly covering every non-special token.
    """
    cfg = tokenizer.config
    ids = [cfg.cls_token_id]
    spans = []
    for seg in segments:
        start = len(ids)
        ids.extend(tokenizer.encode(seg))
        spans.append((start, len(ids)))
    if len(ids) > cfg.max_text_len:
        raise DataError(f"segments tokenize to {len(ids)} ids, above max_text_len {cfg.max_text_len}")
    return ids, spans
