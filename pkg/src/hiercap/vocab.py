"""Vocabulary construction and caption token conventions.

Ids 0, 1, 2 are reserved for NULL (padding), START and END. Remaining
ids are assigned to corpus tokens by descending count with lexicographic
tie-breaking, which makes vocabulary construction deterministic.

A caption moves through the system as a list of action ids: the content
words followed by END when the sequence terminated normally. START is
prepended only model-side (teacher forcing / decoding input).
"""

from __future__ import annotations

import json
from collections import Counter

from .errors import ContractError, VocabularyError

NULL_ID = 0
START_ID = 1
END_ID = 2
SPECIALS = ("<null>", "<start>", "<end>")

_PUNCT = ".,()-"


def normalize_text(text: str) -> list[str]:
    """Lowercase, substitute punctuation, split on whitespace."""
    text = text.lower().replace("&", " and ")
    for ch in _PUNCT:
        text = text.replace(ch, " ")
    return text.split()


class Vocabulary:
    def __init__(self, tokens: list[str], counts: dict | None = None):
        self.id_to_token = list(SPECIALS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("duplicate tokens in vocabulary")
        self.counts = dict(counts or {})

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, words: list[str]) -> list[int]:
        try:
            return [self.token_to_id[w] for w in words]
        except KeyError as e:
            raise VocabularyError(f"token {e.args[0]!r} not in vocabulary") from e

    def decode(self, ids) -> list[str]:
        """Content words of an action sequence; stops at END, skips pads."""
        words = []
        for i in ids:
            i = int(i)
            if i == END_ID:
                break
            if i in (NULL_ID, START_ID):
                continue
            if i < 0 or i >= len(self.id_to_token):
                raise VocabularyError(f"id {i} out of range")
            words.append(self.id_to_token[i])
        return words

    def checksum(self) -> str:
        import hashlib
        return hashlib.sha256("\n".join(self.id_to_token).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"tokens": self.id_to_token[len(SPECIALS):],
                       "counts": self.counts}, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        return cls(blob["tokens"], blob.get("counts"))


def build_vocabulary(corpus, min_count: int = 5) -> Vocabulary:
    """Vocabulary of tokens occurring strictly more than ``min_count`` times.

    ``corpus`` is an iterable of raw caption strings; the same text
    normalization is applied here and everywhere else in the pipeline.
    """
    counts = Counter()
    seen_any = False
    for caption in corpus:
        words = normalize_text(caption)
        seen_any = seen_any or bool(words)
        counts.update(words)
    if not seen_any:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c > min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept, {t: counts[t] for t in kept})


def clip_references(captions: list[str], vocab: Vocabulary,
                    max_len: int = 20) -> list[list[int]]:
    """Encode reference captions, dropping ones that are too long or
    contain out-of-vocabulary words."""
    out = []
    for caption in captions:
        words = normalize_text(caption)
        if not words or len(words) > max_len:
            continue
        if any(w not in vocab for w in words):
            continue
        out.append(vocab.encode(words))
    return out
