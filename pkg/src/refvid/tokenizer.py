"""Word-level tokenizer with the reserved multimodal specials.

Tagged wire forms (``<region:obj>`` / ``[SEG:obj]``) normalize to the bare
reserved tokens at the model boundary; the object id is kept alongside so
the model can align prompts and mask supervision.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import InputError
from .tokens import (
    EOS_TOKEN,
    PAD_TOKEN,
    PHRASE_CLOSE,
    PHRASE_OPEN,
    REGION_TOKEN,
    SEG_TOKEN,
    UNK_TOKEN,
)

SPECIAL_TOKENS = (PAD_TOKEN, EOS_TOKEN, UNK_TOKEN, REGION_TOKEN, SEG_TOKEN,
                  PHRASE_OPEN, PHRASE_CLOSE)

_TOKEN_RE = re.compile(
    r"<region:[^>\s]+>|<region>|\[SEG:[^\]\s]+\]|\[SEG\]|</p>|<p>|[A-Za-z0-9_']+|[^\sA-Za-z0-9_']"
)
_REGION_REF_RE = re.compile(r"<region:([^>\s]+)>")
_SEG_REF_RE = re.compile(r"\[SEG:([^\]\s]+)\]")


@dataclass
class TokenInfo:
    surface: str            # normalized token string (tags stripped)
    object_id: str | None   # id carried by a tagged region/seg form


def split_tokens(text: str) -> list[TokenInfo]:
    out = []
    for raw in _TOKEN_RE.findall(text):
        m = _REGION_REF_RE.fullmatch(raw)
        if m:
            out.append(TokenInfo(REGION_TOKEN, m.group(1)))
            continue
        m = _SEG_REF_RE.fullmatch(raw)
        if m:
            out.append(TokenInfo(SEG_TOKEN, m.group(1)))
            continue
        out.append(TokenInfo(raw, None))
    return out


class Tokenizer:
    def __init__(self, words):
        ordered = []
        seen = set(SPECIAL_TOKENS)
        for w in words:
            if w not in seen:
                seen.add(w)
                ordered.append(w)
        self.vocab = list(SPECIAL_TOKENS) + sorted(ordered)
        self.index = {w: i for i, w in enumerate(self.vocab)}

    @classmethod
    def from_texts(cls, texts) -> "Tokenizer":
        # Role markers are part of the conversation serialization, not the
        # raw turn texts, so they are always added.
        words = ["user", "assistant", ":"]
        for text in texts:
            words.extend(info.surface for info in split_tokens(text))
        return cls(words)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return self.index[PAD_TOKEN]

    @property
    def eos_id(self) -> int:
        return self.index[EOS_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.index[UNK_TOKEN]

    @property
    def region_id(self) -> int:
        return self.index[REGION_TOKEN]

    @property
    def seg_id(self) -> int:
        return self.index[SEG_TOKEN]

    def encode(self, text: str) -> list[int]:
        return [self.index.get(info.surface, self.unk_id) for info in split_tokens(text)]

    def decode(self, ids, skip_special: bool = False) -> str:
        words = []
        for i in ids:
            if not 0 <= i < len(self.vocab):
                raise InputError(f"token id {i} outside vocabulary")
            word = self.vocab[i]
            if skip_special and word in (PAD_TOKEN, EOS_TOKEN):
                continue
            words.append(word)
        return " ".join(words)
