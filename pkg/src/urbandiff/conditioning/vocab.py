"""Fixed vocabulary over the prompt template dialect.

The prompt language is closed: template words, unit symbols, punctuation, land
use category names, and the corpus city names. Free text outside that set
falls back to greedy longest-match piecing over known tokens (ultimately
single letters), so any word maps to some id sequence without an unknown
token ever being needed at encode time.
"""

from __future__ import annotations

import string

from ..geogrid.density import LAND_USE_CATEGORIES
from ..geogrid.prompts import Token, tokenize_prompt
from ..synthcity.corpus import CITY_NAMES

PAD_TOKEN = "[pad]"
BOS_TOKEN = "[bos]"
NUM_TOKEN = "[num]"

_TEMPLATE_WORDS = (
    "satellite imagery of the bcr in this area is bvd road density rpd rvc "
    "fossil fuel co emissions are tonnes carbon land use parcels include "
    "m km persons person and with a from"
)


def _dialect_words() -> list[str]:
    words: list[str] = []
    for source in (
        _TEMPLATE_WORDS.split(),
        [w for name in LAND_USE_CATEGORIES for w in name.split("_")],
        [w for name in CITY_NAMES for w in name.lower().split()],
        list(string.ascii_lowercase),
    ):
        for word in source:
            if word not in words:
                words.append(word)
    return words


_PUNCT = list(".%,/:;()-'\"²³!?")


class PromptVocabulary:
    """Token-string to id mapping shared by every text encoder instance."""

    def __init__(self) -> None:
        ordered = [PAD_TOKEN, BOS_TOKEN, NUM_TOKEN] + _dialect_words() + _PUNCT
        self._id_of = {tok: i for i, tok in enumerate(ordered)}
        self._tokens = ordered

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def pad_id(self) -> int:
        return self._id_of[PAD_TOKEN]

    @property
    def bos_id(self) -> int:
        return self._id_of[BOS_TOKEN]

    @property
    def num_id(self) -> int:
        return self._id_of[NUM_TOKEN]

    def piece_word(self, word: str) -> list[int]:
        """Greedy longest-match split of an out-of-dialect word into known pieces."""
        ids: list[int] = []
        pos = 0
        while pos < len(word):
            for end in range(len(word), pos, -1):
                piece = word[pos:end]
                if piece in self._id_of:
                    ids.append(self._id_of[piece])
                    pos = end
                    break
            else:
                pos += 1  # unencodable character, skip it
        return ids

    def encode_token(self, token: Token) -> list[int]:
        if token.is_numeral:
            return [self._id_of[NUM_TOKEN]]
        if token.text in self._id_of:
            return [self._id_of[token.text]]
        return self.piece_word(token.text)

    def encode(self, text: str) -> tuple[list[int], list[int]]:
        """Token ids plus, aligned with them, the canonical-token index each id
        came from (piecing can expand one token into several ids)."""
        ids: list[int] = [self.bos_id]
        origins: list[int] = [-1]
        for index, token in enumerate(tokenize_prompt(text)):
            for tid in self.encode_token(token):
                ids.append(tid)
                origins.append(index)
        return ids, origins
