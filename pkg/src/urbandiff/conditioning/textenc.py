"""Numeral-aware prompt encoder.

Words and punctuation come from a trainable vocabulary; every numeral shares
one surface token id and instead contributes a numeric embedding computed from
its (value, unit) pair. Numeric embeddings are added at the slot positions,
then a stack of cross-attention layers lets every token attend back over the
numeric stream. With no numerals present the cross-attention layers reduce to
the identity pathway.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import torch
from torch import nn

from ..geogrid.prompts import (
    UNIT_BVD,
    UNIT_EMISSION,
    UNIT_NONE,
    UNIT_PERCENT,
    UNIT_ROAD,
    UNIT_RPD,
    UNIT_RVC,
    PromptSpec,
    extract_numeric_slots,
    render_prompt,
)
from .vocab import PromptVocabulary

# Typical magnitude per unit, so the scaled feature lands near [0, ~3] across
# the metric ranges the corpus produces.
UNIT_SCALES: dict[str, float] = {
    UNIT_PERCENT: 100.0,
    UNIT_BVD: 10.0,
    UNIT_ROAD: 20.0,
    UNIT_RPD: 0.02,
    UNIT_RVC: 500.0,
    UNIT_EMISSION: 100.0,
    UNIT_NONE: 1.0,
}


@dataclass
class TextEmbedding:
    """Encoded prompt: per-position vectors plus the slot bookkeeping."""

    embeddings: torch.Tensor  # (L, d_text)
    token_ids: tuple[int, ...]
    slot_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.token_ids) != len(self.slot_mask) or self.embeddings.shape[0] != len(
            self.token_ids
        ):
            raise ValueError("embedding length, token ids, and slot mask disagree")


def featurize_values(values: list[float], units: list[str]) -> torch.Tensor:
    """Per-slot raw features [sign, log1p of magnitude, unit-scaled value]."""
    rows = []
    for value, unit in zip(values, units):
        scale = UNIT_SCALES.get(unit, 1.0)
        rows.append(
            [math.copysign(1.0, value) if value != 0 else 0.0, math.log1p(abs(value)), value / scale]
        )
    return torch.tensor(rows, dtype=torch.float32).reshape(len(rows), 3)


class _SlotCrossAttention(nn.Module):
    """Token positions (queries) attend over the numeric stream (keys/values)."""

    def __init__(self, d_text: int, d_num: int, n_heads: int = 4):
        super().__init__()
        self.n_heads = n_heads
        self.norm = nn.LayerNorm(d_text)
        self.to_q = nn.Linear(d_text, d_text, bias=False)
        self.to_k = nn.Linear(d_num, d_text, bias=False)
        self.to_v = nn.Linear(d_num, d_text, bias=False)
        self.to_out = nn.Linear(d_text, d_text)
        self.mlp = nn.Sequential(
            nn.LayerNorm(d_text), nn.Linear(d_text, 2 * d_text), nn.SiLU(), nn.Linear(2 * d_text, d_text)
        )

    def forward(self, seq: torch.Tensor, numeric: torch.Tensor) -> torch.Tensor:
        if numeric.shape[0] > 0:
            length, d = seq.shape
            q = self.to_q(self.norm(seq)).reshape(length, self.n_heads, -1).transpose(0, 1)
            k = self.to_k(numeric).reshape(numeric.shape[0], self.n_heads, -1).transpose(0, 1)
            v = self.to_v(numeric).reshape(numeric.shape[0], self.n_heads, -1).transpose(0, 1)
            scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.n_heads)
            out = (scores.softmax(dim=-1) @ v).transpose(0, 1).reshape(length, d)
            seq = seq + self.to_out(out)
        return seq + self.mlp(seq)


class NumeralTextEncoder(nn.Module):
    def __init__(
        self,
        d_text: int = 96,
        d_num: int = 32,
        max_tokens: int = 77,
        n_cross_layers: int = 2,
        vocab: PromptVocabulary | None = None,
    ):
        super().__init__()
        if n_cross_layers < 2:
            raise ValueError("the numeric fusion stack needs at least 2 cross-attention layers")
        self.vocab = vocab or PromptVocabulary()
        self.max_tokens = max_tokens
        self.d_text = d_text
        self.token_embedding = nn.Embedding(len(self.vocab), d_text)
        self.pos_embedding = nn.Parameter(torch.randn(max_tokens, d_text) * 0.02)
        self.numeric_mlp = nn.Sequential(
            nn.Linear(3, d_num), nn.SiLU(), nn.Linear(d_num, d_num), nn.SiLU()
        )
        self.numeric_to_text = nn.Linear(d_num, d_text)
        self.cross_layers = nn.ModuleList(
            [_SlotCrossAttention(d_text, d_num) for _ in range(n_cross_layers)]
        )
        self.final_norm = nn.LayerNorm(d_text)

    def prepare_ids(self, text: str) -> tuple[list[int], list[int], list[float], list[str]]:
        """Vocabulary ids, slot id-positions, and per-slot (value, unit) lists."""
        ids, origins = self.vocab.encode(text)
        slots = extract_numeric_slots(text)
        position_of = {}
        for pos, origin in enumerate(origins):
            if origin >= 0 and origin not in position_of:
                position_of[origin] = pos
        positions, values, units = [], [], []
        for slot in slots:
            if slot.token_index in position_of and position_of[slot.token_index] < self.max_tokens:
                positions.append(position_of[slot.token_index])
                values.append(slot.value)
                units.append(slot.unit)
        if len(ids) > self.max_tokens:
            warnings.warn(
                f"prompt of {len(ids)} tokens truncated to {self.max_tokens}", stacklevel=3
            )
            ids = ids[: self.max_tokens]
        return ids, positions, values, units

    def _truncate_spec(self, spec: PromptSpec) -> PromptSpec:
        """Shorten free text word by word until the prompt fits the token limit."""
        words = spec.free_text.split()
        while words:
            words.pop()
            spec = replace(spec, free_text=" ".join(words))
            ids, _ = self.vocab.encode(render_prompt(spec))
            if len(ids) <= self.max_tokens:
                return spec
        return spec

    def _embed(self, text: str) -> tuple[torch.Tensor, torch.Tensor, list[int], list[int]]:
        ids, positions, values, units = self.prepare_ids(text)
        id_tensor = torch.tensor(ids, dtype=torch.long, device=self.pos_embedding.device)
        seq = self.token_embedding(id_tensor) + self.pos_embedding[: len(ids)]
        numeric = self.numeric_mlp(
            featurize_values(values, units).to(device=seq.device, dtype=seq.dtype)
        )
        if positions:
            seq = seq.index_add(
                0,
                torch.tensor(positions, dtype=torch.long, device=seq.device),
                self.numeric_to_text(numeric),
            )
        return seq, numeric, ids, positions

    def embed_tokens(self, text: str) -> tuple[torch.Tensor, list[int], list[int]]:
        """Pre-cross-attention sequence: token + position + slot numeric adds."""
        seq, _, ids, positions = self._embed(text)
        return seq, ids, positions

    def encode_text(self, text: str) -> TextEmbedding:
        seq, numeric, ids, positions = self._embed(text)
        for layer in self.cross_layers:
            seq = layer(seq, numeric)
        seq = self.final_norm(seq)
        slot_set = set(positions)
        mask = [i in slot_set for i in range(len(ids))]
        return TextEmbedding(seq, tuple(ids), tuple(mask))

    def encode_spec(self, spec: PromptSpec) -> TextEmbedding:
        text = render_prompt(spec)
        if len(self.vocab.encode(text)[0]) > self.max_tokens and spec.free_text:
            spec = self._truncate_spec(spec)
            warnings.warn("prompt free text truncated to fit the token limit", stacklevel=2)
            text = render_prompt(spec)
        return self.encode_text(text)

    def encode_null(self) -> TextEmbedding:
        """Empty-prompt encoding used for classifier-free unconditional passes."""
        seq = self.token_embedding(
            torch.tensor([self.vocab.bos_id], device=self.pos_embedding.device)
        )
        seq = seq + self.pos_embedding[:1]
        empty = torch.zeros(0, 3, device=seq.device, dtype=seq.dtype)
        numeric = self.numeric_mlp(empty)
        for layer in self.cross_layers:
            seq = layer(seq, numeric)
        return TextEmbedding(self.final_norm(seq), (self.vocab.bos_id,), (False,))

    def encode_batch(
        self, texts: list[str], drop: list[bool] | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Padded (B, L, d) context plus boolean validity mask (B, L).

        `drop` marks prompts to replace with the null encoding (text dropout
        for classifier-free guidance).
        """
        encoded = []
        for i, text in enumerate(texts):
            if drop is not None and drop[i]:
                encoded.append(self.encode_null())
            else:
                encoded.append(self.encode_text(text))
        longest = max(e.embeddings.shape[0] for e in encoded)
        context = torch.zeros(
            len(encoded),
            longest,
            self.d_text,
            device=self.pos_embedding.device,
            dtype=self.pos_embedding.dtype,
        )
        mask = torch.zeros(len(encoded), longest, dtype=torch.bool, device=context.device)
        for i, e in enumerate(encoded):
            context[i, : e.embeddings.shape[0]] = e.embeddings
            mask[i, : e.embeddings.shape[0]] = True
        return context, mask
