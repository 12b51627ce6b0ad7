"""Toy cross-encoder over whitespace tokens.

A query and a passage are packed into one sequence
``[CLS] query [SEP] passage [SEP]`` and encoded by a small pre-norm
transformer stack; the hidden state at the CLS position feeds a linear
head with a sigmoid, producing a relevance score in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from reranklab import tensor as T
from reranklab.tensor import Tensor

__all__ = [
    "CLS_ID",
    "SEP_ID",
    "PAD_ID",
    "UNK_ID",
    "RESERVED_TOKENS",
    "Vocab",
    "TokenSequence",
    "CrossEncoderConfig",
    "CrossEncoder",
    "normalize_text",
    "tokenize_pair",
    "init_params",
    "score",
    "score_batch",
]

CLS_ID, SEP_ID, PAD_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("[CLS]", "[SEP]", "[PAD]", "[UNK]")


def normalize_text(text: str) -> list[str]:
    """Lowercase and split on whitespace."""
    return text.lower().split()


class Vocab:
    """Token to id map with fixed reserved ids 0..3 (CLS, SEP, PAD, UNK).

    Regular tokens get ids from 4 upward in the order given; ``build``
    assigns them lexicographically so construction is deterministic.
    """

    def __init__(self, tokens: Iterable[str]):
        self._tokens = list(tokens)
        self._ids: dict[str, int] = {}
        for i, tok in enumerate(self._tokens):
            if not tok or tok.split() != [tok]:
                raise ValueError(f"vocab token {tok!r} contains whitespace or is empty")
            if tok in self._ids or tok in RESERVED_TOKENS:
                raise ValueError(f"duplicate or reserved vocab token {tok!r}")
            self._ids[tok] = 4 + i

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        """Collect unique whitespace tokens from ``texts``, sorted."""
        seen = set()
        for text in texts:
            seen.update(normalize_text(text))
        seen.difference_update(RESERVED_TOKENS)
        return cls(sorted(seen))

    @property
    def size(self) -> int:
        return 4 + len(self._tokens)

    @property
    def tokens(self) -> list[str]:
        """Regular tokens in id order (ids 4..size)."""
        return list(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.id_of(tok) for tok in normalize_text(text)]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def __repr__(self):
        return f"Vocab(size={self.size})"


@dataclass
class TokenSequence:
    """Padded id sequence with its attention mask (1 real, 0 pad)."""

    ids: list[int]
    attention_mask: list[int]

    def __len__(self) -> int:
        return len(self.ids)


def tokenize_pair(vocab: Vocab, query: str, passage: str, max_len: int) -> TokenSequence:
    """Pack a query/passage pair as ``[CLS] q [SEP] d [SEP]`` padded to max_len.

    When the pair exceeds the budget, tokens are dropped from the tail of
    whichever side is currently longer (the passage on ties), so the
    passage is truncated before the query.
    """
    if max_len < 4:
        raise ValueError(f"max_len must be >= 4, got {max_len}")
    q = vocab.encode(query)
    p = vocab.encode(passage)
    budget = max_len - 3  # CLS + two SEPs
    while len(q) + len(p) > budget:
        if len(p) >= len(q):
            p.pop()
        else:
            q.pop()
    ids = [CLS_ID] + q + [SEP_ID] + p + [SEP_ID]
    mask = [1] * len(ids)
    while len(ids) < max_len:
        ids.append(PAD_ID)
        mask.append(0)
    return TokenSequence(ids=ids, attention_mask=mask)


@dataclass(frozen=True)
class CrossEncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 1
    n_heads: int = 2
    d_ff: int = 128
    max_len: int = 16
    seed: int = 12

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.max_len < 8:
            raise ValueError(f"max_len must be >= 8, got {self.max_len}")


class CrossEncoder:
    """Pre-norm transformer encoder with a sigmoid relevance head.

    Parameters live in an insertion-ordered name -> Tensor dict so they
    can be enumerated, checkpointed, and updated deterministically.
    """

    def __init__(self, config: CrossEncoderConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(config.seed)
        self._build(rng)

    # -- construction -------------------------------------------------

    def _param(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data, requires_grad=True)

    def _uniform(self, rng, shape, fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _build(self, rng) -> None:
        cfg = self.config
        d, dh = cfg.d_model, cfg.d_model // cfg.n_heads
        self._param("token_embedding", self._uniform(rng, (cfg.vocab_size, d), d))
        self._param("position_embedding", rng.uniform(-0.02, 0.02, size=(cfg.max_len, d)))
        for i in range(cfg.n_layers):
            pre = f"layers.{i}"
            self._param(f"{pre}.attn_norm.gain", np.ones(d))
            self._param(f"{pre}.attn_norm.bias", np.zeros(d))
            for h in range(cfg.n_heads):
                self._param(f"{pre}.attn.head{h}.w_query", self._uniform(rng, (d, dh), d))
                self._param(f"{pre}.attn.head{h}.w_key", self._uniform(rng, (d, dh), d))
                self._param(f"{pre}.attn.head{h}.w_value", self._uniform(rng, (d, dh), d))
                self._param(f"{pre}.attn.head{h}.w_out", self._uniform(rng, (dh, d), dh))
            self._param(f"{pre}.attn.out_bias", np.zeros(d))
            self._param(f"{pre}.ff_norm.gain", np.ones(d))
            self._param(f"{pre}.ff_norm.bias", np.zeros(d))
            self._param(f"{pre}.ff.w1", self._uniform(rng, (d, cfg.d_ff), d))
            self._param(f"{pre}.ff.b1", np.zeros(cfg.d_ff))
            self._param(f"{pre}.ff.w2", self._uniform(rng, (cfg.d_ff, d), cfg.d_ff))
            self._param(f"{pre}.ff.b2", np.zeros(d))
        self._param("head.weight", self._uniform(rng, (d, 1), d))
        self._param("head.bias", np.zeros(1))

    # -- introspection ------------------------------------------------

    def parameters(self):
        """Yield (name, tensor) pairs in deterministic construction order."""
        yield from self.params.items()

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    # -- forward ------------------------------------------------------

    def forward(self, seq: TokenSequence) -> Tensor:
        """Relevance score for one sequence as a 1x1 tensor.

        Records on the active tape, so it is the training-path entry
        point; use :func:`score` for plain float inference.
        """
        cfg = self.config
        if len(seq.ids) != cfg.max_len:
            raise ValueError(
                f"sequence length {len(seq.ids)} does not match max_len {cfg.max_len}"
            )
        P = self.params
        ids = np.asarray(seq.ids, dtype=np.intp)
        # Additive key mask: 0 on real tokens, -inf on padding.
        mask = np.where(np.asarray(seq.attention_mask) == 1, 0.0, -np.inf)
        mask_row = Tensor(mask)

        x = T.add(
            T.embedding_lookup(P["token_embedding"], ids),
            T.embedding_lookup(P["position_embedding"], np.arange(cfg.max_len)),
        )
        dh = cfg.d_model // cfg.n_heads
        scale = 1.0 / np.sqrt(dh)
        for i in range(cfg.n_layers):
            pre = f"layers.{i}"
            a = T.layer_norm(x, P[f"{pre}.attn_norm.gain"], P[f"{pre}.attn_norm.bias"])
            attn_out = None
            for h in range(cfg.n_heads):
                hp = f"{pre}.attn.head{h}"
                q = T.matmul(a, P[f"{hp}.w_query"])
                k = T.matmul(a, P[f"{hp}.w_key"])
                v = T.matmul(a, P[f"{hp}.w_value"])
                scores = T.add(T.mul(T.matmul(q, T.transpose(k)), scale), mask_row)
                weights = T.softmax(scores, axis=1)
                head_out = T.matmul(T.matmul(weights, v), P[f"{hp}.w_out"])
                attn_out = head_out if attn_out is None else T.add(attn_out, head_out)
            x = T.add(x, T.add(attn_out, P[f"{pre}.attn.out_bias"]))
            f = T.layer_norm(x, P[f"{pre}.ff_norm.gain"], P[f"{pre}.ff_norm.bias"])
            f = T.relu(T.add(T.matmul(f, P[f"{pre}.ff.w1"]), P[f"{pre}.ff.b1"]))
            f = T.add(T.matmul(f, P[f"{pre}.ff.w2"]), P[f"{pre}.ff.b2"])
            x = T.add(x, f)

        cls_state = T.embedding_lookup(x, np.array([0]))
        logit = T.add(T.matmul(cls_state, P["head.weight"]), P["head.bias"])
        return T.sigmoid(logit)


def init_params(config: CrossEncoderConfig) -> CrossEncoder:
    """Fresh model with seed-deterministic scaled-uniform weights."""
    return CrossEncoder(config)


def score(model: CrossEncoder, seq: TokenSequence) -> float:
    """Relevance score in (0, 1); pure and deterministic."""
    return model.forward(seq).item()


def score_batch(model: CrossEncoder, seqs: list[TokenSequence]) -> list[float]:
    """Scores in input order; equal to mapping :func:`score` over seqs."""
    return [score(model, s) for s in seqs]
