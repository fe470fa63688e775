"""Seeded, randomly initialized, frozen transformer standing in for a pre-trained LLM."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor, make_rng
from .kdtp import T_P_MAX

BYTE_VOCAB = 256
BOS, EOS, PAD, SEP = 256, 257, 258, 259
VOCAB_SIZE = BYTE_VOCAB + 4
INIT_STD = 0.02


@dataclass
class BackboneConfig:
    arch: str = "decoder_only"
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_seq: int = 256
    seed: int = 0

    def validate(self, t_p_max: int = T_P_MAX) -> None:
        if self.arch not in ("decoder_only", "encoder_only"):
            raise ValueError(f"unknown backbone arch {self.arch!r}")
        for name in ("layers", "heads", "d_model", "d_ff", "max_seq"):
            if getattr(self, name) < 1:
                raise ValueError(f"backbone {name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.max_seq <= t_p_max:
            raise ValueError(f"max_seq={self.max_seq} leaves no room for patches after "
                             f"{t_p_max} prompt tokens")

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_count(cfg: BackboneConfig) -> int:
    d, f = cfg.d_model, cfg.d_ff
    per_layer = (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (2 * d) + (d * f + f) + (f * d + d)
    return VOCAB_SIZE * d + cfg.max_seq * d + cfg.layers * per_layer + 2 * d


class Block(Module):
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        d, f = cfg.d_model, cfg.d_ff
        self.heads = cfg.heads
        self.ln1_g = Parameter(np.ones(d))
        self.ln1_b = Parameter(np.zeros(d))
        self.w_qkv = Parameter(rng.normal(0, INIT_STD, (d, 3 * d)))
        self.b_qkv = Parameter(np.zeros(3 * d))
        self.w_o = Parameter(rng.normal(0, INIT_STD, (d, d)))
        self.b_o = Parameter(np.zeros(d))
        self.ln2_g = Parameter(np.ones(d))
        self.ln2_b = Parameter(np.zeros(d))
        self.w_fc = Parameter(rng.normal(0, INIT_STD, (d, f)))
        self.b_fc = Parameter(np.zeros(f))
        self.w_proj = Parameter(rng.normal(0, INIT_STD, (f, d)))
        self.b_proj = Parameter(np.zeros(d))

    def attention(self, x: Tensor, mask: np.ndarray | None, past=None):
        """Multi-head self-attention; ``past`` holds constant (k, v) rows to prepend.

        Returns the attention output and this call's own (k, v) arrays.
        """
        *lead, t, d = x.shape
        h = self.heads
        dh = d // h
        qkv = ad.add(ad.matmul(x, self.w_qkv), self.b_qkv)
        qkv = ad.reshape(qkv, (*lead, t, 3, h, dh))
        nl = len(lead)
        # -> (3, *lead, h, t, dh)
        qkv = ad.transpose(qkv, (nl + 1, *range(nl), nl + 2, nl, nl + 3))
        q, k, v = qkv[0], qkv[1], qkv[2]
        own = (k.data, v.data)
        if past is not None:
            pk, pv = past
            k = ad.concat([np.broadcast_to(pk, (*lead, *pk.shape[-3:])), k], axis=-2)
            v = ad.concat([np.broadcast_to(pv, (*lead, *pv.shape[-3:])), v], axis=-2)
        scores = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = ad.add(scores, mask)
        att = ad.softmax(scores, axis=-1)
        y = ad.matmul(att, v)  # (*lead, h, t, dh)
        y = ad.transpose(y, (*range(nl), nl + 1, nl, nl + 2))
        y = ad.reshape(y, (*lead, t, d))
        return ad.add(ad.matmul(y, self.w_o), self.b_o), own

    def forward(self, x: Tensor, mask: np.ndarray | None, past=None):
        a, own = self.attention(ad.layer_norm(x, self.ln1_g, self.ln1_b), mask, past)
        x = ad.add(x, a)
        hdn = ad.gelu(ad.add(ad.matmul(ad.layer_norm(x, self.ln2_g, self.ln2_b), self.w_fc), self.b_fc))
        return ad.add(x, ad.add(ad.matmul(hdn, self.w_proj), self.b_proj)), own


def causal_mask(t: int, offset: int = 0) -> np.ndarray:
    """(t, offset + t) additive mask: query i sees every key j <= offset + i."""
    m = np.zeros((t, offset + t))
    m[np.triu_indices(t, k=offset + 1, m=offset + t)] = -np.inf
    return m


@dataclass
class PrefixCache:
    """Per-layer keys/values of a constant prompt prefix (decoder-only)."""

    length: int
    past: list  # [(k, v)] with arrays shaped (heads, length, d_head)


class FrozenBackbone(Module):
    def __init__(self, cfg: BackboneConfig):
        cfg.validate()
        self.cfg = cfg
        rng = make_rng(cfg.seed, 1)
        d = cfg.d_model
        self.token_embedding = Parameter(rng.normal(0, INIT_STD, (VOCAB_SIZE, d)))
        self.position_embedding = Parameter(rng.normal(0, INIT_STD, (cfg.max_seq, d)))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.layers)]
        self.lnf_g = Parameter(np.ones(d))
        self.lnf_b = Parameter(np.zeros(d))
        self.freeze()
        self.assign_names()

    @property
    def causal(self) -> bool:
        return self.cfg.arch == "decoder_only"

    def embed_prompt_text(self, prompt, t_p_max: int = T_P_MAX) -> Tensor:
        """Byte-tokenize the prompt text and look the bytes up in the frozen table."""
        return ad.embedding(self.token_embedding, encode_prompt(prompt, t_p_max))

    def forward_with_prefix(self, prompt_tokens: Tensor | None, fused: Tensor) -> Tensor:
        """Run ``[prompt rows || fused rows]`` through every block.

        ``fused`` may carry leading batch axes; the prompt rows (T_p, d) are
        shared across the batch.
        """
        fused = ad.as_tensor(fused)
        *lead, n, d = fused.shape
        t_p = 0 if prompt_tokens is None else prompt_tokens.shape[0]
        total = t_p + n
        if total > self.cfg.max_seq:
            raise ValueError(f"sequence of {total} tokens ({t_p} prompt + {n} patches) "
                             f"exceeds max_seq={self.cfg.max_seq}")
        x = fused
        if t_p:
            prefix = ad.broadcast_to(prompt_tokens, (*lead, t_p, d))
            x = ad.concat([prefix, fused], axis=-2)
        x = ad.add(x, self.position_embedding[:total])
        mask = causal_mask(total) if self.causal else None
        for block in self.blocks:
            x, _ = block(x, mask)
        return ad.layer_norm(x, self.lnf_g, self.lnf_b)

    def build_prefix_cache(self, prompt_tokens: Tensor) -> PrefixCache:
        """Run the prefix alone and keep every layer's keys and values.

        Only valid for the causal variant, where prefix states never depend
        on the tokens that follow.
        """
        if not self.causal:
            raise ValueError("prefix caching requires the decoder_only variant")
        t_p = prompt_tokens.shape[0]
        x = ad.add(Tensor(prompt_tokens.data), self.position_embedding.data[:t_p])
        mask = causal_mask(t_p)
        past = []
        for block in self.blocks:
            x, kv = block(x, mask)
            past.append(kv)
        return PrefixCache(t_p, past)

    def forward_cached(self, cache: PrefixCache, fused: Tensor) -> Tensor:
        """Hidden states of the patch rows only, attending to the cached prefix.

        Equals ``strip_prefix(forward_with_prefix(prompt, fused), T_p)`` up to
        floating-point summation order.
        """
        fused = ad.as_tensor(fused)
        n = fused.shape[-2]
        t_p = cache.length
        if t_p + n > self.cfg.max_seq:
            raise ValueError(f"sequence of {t_p + n} tokens ({t_p} prompt + {n} patches) "
                             f"exceeds max_seq={self.cfg.max_seq}")
        x = ad.add(fused, self.position_embedding[t_p:t_p + n])
        mask = causal_mask(n, offset=t_p)
        for block, past in zip(self.blocks, cache.past):
            x, _ = block(x, mask, past)
        return ad.layer_norm(x, self.lnf_g, self.lnf_b)

    forward = forward_with_prefix


def init_frozen_backbone(cfg: BackboneConfig) -> FrozenBackbone:
    return FrozenBackbone(cfg)


def encode_prompt(prompt, t_p_max: int = T_P_MAX) -> np.ndarray:
    """UTF-8 bytes of the prompt text, truncated to ``t_p_max`` ids.

    Special ids (BOS/EOS/PAD/SEP) exist in the vocabulary but are not
    inserted into the prompt matrix.
    """
    text = prompt if isinstance(prompt, str) else prompt.text
    ids = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    if ids.size == 0:
        raise ValueError("prompt text is empty")
    return ids[:t_p_max]


def strip_prefix(hidden: Tensor, t_p: int) -> Tensor:
    """Drop the first ``t_p`` rows (axis -2), keeping the patch outputs."""
    rows = hidden.shape[-2]
    if t_p >= rows:
        raise ValueError(f"prefix length {t_p} leaves no rows out of {rows}")
    if t_p == 0:
        return hidden
    return hidden[..., t_p:, :]


class TokenMLP(Module):
    """Trainable per-token two-layer network replacing the backbone in the no-LLM ablation."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = ad.Linear(d_model, d_ff, rng)
        self.fc2 = ad.Linear(d_ff, d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(x, self.fc2(ad.gelu(self.fc1(x))))
