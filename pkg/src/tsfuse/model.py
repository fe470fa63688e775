"""Full pipeline: patch embedding -> FATM -> frozen backbone -> enhancement head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Linear, Module, Tensor, make_rng
from .backbone import (FrozenBackbone, INIT_STD, TokenMLP, VOCAB_SIZE, encode_prompt,
                       strip_prefix)
from .fatm import FATM
from .heads import EnhancementHead
from .series import segment_array, unpatch

ABLATIONS = ("no_fatm", "no_kdtp", "no_llm")


@dataclass
class ModelOutput:
    pred: Tensor  # (B, n, P): next patch (forecasting/anomaly) or reconstruction (imputation)
    prompt_rows: Tensor | None  # P^r, (n, d) shared across the batch
    fused: Tensor  # F, (B, n, d)


def fixed_token_table(seed: int, d_model: int) -> np.ndarray:
    """The backbone's byte embedding table drawn from the same seeded stream."""
    return make_rng(seed, 1).normal(0, INIT_STD, (VOCAB_SIZE, d_model))


class PromptFusionModel(Module):
    """Trainable adapters around a frozen transformer.

    ``cfg`` is an ExperimentConfig; ``prompt_text`` may be empty, in which
    case the prompt path is disabled entirely.
    """

    def __init__(self, cfg, prompt_text: str = ""):
        self.cfg = cfg
        bcfg = cfg.backbone
        bcfg.validate()
        d = bcfg.d_model
        unknown = set(cfg.ablation) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flag(s) {sorted(unknown)}; expected {ABLATIONS}")
        self.ablation = frozenset(cfg.ablation)
        self.prompt_text = prompt_text
        rng = make_rng(cfg.seed, 2)

        self.patch_embed = Linear(cfg.patch_len, d, rng)
        self.fatm = None if "no_fatm" in self.ablation else FATM(d, cfg.kernel_sizes, rng)
        if "no_llm" in self.ablation:
            self.backbone = None
            self.token_mlp = TokenMLP(d, bcfg.d_ff, rng)
            self._table = fixed_token_table(bcfg.seed, d)
        else:
            self.backbone = FrozenBackbone(bcfg)
            self.token_mlp = None
            self._table = None
        self.head = EnhancementHead(d, cfg.patch_len, rng)
        self._prompt_ids = encode_prompt(prompt_text) if prompt_text else None
        self.use_prefix_cache = True
        self._cache = None
        self.assign_names()

    # -- prompt -----------------------------------------------------------
    @property
    def t_p(self) -> int:
        return 0 if self._prompt_ids is None else int(self._prompt_ids.size)

    def prompt_embedding(self) -> Tensor | None:
        if self._prompt_ids is None:
            return None
        if self.backbone is not None:
            return ad.embedding(self.backbone.token_embedding, self._prompt_ids)
        return Tensor(self._table[self._prompt_ids])

    @property
    def prefix_len(self) -> int:
        if self.backbone is None or self._prompt_ids is None:
            return 0
        return self.t_p + (1 if self.fatm is None else 0)

    # -- forward ----------------------------------------------------------
    def forward(self, patches) -> ModelOutput:
        """``patches`` has shape (B, n, patch_len) in normalized units."""
        x = ad.as_tensor(patches)
        E = self.patch_embed(x)
        P = self.prompt_embedding()
        prompt_rows = None
        prefix = P
        if self.fatm is not None:
            F, prompt_rows = self.fatm(E, P)
        else:
            F = E
            if P is not None:
                prefix = ad.concat([P, ad.mean(P, axis=0, keepdims=True)], axis=0)
        if self.backbone is not None and prefix is not None and self.use_prefix_cache \
                and self.backbone.causal:
            if self._cache is None:
                self._cache = self.backbone.build_prefix_cache(prefix)
            H = self.backbone.forward_cached(self._cache, F)
        elif self.backbone is not None:
            H = self.backbone.forward_with_prefix(prefix, F)
            H = strip_prefix(H, 0 if prefix is None else prefix.shape[0])
        else:
            H = self.token_mlp(F)
        return ModelOutput(self.head(H), prompt_rows, F)

    # -- inference helpers ----------------------------------------------
    def patches(self, values: np.ndarray) -> np.ndarray:
        """(..., L) -> (B, n, P) flattening every leading axis into the batch."""
        p = segment_array(values, self.cfg.patch_len, self.cfg.stride)
        return p.reshape(-1, *p.shape[-2:])

    def predict_next(self, window: np.ndarray) -> np.ndarray:
        """Next ``patch_len`` normalized values after each window (..., L)."""
        window = np.asarray(window, dtype=np.float64)
        out = self.forward(self.patches(window)).pred.data[:, -1, :]
        return out.reshape(*window.shape[:-1], self.cfg.patch_len)

    def reconstruct(self, masked: np.ndarray) -> np.ndarray:
        """Full reconstruction of masked windows (..., L) with L a multiple of the stride layout."""
        masked = np.asarray(masked, dtype=np.float64)
        pred = self.forward(self.patches(masked)).pred.data
        rec = unpatch(pred, self.cfg.stride)
        out = np.array(masked, copy=True)
        out[..., :rec.shape[-1]] = rec.reshape(*masked.shape[:-1], rec.shape[-1])
        return out

    def reset_cache(self) -> None:
        self._cache = None

    # -- bookkeeping ------------------------------------------------------
    def backbone_parameters(self):
        return [] if self.backbone is None else self.backbone.parameters()

    def backbone_checksum(self) -> str | None:
        return None if self.backbone is None else self.backbone.checksum()

    def param_counts(self) -> tuple[int, int]:
        total = self.num_parameters()
        return self.num_parameters(trainable_only=True), total
