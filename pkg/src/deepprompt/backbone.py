"""Bidirectional post-LN transformer encoder with per-layer prefix key/value slots.

The encoder is deliberately small and dependency-light: every layer is built
from ``nn.Linear`` / ``nn.LayerNorm`` and the attention is written out by hand
so prefix keys and values can be concatenated in front of the sequence keys.
All weights are frozen on construction.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple, Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, InputError, LengthError


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    hidden_size: int = 32
    num_heads: int = 4
    ffn_size: int = 64
    vocab_size: int = 128
    max_positions: int = 64
    layer_norm_eps: float = 1e-12
    dropout_rate: float = 0.0
    pad_token_id: int = 0
    cls_token_id: int = 2
    sep_token_id: int = 3
    mask_token_id: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("num_layers", "hidden_size", "num_heads", "ffn_size", "vocab_size", "max_positions"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if not self.layer_norm_eps > 0:
            raise ConfigError("layer_norm_eps must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        specials = self.special_ids
        if len(set(specials.values())) != len(specials):
            raise ConfigError(f"special token ids must be distinct: {specials}")
        for name, idx in specials.items():
            if not 0 <= idx < self.vocab_size:
                raise ConfigError(f"{name}={idx} outside vocabulary of size {self.vocab_size}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def special_ids(self) -> dict:
        return {
            "pad_token_id": self.pad_token_id,
            "cls_token_id": self.cls_token_id,
            "sep_token_id": self.sep_token_id,
            "mask_token_id": self.mask_token_id,
        }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


class PrefixLayer(NamedTuple):
    """Prefix keys/values of one layer, shaped ``[batch, prefix_len, heads, head_dim]``."""

    keys: torch.Tensor
    values: torch.Tensor

    @property
    def prefix_len(self) -> int:
        return self.keys.shape[-3]


@dataclass
class AttentionInputs:
    hidden_states: torch.Tensor
    attention_mask: Optional[torch.Tensor] = None
    prefix: Optional[PrefixLayer] = None


PrefixProvider = Union[Mapping[int, PrefixLayer], Callable[[int], Optional[PrefixLayer]]]


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        h = config.hidden_size
        self.num_heads = config.num_heads
        self.head_dim = config.head_dim
        self.query = nn.Linear(h, h)
        self.key = nn.Linear(h, h)
        self.value = nn.Linear(h, h)
        self.attn_out = nn.Linear(h, h)
        self.attn_norm = nn.LayerNorm(h, eps=config.layer_norm_eps)
        self.ffn_in = nn.Linear(h, config.ffn_size)
        self.ffn_out = nn.Linear(config.ffn_size, h)
        self.ffn_norm = nn.LayerNorm(h, eps=config.layer_norm_eps)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, hidden, attention_mask=None, prefix: Optional[PrefixLayer] = None):
        p = self.dropout.p if self.training else 0.0
        if prefix is not None and p > 0:
            prefix = PrefixLayer(self.dropout(prefix.keys), self.dropout(prefix.values))
        attn = attention_with_prefix(AttentionInputs(hidden, attention_mask, prefix), self, dropout_p=p)
        hidden = self.attn_norm(hidden + self.dropout(attn))
        ff = self.ffn_out(F.gelu(self.ffn_in(hidden)))
        return self.ffn_norm(hidden + self.dropout(ff))


def _split_heads(x, num_heads):
    b, s, h = x.shape
    return x.view(b, s, num_heads, h // num_heads)


def attention_with_prefix(inputs: AttentionInputs, layer: EncoderLayer, dropout_p: float = 0.0,
                          return_probs: bool = False):
    """Multi-head self-attention whose keys/values are ``[prefix ; sequence]``.

    Queries come from the sequence only, so the output keeps the input
    length. Prefix slots are always attendable; padded sequence keys are not.
    With ``return_probs`` the attention weights ``[batch, heads, seq, prefix+seq]``
    are returned as a second value.
    """
    hidden = inputs.hidden_states
    b, s, _ = hidden.shape
    nh, hd = layer.num_heads, layer.head_dim

    q = _split_heads(layer.query(hidden), nh)
    k = _split_heads(layer.key(hidden), nh)
    v = _split_heads(layer.value(hidden), nh)

    if inputs.attention_mask is None:
        key_mask = torch.ones(b, s, dtype=torch.bool, device=hidden.device)
    else:
        key_mask = inputs.attention_mask.to(torch.bool)

    prefix = inputs.prefix
    if prefix is not None:
        pk, pv = prefix.keys, prefix.values
        if pk.dim() != 4 or pk.shape != pv.shape or pk.shape[2:] != (nh, hd) or pk.shape[0] not in (1, b):
            raise ConfigError(
                f"prefix keys {tuple(pk.shape)} / values {tuple(pv.shape)} do not match "
                f"[batch={b}, prefix_len, heads={nh}, head_dim={hd}]"
            )
        if pk.shape[1] > 0:
            pk = pk.expand(b, -1, -1, -1).to(k.dtype)
            pv = pv.expand(b, -1, -1, -1).to(v.dtype)
            k = torch.cat([pk, k], dim=1)
            v = torch.cat([pv, v], dim=1)
            prefix_mask = torch.ones(b, pk.shape[1], dtype=torch.bool, device=hidden.device)
            key_mask = torch.cat([prefix_mask, key_mask], dim=1)

    # [b, heads, s, prefix+s]
    scores = torch.einsum("bqhd,bkhd->bhqk", q, k) / math.sqrt(hd)
    scores = scores.masked_fill(~key_mask[:, None, None, :], torch.finfo(scores.dtype).min)
    probs = torch.softmax(scores, dim=-1)
    if dropout_p > 0:
        probs = F.dropout(probs, p=dropout_p, training=True)
    context = torch.einsum("bhqk,bkhd->bqhd", probs, v).reshape(b, s, nh * hd)
    out = layer.attn_out(context)
    if return_probs:
        return out, probs
    return out


class FrozenBackbone(nn.Module):
    """Randomly initialised encoder whose weights never receive gradients.

    Token and position embeddings are summed and layer-normalised (BERT style);
    the stack is post-LN with GELU feed-forward blocks. Post-LN leaves every
    layer output normalised, so there is no separate final norm.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, init_std: float = 0.02):
        super().__init__()
        config.validate()
        self.config = config
        self.seed = seed
        self.init_std = init_std
        h = config.hidden_size
        self.token_embeddings = nn.Embedding(config.vocab_size, h)
        self.position_embeddings = nn.Embedding(config.max_positions, h)
        self.embed_norm = nn.LayerNorm(h, eps=config.layer_norm_eps)
        self.embed_dropout = nn.Dropout(config.dropout_rate)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.num_layers))
        self._init_weights(seed, init_std)
        self.requires_grad_(False)
        self.frozen = True

    def _init_weights(self, seed, std):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("norm.weight"):
                    param.fill_(1.0)
                elif name.endswith("bias"):
                    param.zero_()
                else:
                    param.copy_(torch.randn(param.shape, generator=gen) * std)

    def requires_grad_(self, requires_grad: bool = True):
        if requires_grad and getattr(self, "frozen", False):
            raise ConfigError("backbone is frozen; its weights cannot be made trainable")
        return super().requires_grad_(requires_grad)

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    def set_dropout(self, rate: float):
        for module in self.modules():
            if isinstance(module, nn.Dropout):
                module.p = rate

    def _check_ids(self, token_ids):
        if token_ids.dim() != 2:
            raise InputError(f"token_ids must be [batch, seq_len], got shape {tuple(token_ids.shape)}")
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size):
            raise InputError(f"token ids must lie in [0, {self.config.vocab_size})")
        if token_ids.shape[1] > self.config.max_positions:
            raise LengthError(f"seq_len {token_ids.shape[1]} exceeds max_positions {self.config.max_positions}")

    def embed(self, token_ids: torch.Tensor, position_ids: Optional[torch.Tensor] = None,
              normalize: bool = True) -> torch.Tensor:
        """Token + position embedding, optionally followed by the embedding norm."""
        self._check_ids(token_ids)
        if position_ids is None:
            position_ids = torch.arange(token_ids.shape[1], device=token_ids.device).expand_as(token_ids)
        out = self.token_embeddings(token_ids) + self.position_embeddings(position_ids)
        if normalize:
            out = self.embed_dropout(self.embed_norm(out))
        return out

    def _resolve_prefixes(self, provider, layer_set):
        if provider is None:
            if layer_set:
                raise ConfigError(f"layer_set {sorted(layer_set)} given but no prefix provider")
            return [None] * self.num_layers
        if isinstance(provider, Mapping):
            extra = [i for i in provider if not 0 <= i < self.num_layers]
            if extra:
                raise ConfigError(f"prefix supplied for layers {extra} outside [0, {self.num_layers})")
            got = [provider.get(i) for i in range(self.num_layers)]
        else:
            got = [provider(i) for i in range(self.num_layers)]
        if layer_set is None:
            layer_set = getattr(provider, "layer_set", None)
        if layer_set is not None:
            allowed = set(layer_set)
            for i, prefix in enumerate(got):
                if prefix is not None and i not in allowed:
                    raise ConfigError(f"prefix supplied for layer {i} outside layer_set {sorted(allowed)}")
                if prefix is None and i in allowed:
                    raise ConfigError(f"layer {i} is in layer_set but received no prefix")
        return got

    def forward_embeddings(self, embeddings, attention_mask=None, prefix_provider: Optional[PrefixProvider] = None,
                           layer_set=None):
        """Run the encoder stack on precomputed input embeddings.

        Returns ``(sequence_output, pooled)`` where ``pooled`` is the first-token
        hidden state.
        """
        prefixes = self._resolve_prefixes(prefix_provider, layer_set)
        b = embeddings.shape[0]
        hidden = embeddings
        for layer, prefix in zip(self.layers, prefixes):
            if prefix is not None and prefix.keys.dim() == 3:
                prefix = PrefixLayer(prefix.keys.unsqueeze(0).expand(b, -1, -1, -1),
                                     prefix.values.unsqueeze(0).expand(b, -1, -1, -1))
            hidden = layer(hidden, attention_mask, prefix)
        return hidden, hidden[:, 0]

    def forward(self, token_ids, attention_mask=None, prefix_provider: Optional[PrefixProvider] = None,
                layer_set=None):
        return self.forward_embeddings(self.embed(token_ids), attention_mask, prefix_provider, layer_set)

    def weight_snapshot(self) -> dict:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()[:16]

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def count_backbone_parameters(config: ModelConfig) -> int:
    """Closed-form scalar count of :class:`FrozenBackbone` for ``config``."""
    h, f = config.hidden_size, config.ffn_size
    embeddings = (config.vocab_size + config.max_positions) * h + 2 * h
    per_layer = 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h
    return embeddings + config.num_layers * per_layer
