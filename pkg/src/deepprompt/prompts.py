"""Trainable continuous prompts: shallow input prompts and deep per-layer prefixes."""
from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn as nn

from .backbone import ModelConfig, PrefixLayer
from .errors import ConfigError, ModeError

MODES = ("shallow", "deep")
REPARAMS = ("none", "mlp", "lstm")
PLACEMENTS = ("before_input", "after_input")
INIT_STD = 0.02


@dataclass(frozen=True)
class PromptConfig:
    mode: str = "deep"
    prompt_length: int = 8
    layer_set: Optional[tuple] = None  # deep mode; None means every layer
    reparam: str = "none"
    reparam_hidden: Optional[int] = None  # None means hidden_size
    placement: str = "after_input"
    seed: int = 0

    def __post_init__(self):
        if self.layer_set is not None:
            object.__setattr__(self, "layer_set", tuple(int(i) for i in self.layer_set))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reparam not in REPARAMS:
            raise ConfigError(f"reparam must be one of {REPARAMS}, got {self.reparam!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if not isinstance(self.prompt_length, int) or self.prompt_length <= 0:
            raise ConfigError(f"prompt_length must be a positive integer, got {self.prompt_length!r}")
        if self.reparam_hidden is not None and self.reparam_hidden <= 0:
            raise ConfigError("reparam_hidden must be positive")

    def layers(self, model: ModelConfig) -> tuple:
        """Resolved, validated layer set (empty for shallow mode)."""
        if self.mode == "shallow":
            return ()
        layers = tuple(range(model.num_layers)) if self.layer_set is None else self.layer_set
        if not layers:
            raise ConfigError("deep mode needs a non-empty layer_set")
        if len(set(layers)) != len(layers):
            raise ConfigError(f"layer_set has duplicates: {layers}")
        bad = [i for i in layers if not 0 <= i < model.num_layers]
        if bad:
            raise ConfigError(f"layer_set entries {bad} outside [0, {model.num_layers})")
        return layers

    def validate(self, model: ModelConfig):
        self.layers(model)

    def bottleneck(self, model: ModelConfig) -> int:
        return self.reparam_hidden or model.hidden_size

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layer_set"] = None if self.layer_set is None else list(self.layer_set)
        return d

    @classmethod
    def from_dict(cls, data) -> "PromptConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown PromptConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PromptConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "PromptConfig":
        return dataclasses.replace(self, **changes)


class MLPWeights(NamedTuple):
    w1: torch.Tensor  # [d_hidden, d_in]
    b1: torch.Tensor
    w2: torch.Tensor  # [d_out, d_hidden]
    b2: torch.Tensor


def reparam_mlp(x: torch.Tensor, weights: MLPWeights) -> torch.Tensor:
    """linear -> tanh -> linear, applied row-wise to ``x`` of shape [L, d_in]."""
    w1, b1, w2, b2 = weights
    if x.shape[-1] != w1.shape[1] or w2.shape[1] != w1.shape[0] or b1.shape != w1.shape[:1] or b2.shape != w2.shape[:1]:
        raise ConfigError(
            f"MLP shapes inconsistent: x {tuple(x.shape)}, w1 {tuple(w1.shape)}, b1 {tuple(b1.shape)}, "
            f"w2 {tuple(w2.shape)}, b2 {tuple(b2.shape)}"
        )
    return torch.tanh(x @ w1.T + b1) @ w2.T + b2


class MLPReparam(nn.Module):
    def __init__(self, d_in, d_hidden, d_out):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_out)

    def weights(self) -> MLPWeights:
        return MLPWeights(self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)

    def forward(self, x):
        return reparam_mlp(x, self.weights())


class LSTMReparam(nn.Module):
    """Bidirectional LSTM over prompt positions followed by a linear projection."""

    def __init__(self, d_in, d_hidden, d_out):
        super().__init__()
        self.lstm = nn.LSTM(d_in, d_hidden, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(2 * d_hidden, d_out)

    def forward(self, x):
        return reparam_lstm(x, self)


def reparam_lstm(x: torch.Tensor, encoder: LSTMReparam) -> torch.Tensor:
    if x.dim() != 2 or x.shape[-1] != encoder.lstm.input_size:
        raise ConfigError(f"LSTM reparam expects [L, {encoder.lstm.input_size}], got {tuple(x.shape)}")
    out, _ = encoder.lstm(x.unsqueeze(0))
    return encoder.proj(out.squeeze(0))


def _lstm_count(d_in, d_hidden):
    per_direction = 4 * d_hidden * (d_in + d_hidden) + 8 * d_hidden
    return 2 * per_direction


def prompt_param_count(config: PromptConfig, model: ModelConfig) -> int:
    """Closed-form trainable scalar count of the prompt parameters."""
    L, h = config.prompt_length, model.hidden_size
    rh = config.bottleneck(model)
    if config.mode == "shallow":
        out = h
    else:
        out = len(config.layers(model)) * 2 * h
        if config.reparam == "none":
            return L * out
    count = L * h
    if config.reparam == "mlp":
        count += (h * rh + rh) + (rh * out + out)
    elif config.reparam == "lstm":
        count += _lstm_count(h, rh) + (2 * rh * out + out)
    return count


class PrefixCache(Mapping):
    """Per-layer prefix keys/values ``[L, heads, head_dim]`` keyed by layer index.

    Entry ``i`` of the flat projection belongs to ``layer_set[i]``.
    """

    def __init__(self, layer_set: Sequence[int], keys: Sequence[torch.Tensor], values: Sequence[torch.Tensor]):
        self.layer_set = tuple(layer_set)
        self._layers = {i: PrefixLayer(k, v) for i, k, v in zip(self.layer_set, keys, values)}

    def __getitem__(self, layer):
        return self._layers[layer]

    def __iter__(self):
        return iter(self.layer_set)

    def __len__(self):
        return len(self.layer_set)

    def ordered(self):
        return [self._layers[i] for i in self.layer_set]

    def num_scalars(self) -> int:
        return sum(p.keys.numel() + p.values.numel() for p in self._layers.values())


class PromptEncoder(nn.Module):
    """Raw prompt embeddings plus the optional reparameterisation encoder.

    Shallow mode owns ``[L, hidden]`` virtual token embeddings. In deep mode
    with ``reparam="none"`` the raw embeddings are the flat prefix itself,
    ``[L, |layer_set| * 2 * hidden]``; with an encoder they are ``[L, hidden]``
    and one shared encoder maps them to every layer's key/value slice.
    """

    def __init__(self, config: PromptConfig, model: ModelConfig):
        super().__init__()
        self.config = config
        self.model_config = model
        self.layer_set = config.layers(model)
        h = model.hidden_size
        rh = config.bottleneck(model)
        out = h if config.mode == "shallow" else len(self.layer_set) * 2 * h
        raw_dim = out if (config.mode == "deep" and config.reparam == "none") else h

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            if config.reparam == "mlp":
                self.reparam = MLPReparam(h, rh, out)
            elif config.reparam == "lstm":
                self.reparam = LSTMReparam(h, rh, out)
            else:
                self.reparam = None
        gen = torch.Generator().manual_seed(config.seed)
        self.raw_embeddings = nn.Parameter(torch.randn(config.prompt_length, raw_dim, generator=gen) * INIT_STD)
        if self.reparam is not None:
            with torch.no_grad():
                for module in self.reparam.modules():
                    if isinstance(module, nn.Linear):
                        module.bias.zero_()

    @property
    def prompt_length(self) -> int:
        return self.config.prompt_length

    def transformed(self) -> torch.Tensor:
        if self.reparam is None:
            return self.raw_embeddings
        return self.reparam(self.raw_embeddings)

    def encode_shallow(self) -> torch.Tensor:
        if self.config.mode != "shallow":
            raise ModeError("encode_shallow called on a deep-mode prompt")
        return self.transformed()

    def encode_deep(self) -> PrefixCache:
        if self.config.mode != "deep":
            raise ModeError("encode_deep called on a shallow-mode prompt")
        m = self.model_config
        flat = self.transformed()
        n = len(self.layer_set)
        grid = flat.reshape(self.prompt_length, n, 2, m.num_heads, m.head_dim)
        return PrefixCache(self.layer_set, [grid[:, i, 0] for i in range(n)], [grid[:, i, 1] for i in range(n)])

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


PromptParams = PromptEncoder


def init_prompts(config: PromptConfig, model: ModelConfig) -> PromptEncoder:
    return PromptEncoder(config, model)


def encode_shallow(params: PromptEncoder, config: Optional[PromptConfig] = None) -> torch.Tensor:
    if config is not None and config.mode != "shallow":
        raise ModeError("encode_shallow needs a shallow-mode config")
    return params.encode_shallow()


def encode_deep(params: PromptEncoder, config: Optional[PromptConfig] = None,
                model: Optional[ModelConfig] = None) -> PrefixCache:
    if config is not None and config.mode != "deep":
        raise ModeError("encode_deep needs a deep-mode config")
    return params.encode_deep()


def insertion_positions(token_ids, attention_mask, placement, mask_token_id) -> torch.Tensor:
    """Per-row index at which shallow prompts are spliced in.

    ``before_input`` puts them right after the leading [CLS]; ``after_input``
    puts them just before the first [MASK] or, lacking one, after the last
    non-padding token.
    """
    b, s = token_ids.shape
    if placement == "before_input":
        return torch.ones(b, dtype=torch.long)
    lengths = attention_mask.to(torch.long).sum(dim=1)
    is_mask = token_ids == mask_token_id
    first_mask = torch.where(is_mask.any(dim=1), is_mask.to(torch.long).argmax(dim=1), lengths)
    return first_mask


def splice_prompts(embeddings, attention_mask, prompts, positions):
    """Insert ``prompts`` [L, H] into every row of ``embeddings`` [B, S, H].

    Returns the extended embeddings ``[B, S+L, H]``, the extended mask, and a
    ``[B, S]`` index giving where each original token ended up.
    """
    b, s, h = embeddings.shape
    L = prompts.shape[0]
    combined = torch.cat([embeddings, prompts.to(embeddings.dtype).unsqueeze(0).expand(b, -1, -1)], dim=1)
    j = torch.arange(s + L).unsqueeze(0)
    p = positions.unsqueeze(1)
    source = torch.where(j < p, j, torch.where(j < p + L, s + (j - p), j - L))
    spliced = torch.gather(combined, 1, source.unsqueeze(-1).expand(-1, -1, h))
    full_mask = torch.cat([attention_mask.to(torch.long), torch.ones(b, L, dtype=torch.long)], dim=1)
    spliced_mask = torch.gather(full_mask, 1, source)
    t = torch.arange(s).unsqueeze(0)
    token_index = torch.where(t < p, t, t + L)
    return spliced, spliced_mask, token_index
