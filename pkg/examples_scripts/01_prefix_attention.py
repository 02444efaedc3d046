# %% [markdown]
# # Prefix attention over a frozen encoder
#
# A deep prompt is a set of extra key/value rows that every sequence position
# can attend to. The backbone itself never changes. This walkthrough builds a
# small frozen encoder, feeds it prefixes by hand, and checks two properties:
# the prefix changes the output, and backbone weights cannot receive gradients.

# %%
import torch

from deepprompt.backbone import (AttentionInputs, FrozenBackbone, ModelConfig, PrefixLayer, attention_with_prefix,
                                 count_backbone_parameters)

config = ModelConfig(num_layers=2, hidden_size=16, num_heads=2, ffn_size=32, vocab_size=50, max_positions=32)
backbone = FrozenBackbone(config, seed=0, init_std=0.1)
print("backbone parameters:", count_backbone_parameters(config))
print("any trainable?", any(p.requires_grad for p in backbone.parameters()))

# %% [markdown]
# One attention layer, with and without a two-slot prefix. The mask hides the
# last token of the second sequence; prefix slots are always visible.

# %%
torch.manual_seed(0)
hidden = torch.randn(2, 5, config.hidden_size)
mask = torch.tensor([[1, 1, 1, 1, 1], [1, 1, 1, 1, 0]])
layer = backbone.layers[0]
keys = torch.randn(2, 2, config.num_heads, config.head_dim)
values = torch.randn(2, 2, config.num_heads, config.head_dim)

plain = attention_with_prefix(AttentionInputs(hidden, mask), layer)
prefixed, probs = attention_with_prefix(AttentionInputs(hidden, mask, PrefixLayer(keys, values)), layer,
                                        return_probs=True)
print("output shape:", tuple(prefixed.shape))
print("max change from the prefix:", float((prefixed - plain).abs().max()))
print("attention mass on prefix slots per head, first query:", probs[0, :, 0, :2].sum(-1).tolist())

# %% [markdown]
# A full forward pass with a prefix at every layer. Prefixes shaped
# ``[length, heads, head_dim]`` are shared across the batch. Gradients flow to
# the prefix tensors and only to them.

# %%
ids = torch.tensor([[2, 7, 8, 9, 3]])
prefix = {i: PrefixLayer(torch.randn(2, 2, 8, requires_grad=True), torch.randn(2, 2, 8, requires_grad=True))
          for i in range(config.num_layers)}
sequence, pooled = backbone(ids, torch.ones_like(ids), prefix_provider=prefix)
pooled[0, 0].backward()  # a plain sum would cancel through the final layer norm
print("prefix grad norm, layer 0 keys:", float(prefix[0].keys.grad.norm()))
print("backbone grads:", [n for n, p in backbone.named_parameters() if p.grad is not None])
