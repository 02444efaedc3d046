# %% [markdown]
# # Shallow, deep and reparameterised prompts
#
# Prompt parameters come in two placements. Shallow prompts are virtual input
# tokens. Deep prompts are per-layer key/value prefixes. Either can be passed
# through a trainable encoder (an MLP or an LSTM) first. Here we look at the
# shapes each choice produces and what it costs in parameters.

# %%
from deepprompt.backbone import ModelConfig
from deepprompt.prompts import PromptConfig, init_prompts, prompt_param_count
from deepprompt.training import prompt_census

toy = ModelConfig(num_layers=4, hidden_size=16, num_heads=2, ffn_size=32, vocab_size=50)

for cfg in [PromptConfig(mode="shallow", prompt_length=4),
            PromptConfig(mode="deep", prompt_length=4),
            PromptConfig(mode="deep", prompt_length=4, reparam="mlp"),
            PromptConfig(mode="deep", prompt_length=4, layer_set=(2, 3), reparam="lstm")]:
    prompts = init_prompts(cfg, toy)
    if cfg.mode == "shallow":
        shape = tuple(prompts.encode_shallow().shape)
    else:
        cache = prompts.encode_deep()
        shape = {i: tuple(cache[i].keys.shape) for i in cache}
    print(f"{cfg.mode:7s} reparam={cfg.reparam:4s} raw={tuple(prompts.raw_embeddings.shape)} "
          f"params={prompts.num_parameters():6d} -> {shape}")

# %% [markdown]
# The closed-form count agrees with what the modules hold.

# %%
cfg = PromptConfig(mode="deep", prompt_length=4, reparam="mlp")
assert prompt_param_count(cfg, toy) == init_prompts(cfg, toy).num_parameters()

# %% [markdown]
# At the size of a 24-layer, 1024-wide encoder, 100 prefix slots on every layer
# train about one and a half percent as many scalars as the backbone holds.
# A shared MLP encoder costs ten times more.

# %%
bert_large = ModelConfig(num_layers=24, hidden_size=1024, num_heads=16, ffn_size=4096, vocab_size=30522,
                         max_positions=512)
for reparam in ("none", "mlp"):
    trainable, backbone, ratio = prompt_census(bert_large, PromptConfig(mode="deep", prompt_length=100,
                                                                        reparam=reparam))
    print(f"reparam={reparam}: {trainable:,} trainable vs {backbone:,} frozen ({ratio:.2%})")
