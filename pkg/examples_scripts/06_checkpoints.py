# %% [markdown]
# # Saving only what was trained
#
# A prompt checkpoint holds the prompt parameters, the heads and enough
# metadata to refuse a mismatched backbone. Backbone arrays are never written
# to it, so its size follows the trainable parameter count. With an MLP
# encoder on a toy backbone that is still a sizeable fraction; at 24 layers and
# without the encoder it is around one percent.

# %%
import tempfile
from pathlib import Path

import torch

from deepprompt.backbone import FrozenBackbone
from deepprompt.checkpoint import load_checkpoint, read_blob, save_backbone, save_checkpoint
from deepprompt.errors import IncompatibleCheckpointError
from deepprompt.prompts import PromptConfig
from deepprompt.tasks import synth_task
from deepprompt.training import TrainConfig, build_state, predict, train

task = synth_task("classification", n_train=128, n_dev=64)
backbone = FrozenBackbone(task.vocab.model_config(num_layers=4, hidden_size=64, num_heads=4, ffn_size=128),
                          seed=0, init_std=0.1)
state = build_state(backbone, PromptConfig(mode="deep", prompt_length=8, reparam="mlp"), task.spec)
train(state, task.train, TrainConfig(learning_rate=5e-2, batch_size=32, epochs=5))

# %%
out = Path(tempfile.mkdtemp())
save_checkpoint(state, out / "prompts.ckpt", metrics={"note": "five epochs"})
prompt_bytes = (out / "prompts.ckpt").stat().st_size
backbone_bytes = save_backbone(backbone, out / "backbone.ckpt")
print(f"prompt checkpoint {prompt_bytes:,} bytes, backbone {backbone_bytes:,} bytes")
print("arrays stored:", sorted(read_blob(out / "prompts.ckpt").arrays))

# %% [markdown]
# Reloading onto the same backbone reproduces the logits.

# %%
restored = load_checkpoint(out / "prompts.ckpt", backbone)
def logits(s):
    return torch.cat([out for _, out in predict(s.model, task.dev)])


print("max logit difference:", float((logits(state) - logits(restored)).abs().max()))

# %% [markdown]
# A backbone with the same shape but different weights is rejected.

# %%
try:
    load_checkpoint(out / "prompts.ckpt", FrozenBackbone(backbone.config, seed=1, init_std=0.1))
except IncompatibleCheckpointError as err:
    print("refused:", err)
