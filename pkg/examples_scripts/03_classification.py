# %% [markdown]
# # Learning a task through prompts alone
#
# The synthetic task labels a sentence positive exactly when a trigger word
# appears, so a perfect classifier exists. The backbone is random and frozen.
# Only the prompts and a small head train. Deep prompts should solve it; we run
# shallow prompts of the same length for comparison and compare heads too.

# %%
import time

from deepprompt.backbone import FrozenBackbone
from deepprompt.prompts import PromptConfig
from deepprompt.tasks import synth_task
from deepprompt.training import TrainConfig, build_state, evaluate, train, trainable_census

task = synth_task("classification", seed=0)
print(len(task.train), "train /", len(task.dev), "dev; example:", task.train_raw[0])

model_config = task.vocab.model_config(num_layers=4, hidden_size=64, num_heads=4, ffn_size=128)
backbone = FrozenBackbone(model_config, seed=0, init_std=0.1)
cfg = TrainConfig(learning_rate=5e-2, batch_size=32, epochs=30)

# %%
for mode in ("deep", "shallow"):
    state = build_state(backbone, PromptConfig(mode=mode, prompt_length=8), task.spec)
    t0 = time.perf_counter()
    train(state, task.train, cfg, dev=task.dev)
    trainable, frozen, ratio = trainable_census(state)
    print(f"{mode:7s}: dev accuracy {evaluate(state.model, task.dev)['accuracy']:.3f} "
          f"after {state.step} steps, {time.perf_counter() - t0:.1f}s, {trainable} trainable ({ratio:.2%})")

# %% [markdown]
# A verbalizer head scores two vocabulary words at a [MASK] slot through the
# frozen embedding table, so it adds no parameters. The linear head is a
# fresh classifier on the first token.

# %%
for head in ("cls_linear", "verbalizer"):
    t = synth_task("classification", seed=0, head_kind=head)
    state = build_state(backbone, PromptConfig(mode="deep", prompt_length=8), t.spec)
    train(state, t.train, cfg, dev=t.dev)
    print(f"{head:10s}: dev accuracy {evaluate(state.model, t.dev)['accuracy']:.3f}")
