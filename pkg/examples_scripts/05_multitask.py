# %% [markdown]
# # One prompt set, several datasets
#
# Multi-task training shares a single set of prompts across datasets of the
# same kind and gives each dataset its own head. Batches interleave in
# proportion to dataset size. An optional second phase forks one model per
# dataset, starting exactly from the jointly trained prompts.

# %%
from deepprompt.backbone import FrozenBackbone
from deepprompt.prompts import PromptConfig
from deepprompt.tasks import Vocab, encode_classification, synth_task
from deepprompt.training import MultiTaskPlan, TrainConfig, train_multitask

easy = synth_task("classification", seed=0, n_train=192, n_dev=64)
harder = synth_task("classification", difficulty=1, seed=1, n_train=96, n_dev=64)
# one backbone means one vocabulary: re-encode the second dataset with the first one's
raw = easy.train_raw + easy.dev_raw + harder.train_raw + harder.dev_raw
vocab = Vocab.build(text for text, _ in raw)


def encode(rows, spec):
    return [encode_classification(text, label, spec, vocab) for text, label in rows]


data = {"easy": (encode(easy.train_raw, easy.spec), encode(easy.dev_raw, easy.spec)),
        "harder": (encode(harder.train_raw, harder.spec), encode(harder.dev_raw, harder.spec))}

backbone = FrozenBackbone(vocab.model_config(num_layers=4, hidden_size=64, num_heads=4, ffn_size=128),
                          seed=0, init_std=0.1)
plan = MultiTaskPlan([("easy", easy.spec), ("harder", harder.spec)], PromptConfig(mode="deep", prompt_length=8),
                     phase="per_task_finetune")

# %%
result = train_multitask(plan, backbone, data, TrainConfig(learning_rate=5e-2, batch_size=32, epochs=20),
                         finetune_cfg=TrainConfig(learning_rate=1e-2, batch_size=32, epochs=5))
print("joint phase, best dev:", result.joint_history[-1]["dev"])
for name, (state, history) in result.finetuned.items():
    print(f"finetune {name}: starts at {history[0]['dev'][name]['metric']:.3f}, ends at {history[-1]['dev'][name]['metric']:.3f}")
