# %% [markdown]
# # Sequence labelling and extractive QA
#
# Token-level tasks reuse the same prompts with a different head. NER tags
# every token with an IOB2 label and is scored by exact span micro-F1. QA
# predicts start and end logits over the context and may answer "no answer"
# when the best span does not beat the [CLS] score by a margin.

# %%
from deepprompt.backbone import FrozenBackbone
from deepprompt.heads import decode_span
from deepprompt.prompts import PromptConfig
from deepprompt.tasks import iob2_to_spans, micro_f1, qa_em_f1, synth_task
from deepprompt.training import TrainConfig, build_state, evaluate, predict, train

cfg = TrainConfig(learning_rate=5e-2, batch_size=32, epochs=30)


def fit(task):
    config = task.vocab.model_config(num_layers=4, hidden_size=64, num_heads=4, ffn_size=128)
    state = build_state(FrozenBackbone(config, seed=0, init_std=0.1), PromptConfig(mode="deep", prompt_length=16),
                        task.spec)
    train(state, task.train, cfg, dev=task.dev)
    return state


# %% [markdown]
# The metrics on their own first.

# %%
gold = iob2_to_spans(["B-PER", "I-PER", "O", "B-LOC"])
print("gold spans:", sorted(gold))
print("half the spans found:", micro_f1([{("PER", 0, 2)}], [gold]))
print("QA normalisation:", qa_em_f1("The Cat", ["the cat."]), qa_em_f1("x y", ["y z"]))

# %% [markdown]
# Synthetic NER: an entity is whatever follows a marker word.

# %%
ner = synth_task("ner", seed=0)
tokens, tags = ner.dev_raw[0]
print(" ".join(tokens))
ner_state = fit(ner)
print("NER dev:", evaluate(ner_state.model, ner.dev))

# %% [markdown]
# Synthetic QA with unanswerable questions mixed in (difficulty 1). The null
# threshold is an evaluation-time knob, so one trained model can be scored
# at several values.

# %%
qa = synth_task("qa", difficulty=1, seed=0)
qa_state = fit(qa)
for threshold in (-5.0, 0.0, 2.0):
    print(f"null threshold {threshold:+.1f}:", evaluate(qa_state.model, qa.dev, null_threshold=threshold))

# %% [markdown]
# Decoding a single example by hand.

# %%
batch, (start, end) = predict(qa_state.model, qa.dev[:1])[0]
example = qa.dev[0]
span = decode_span(start[0, :len(example)], end[0, :len(example)], example.context_window)
answer = "" if span.is_null else example.span_text(span.start, span.end)
print(qa.dev_raw[0]["question"], "|", qa.dev_raw[0]["context"])
print("predicted:", repr(answer), "gold:", example.answers, "score margin:", round(span.score - span.null_score, 3))
