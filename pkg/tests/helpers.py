"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math

import numpy as np
import torch

from deepprompt.backbone import FrozenBackbone, ModelConfig
from deepprompt.heads import HeadSpec
from deepprompt.prompts import PromptConfig
from deepprompt.tasks import TaskSpec, synth_task
from deepprompt.tasks.types import EncodedExample
from deepprompt.training import build_state, collate, task_loss

ACCEPTANCE_LINES = []  # filled by test_acceptance, printed in the terminal summary

BERT_LARGE = ModelConfig(num_layers=24, hidden_size=1024, num_heads=16, ffn_size=4096, vocab_size=30522,
                         max_positions=512)


def np_layer_weights(layer):
    def get(lin):
        return lin.weight.detach().double().numpy(), lin.bias.detach().double().numpy()

    return {"q": get(layer.query), "k": get(layer.key), "v": get(layer.value), "o": get(layer.attn_out),
            "f1": get(layer.ffn_in), "f2": get(layer.ffn_out),
            "n1": (layer.attn_norm.weight.detach().double().numpy(), layer.attn_norm.bias.detach().double().numpy(),
                   layer.attn_norm.eps),
            "n2": (layer.ffn_norm.weight.detach().double().numpy(), layer.ffn_norm.bias.detach().double().numpy(),
                   layer.ffn_norm.eps),
            "heads": layer.num_heads}


def brute_force_attention(hidden, mask, prefix_k, prefix_v, w):
    """Loop-based attention over explicitly concatenated [prefix ; sequence] keys."""
    (wq, bq), (wk, bk), (wv, bv), (wo, bo) = w["q"], w["k"], w["v"], w["o"]
    nh = w["heads"]
    b, s, h = hidden.shape
    hd = h // nh
    out = np.zeros((b, s, h))
    for bi in range(b):
        x = hidden[bi]
        q, k, v = x @ wq.T + bq, x @ wk.T + bk, x @ wv.T + bv
        ctx = np.zeros((s, h))
        for head in range(nh):
            sl = slice(head * hd, (head + 1) * hd)
            keys, vals = [], []
            if prefix_k is not None:
                for p in range(prefix_k.shape[1]):
                    keys.append(prefix_k[bi, p, head])
                    vals.append(prefix_v[bi, p, head])
            for j in range(s):
                if mask is None or mask[bi, j]:
                    keys.append(k[j, sl])
                    vals.append(v[j, sl])
            keys, vals = np.array(keys), np.array(vals)
            for i in range(s):
                logits = np.array([q[i, sl] @ kk for kk in keys]) / math.sqrt(hd)
                e = np.exp(logits - logits.max())
                ctx[i, sl] = (e / e.sum()) @ vals
        out[bi] = ctx @ wo.T + bo
    return out


def np_layer_norm(x, gamma, beta, eps):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def np_gelu(x):
    return 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


def reference_layer(hidden, mask, w, prefix_k=None, prefix_v=None):
    attn = brute_force_attention(hidden, mask, prefix_k, prefix_v, w)
    x = np_layer_norm(hidden + attn, *w["n1"])
    (w1, b1), (w2, b2) = w["f1"], w["f2"]
    ff = np_gelu(x @ w1.T + b1) @ w2.T + b2
    return np_layer_norm(x + ff, *w["n2"])


def central_difference_check(loss_fn, param: torch.Tensor, eps: float = 1e-6, max_entries: int = 64, seed: int = 0):
    """Max relative error between autograd and central differences over sampled entries of ``param``."""
    param.grad = None
    loss = loss_fn()
    (grad,) = torch.autograd.grad(loss, [param])
    flat = param.data.view(-1)
    rng = np.random.default_rng(seed)
    idx = rng.choice(flat.numel(), size=min(max_entries, flat.numel()), replace=False)
    worst, checked = 0.0, 0
    for i in idx:
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
        numeric = (up - down) / (2 * eps)
        analytic = grad.reshape(-1)[i].item()
        scale = max(abs(numeric), abs(analytic))
        if scale < 1e-9:
            continue
        checked += 1
        worst = max(worst, abs(numeric - analytic) / scale)
    assert checked, "every sampled gradient entry was ~0; the check would be vacuous"
    return worst


def exhaustive_span(start, end, window, max_len, threshold, cls_index=0):
    """All-pairs span search with (earlier start, shorter span) tie-breaking."""
    lo, hi = window
    best, arg = -math.inf, None
    for s in range(lo, hi):
        for e in range(s + 1, min(hi, s + max_len) + 1):
            score = start[s] + end[e - 1]
            if score > best:
                best, arg = score, (s, e)
    null = start[cls_index] + end[cls_index]
    if best - null < threshold:
        return (cls_index, cls_index, True, best)
    return (arg[0], arg[1], False, best)


def toy_model_config(**kw) -> ModelConfig:
    base = dict(num_layers=2, hidden_size=8, num_heads=2, ffn_size=16, vocab_size=40, max_positions=32)
    base.update(kw)
    return ModelConfig(**base)


def desk_task_and_backbone(head_kind=None, n_train=256, n_dev=128, num_layers=4, seed=0):
    task = synth_task("classification", seed=seed, n_train=n_train, n_dev=n_dev, head_kind=head_kind)
    mc = task.vocab.model_config(num_layers=num_layers, hidden_size=64, num_heads=4, ffn_size=128, max_positions=64)
    return task, FrozenBackbone(mc, seed=0, init_std=0.1)


def grad_check_state(mode, reparam, layers=2):
    """Float64 toy state and a loss closure for finite-difference checks."""
    torch.manual_seed(0)
    model = toy_model_config(num_layers=layers)
    bb = FrozenBackbone(model, seed=2, init_std=0.5)
    spec = TaskSpec("t", "classification", ("a", "b"), HeadSpec("cls_linear", 2))
    state = build_state(bb, PromptConfig(mode=mode, prompt_length=2, reparam=reparam, seed=3), spec)
    state.model.double()
    with torch.no_grad():
        state.model.prompts.raw_embeddings.normal_(0, 0.5)
        for p in state.model.heads.parameters():
            p.normal_(0, 0.5)
    examples = [EncodedExample([2, 7, 9, 3], [1] * 4, label=0), EncodedExample([2, 11, 3], [1] * 3, label=1),
                EncodedExample([2, 5, 6, 12, 3], [1] * 5, label=1)]
    batch = collate(examples, 0)
    state.model.eval()

    def loss():
        return task_loss(spec, state.model(batch), batch)

    return state, loss
