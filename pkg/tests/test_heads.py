import numpy as np
import pytest
import torch
from helpers import exhaustive_span
from hypothesis import given, settings
from hypothesis import strategies as st

from deepprompt.errors import ConfigError, TaskEncodingError
from deepprompt.heads import (ClsLinearHead, HeadSpec, SpanHead, TokenTaggingHead, VerbalizerHead, build_head,
                              cls_linear, decode_span, mask_positions, span_logits, token_tagging, verbalizer_logits)
from deepprompt.tasks import synth_task


@pytest.mark.parametrize("kwargs", [
    dict(kind="cls_linear", num_labels=1),
    dict(kind="verbalizer", num_labels=2, verbalizer_ids=(5,)),
    dict(kind="verbalizer", num_labels=2, verbalizer_ids=(5, 5)),
    dict(kind="span", num_labels=3),
    dict(kind="crf", num_labels=3),
])
def test_head_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        HeadSpec(**kwargs)


def test_head_spec_vocab_check_and_round_trip():
    spec = HeadSpec("verbalizer", 2, (5, 9))
    assert HeadSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        spec.validate(vocab_size=8)


def test_cls_linear_init():
    head = ClsLinearHead(64, 3, seed=0)
    assert torch.count_nonzero(head.linear.bias) == 0
    assert 0.015 < head.linear.weight.std().item() < 0.025


def test_cls_linear_zero_and_hand_case():
    head = ClsLinearHead(2, 2)
    with torch.no_grad():
        head.linear.weight.zero_()
    assert torch.count_nonzero(cls_linear(torch.randn(4, 2), head)) == 0
    with torch.no_grad():
        head.linear.weight.copy_(torch.tensor([[1.0, 2.0], [-1.0, 0.5]]))
        head.linear.bias.copy_(torch.tensor([0.5, 0.0]))
    out = cls_linear(torch.tensor([[3.0, -1.0]]), head)
    assert out.tolist() == [[3 - 2 + 0.5, -3 - 0.5]]


def test_cls_linear_batch_permutation():
    head = ClsLinearHead(8, 3, seed=1)
    x = torch.randn(5, 8)
    perm = torch.tensor([3, 0, 4, 1, 2])
    torch.testing.assert_close(cls_linear(x[perm], head), cls_linear(x, head)[perm])


def test_verbalizer_orthonormal_rows():
    table = torch.eye(6)
    out = verbalizer_logits(table[2:3], [2, 4], table)
    assert out.argmax(-1).item() == 0


def test_verbalizer_hand_dots():
    table = torch.tensor([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]])
    out = verbalizer_logits(torch.tensor([[2.0, 1.0]]), [2, 1], table)
    assert out.tolist() == [[5.0, 4.0]]


def test_verbalizer_needs_mask():
    emb = torch.nn.Embedding(10, 4)
    head = VerbalizerHead(emb, (5, 6), mask_token_id=4)
    assert list(head.parameters()) == []
    with pytest.raises(TaskEncodingError):
        head(torch.randn(2, 3, 4), torch.tensor([[2, 4, 3], [2, 7, 3]]))
    assert mask_positions(torch.tensor([[2, 9, 4, 4]]), 4).tolist() == [2]


def test_synthetic_verbalizer_uses_true_false():
    task = synth_task("classification", head_kind="verbalizer", n_train=4, n_dev=2)
    ids = task.spec.head.verbalizer_ids
    assert task.vocab.decode(ids) == ["false", "true"]
    assert all(task.vocab.mask_id in ex.token_ids for ex in task.train)


def test_token_tagging_position_shared():
    head = TokenTaggingHead(6, 4, seed=2)
    h = torch.randn(2, 5, 6)
    perm = torch.tensor([4, 2, 0, 1, 3])
    torch.testing.assert_close(token_tagging(h[:, perm], head), token_tagging(h, head)[:, perm])
    with torch.no_grad():
        head.linear.weight.zero_()
    probs = torch.softmax(token_tagging(h, head), -1)
    torch.testing.assert_close(probs, torch.full_like(probs, 0.25))


def test_token_tagging_hand_case():
    head = TokenTaggingHead(2, 2)
    with torch.no_grad():
        head.linear.weight.copy_(torch.tensor([[1.0, 0.0], [1.0, 1.0]]))
    out = token_tagging(torch.tensor([[[1.0, 2.0], [0.0, -1.0]]]), head)
    assert out.tolist() == [[[1.0, 3.0], [0.0, -1.0]]]


def test_span_logits_shapes():
    start, end = span_logits(torch.randn(3, 7, 8), SpanHead(8))
    assert start.shape == end.shape == (3, 7)


def test_build_head_dispatch():
    emb = torch.nn.Embedding(10, 4)
    assert isinstance(build_head(HeadSpec("span", 2), 4), SpanHead)
    assert isinstance(build_head(HeadSpec("verbalizer", 2, (5, 6)), 4, emb, 4), VerbalizerHead)
    with pytest.raises(ConfigError):
        build_head(HeadSpec("verbalizer", 2, (5, 6)), 4)


def test_decode_simple_case():
    pred = decode_span([5.0, 0.0, 0.0], [0.0, 0.0, 5.0], (0, 3), max_span_len=3, null_threshold=-100)
    assert (pred.start, pred.end, pred.score, pred.is_null) == (0, 3, 10.0, False)


def test_decode_null_dominates():
    start = np.array([0.0] + [-10.0] * 5)
    pred = decode_span(start, start.copy(), (1, 6), null_threshold=0.0)
    assert pred.is_null and pred.start == pred.end == 0


def test_decode_ties_prefer_earlier_then_shorter():
    pred = decode_span([0, 1, 1, 0], [0, 1, 1, 1], (1, 4), null_threshold=-1e9)
    assert (pred.start, pred.end) == (1, 2)


def test_decode_empty_window():
    with pytest.raises(TaskEncodingError):
        decode_span([0.0, 1.0], [0.0, 1.0], (1, 1))


def test_decode_random_eight_tokens():
    rng = np.random.default_rng(8)
    s, e = rng.normal(size=8), rng.normal(size=8)
    pred = decode_span(s, e, (2, 8), max_span_len=4, null_threshold=0.3)
    assert (pred.start, pred.end, pred.is_null) == exhaustive_span(s, e, (2, 8), 4, 0.3)[:3]


logit_lists = st.lists(st.integers(-4, 4).map(float), min_size=2, max_size=16)


@settings(max_examples=400, deadline=None)
@given(st.data())
def test_decode_matches_exhaustive_oracle(data):
    start = data.draw(logit_lists)
    n = len(start)
    end = data.draw(st.lists(st.integers(-4, 4).map(float), min_size=n, max_size=n))
    lo = data.draw(st.integers(0, n - 1))
    hi = data.draw(st.integers(lo + 1, n))
    max_len = data.draw(st.integers(1, n))
    threshold = data.draw(st.sampled_from([-1e9, -2.0, 0.0, 1.5, 3.0]))
    pred = decode_span(start, end, (lo, hi), max_len, threshold)
    want = exhaustive_span(start, end, (lo, hi), max_len, threshold)
    assert (pred.start, pred.end, pred.is_null) == want[:3]
    assert pred.score == want[3]
    if not pred.is_null:
        assert lo <= pred.start < pred.end <= hi and pred.end - pred.start <= max_len


def test_decode_keeps_float64_list_scores():
    pred = decode_span([0.0], [1.7763257213277495], (0, 1), null_threshold=-1.0)
    assert pred.score == 1.7763257213277495
