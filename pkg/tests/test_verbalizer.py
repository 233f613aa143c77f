import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hierverb.encoding import Vocab, init_encoder
from hierverb.hierarchy import build_hierarchy
from hierverb.synth import synth_hierarchy
from hierverb.verbalizer import (
    MULTI_PATH,
    SINGLE_PATH,
    VerbalizerHead,
    decode,
    head_from_json,
    head_to_json,
    init_head,
    layer_logits,
    probabilities,
    probabilities_backward,
    sigmoid,
    softmax,
)

CS_EDGES = [(None, "CS"), ("CS", "computer vision"), ("CS", "machine learning")]


def head_for(edges, r=4, seed=0):
    h = build_hierarchy(edges)
    vocab = Vocab.build([], h.depth, extra=[n.name for n in h.nodes])
    E = np.random.default_rng(seed).normal(size=(len(vocab), r))
    return h, vocab, E, init_head(h, E, vocab)


class TestInit:
    def test_leaf_column_is_name_average(self):
        h, vocab, E, head = head_for(CS_EDGES)
        col = head.W[1][:, h.layer_index(h.id_of("computer vision"))]
        np.testing.assert_allclose(col, (E[vocab["computer"]] + E[vocab["vision"]]) / 2)

    def test_parent_averages_five_tokens(self):
        h, vocab, E, head = head_for(CS_EDGES)
        tokens = ["cs", "computer", "vision", "machine", "learning"]
        expected = sum(E[vocab[t]] for t in tokens) / 5
        np.testing.assert_allclose(head.W[0][:, 0], expected)

    def test_repeated_tokens_count_twice(self):
        # token-weighted, so "a" from the child contributes twice as much as "b"
        h, vocab, E, head = head_for([(None, "b"), ("b", "a a")])
        np.testing.assert_allclose(head.W[0][:, 0], (E[vocab["b"]] + 2 * E[vocab["a"]]) / 3)

    def test_identical_siblings_identical_columns(self):
        # names are unique ids, but "Z" and "z" tokenize identically
        h, vocab, E, head = head_for([(None, "p"), ("p", "Z"), ("p", "z")])
        np.testing.assert_array_equal(head.W[1][:, 0], head.W[1][:, 1])

    def test_single_child_with_parent_name(self):
        h, vocab, E, head = head_for([(None, "physics"), ("physics", "physics ")])
        np.testing.assert_allclose(head.W[0][:, 0], head.W[1][:, 0])

    def test_bias_zero_and_shapes(self):
        h = synth_hierarchy([3, 4])
        vocab = Vocab.build([], 2, extra=[n.name for n in h.nodes])
        head = init_head(h, np.ones((len(vocab), 5)), vocab)
        assert head.layer_sizes == [3, 12]
        assert head.r == 5
        assert all(np.all(b == 0) for b in head.b)

    def test_unknown_label_tokens_use_unk(self):
        h = build_hierarchy([(None, "CCAT")])
        vocab = Vocab.build([], 1)
        E = np.arange(len(vocab) * 2, dtype=float).reshape(-1, 2)
        head = init_head(h, E, vocab)
        np.testing.assert_array_equal(head.W[0][:, 0], E[vocab["[UNK]"]])

    def test_empty_hierarchy_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            init_head(build_hierarchy([]), np.zeros((4, 2)), Vocab.build([], 1))


class TestLogits:
    def test_unit_state_selects_row(self):
        W = np.arange(6, dtype=float).reshape(2, 3)
        head = VerbalizerHead([W], [np.zeros(3)])
        np.testing.assert_array_equal(layer_logits(head, np.array([[1.0, 0.0]]))[0], W[0])

    def test_bias_is_additive(self):
        W = np.arange(6, dtype=float).reshape(2, 3)
        b = np.array([1.0, -2.0, 0.5])
        state = np.array([[0.3, -0.7]])
        plain = layer_logits(VerbalizerHead([W], [np.zeros(3)]), state)[0]
        np.testing.assert_allclose(layer_logits(VerbalizerHead([W], [b]), state)[0], plain + b)

    def test_depth_d_mask_feeds_depth_d_only(self):
        head = VerbalizerHead([np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)])
        out = layer_logits(head, np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out[0], [1, 2])
        np.testing.assert_array_equal(out[1], [3, 4])

    def test_batched(self):
        _, _, _, head = head_for(CS_EDGES)
        states = np.random.default_rng(0).normal(size=(3, 2, 4))
        batched = layer_logits(head, states)
        for i in range(3):
            np.testing.assert_allclose(batched[1][i], layer_logits(head, states[i])[1])

    def test_golden(self):
        # recorded from the first run of this implementation
        h = synth_hierarchy([2, 2])
        vocab = Vocab.build([], 2, extra=[n.name for n in h.nodes])
        E = init_encoder(len(vocab), 2, 3, 0.0, np.random.default_rng(5)).E
        head = init_head(h, E, vocab)
        states = np.random.default_rng(6).uniform(-1, 1, (2, 3))
        out = layer_logits(head, states)
        np.testing.assert_allclose(out[0], [0.031876505083, -0.001440438589], atol=1e-11)
        np.testing.assert_allclose(
            out[1], [-0.063975756236, -0.069797141761, -0.005936255696, -0.013118648619], atol=1e-11
        )

    def test_dimension_mismatch(self):
        _, _, _, head = head_for(CS_EDGES)
        with pytest.raises(ValueError):
            layer_logits(head, np.zeros((2, 5)))


class TestProbabilities:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(4)), [0.25] * 4)

    def test_softmax_closed_form(self):
        np.testing.assert_allclose(softmax(np.array([math.log(2), 0.0])), [2 / 3, 1 / 3], rtol=1e-15)

    def test_sigmoid_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        out = sigmoid(np.array([-800.0, 800.0]))
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_mode_selects_function(self):
        z = [np.array([0.0, 1.0])]
        np.testing.assert_allclose(probabilities(z, SINGLE_PATH)[0].sum(), 1.0)
        np.testing.assert_allclose(probabilities(z, MULTI_PATH)[0], sigmoid(z[0]))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            probabilities([np.zeros(2)], "top_k")

    @pytest.mark.parametrize("mode", [SINGLE_PATH, MULTI_PATH])
    def test_backward_matches_finite_differences(self, mode):
        rng = np.random.default_rng(0)
        z = rng.normal(size=5)
        g = rng.normal(size=5)

        def f(x):
            return float(probabilities([x], mode)[0] @ g)

        num = np.array([(f(z + 1e-6 * e) - f(z - 1e-6 * e)) / 2e-6 for e in np.eye(5)])
        ana = probabilities_backward(probabilities([z], mode), [g], mode)[0]
        np.testing.assert_allclose(ana, num, rtol=1e-6, atol=1e-10)


class TestDecode:
    h = build_hierarchy([(None, "a"), (None, "b"), (None, "c"), ("a", "x"), ("b", "y")])

    def test_argmax(self):
        pred = decode([np.array([0.1, 0.7, 0.2]), np.array([0.6, 0.4])], SINGLE_PATH, self.h)
        assert pred == {self.h.id_of("b"), self.h.id_of("x")}

    def test_tie_lowest_id(self):
        pred = decode([np.array([0.5, 0.5, 0.0]), np.array([0.5, 0.5])], SINGLE_PATH, self.h)
        assert pred == {self.h.id_of("a"), self.h.id_of("x")}

    def test_threshold_inclusive(self):
        pred = decode([np.array([0.5, 0.49, 0.9]), np.array([0.1, 0.2])], MULTI_PATH, self.h)
        assert pred == {self.h.id_of("a"), self.h.id_of("c")}

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            decode([np.zeros(3), np.zeros(2)], MULTI_PATH, self.h, threshold=1.0)


@settings(max_examples=100, deadline=None)
@given(
    # eighths are exact in binary, so z + c never rounds two entries into a tie
    arrays(np.float64, 5, elements=st.integers(-240, 240).map(lambda i: i / 8)),
    st.integers(-100, 100),
)
def test_softmax_shift_invariance(z, c):
    h = build_hierarchy([(None, f"l{i}") for i in range(5)])
    np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-12)
    assert decode([softmax(z + c)], SINGLE_PATH, h) == decode([softmax(z)], SINGLE_PATH, h)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)))
def test_probability_invariants(z):
    p = softmax(z)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    q = sigmoid(z)
    assert np.all((q >= 0) & (q <= 1))


def test_head_json_round_trip_bit_exact():
    rng = np.random.default_rng(3)
    head = VerbalizerHead(
        [rng.normal(size=(4, 3)), rng.normal(size=(4, 7))],
        [rng.normal(size=3) * 1e-17, rng.normal(size=7)],
        MULTI_PATH,
    )
    data = head_to_json(head)
    assert (data["D"], data["r"], data["layer_sizes"]) == (2, 4, [3, 7])
    back = head_from_json(data)
    assert back.mode == MULTI_PATH
    for a, b in zip(head.W + head.b, back.W + back.b):
        assert a.tobytes() == b.tobytes()
