import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsfusion.encoder import (
    PAD,
    UNK,
    CellParams,
    EncoderParams,
    Vocabulary,
    bi_indrnn,
    embed,
    encoder_params,
    indrnn_step,
    init_encoder,
    pad_or_truncate,
    tokenize,
)
from capsfusion.ndtensor import DimensionError, Tensor, grad_check, sum_, mul


def _cell(rng, k, H):
    return CellParams(Tensor(rng.normal(size=(H, k))), Tensor(rng.uniform(-1, 1, size=H)), Tensor(rng.normal(size=H)))


class TestTokens:
    def test_tokenize_strips_punctuation_and_case(self):
        assert tokenize("I  will NOT, commit suicide!") == ["i", "will", "not", "commit", "suicide"]

    def test_tokenize_persian(self):
        assert tokenize("خودکشی، تنها راه") == ["خودکشی", "تنها", "راه"]

    @pytest.mark.parametrize(
        "ids, expected",
        [([5, 6], [5, 6, 0, 0]), ([5, 6, 7, 8], [5, 6, 7, 8]), ([5, 6, 7, 8, 9], [5, 6, 7, 8])],
    )
    def test_pad_or_truncate(self, ids, expected):
        assert pad_or_truncate(ids, 4) == expected

    @pytest.mark.parametrize("n", [0, -3])
    def test_pad_or_truncate_rejects_bad_length(self, n):
        with pytest.raises(ValueError):
            pad_or_truncate([1, 2], n)


class TestVocabulary:
    def test_reserved_ids(self):
        vocab = Vocabulary.build(["hello world", "hello there"])
        assert vocab.id("<pad>") == UNK  # surface text never maps onto PAD
        assert vocab.encode("hello world there") == [2, 3, 4]
        assert vocab.encode("unseen") == [UNK]
        assert len(vocab) == 5

    def test_ids_are_dense(self):
        vocab = Vocabulary.build(["a b c a d"])
        assert sorted(vocab.id(t) for t in vocab.tokens) == list(range(2, len(vocab)))

    def test_file_round_trip(self, tmp_path):
        vocab = Vocabulary.build(["خودکشی تنها", "alpha beta"])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[vocab.id("beta") - 2] == "beta"
        again = Vocabulary.load(path)
        assert again.tokens == vocab.tokens


class TestEmbed:
    def test_all_pad_is_zero(self):
        emb = init_encoder(np.random.default_rng(0), 10, 4, 3)["embedding"]
        np.testing.assert_array_equal(embed([PAD] * 5, Tensor(emb)).data, np.zeros((5, 4)))

    def test_single_row(self):
        emb = init_encoder(np.random.default_rng(0), 10, 4, 3)["embedding"]
        np.testing.assert_array_equal(embed([3], Tensor(emb)).data, emb[[3]])

    def test_unknown_token_uses_unk_row(self):
        emb = init_encoder(np.random.default_rng(0), 10, 4, 3)["embedding"]
        vocab = Vocabulary.build(["known"])
        out = embed(vocab.encode("never-seen-before"), Tensor(emb))
        np.testing.assert_array_equal(out.data, emb[[UNK]])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            embed([10], Tensor(np.zeros((10, 4))))


class TestIndRNNStep:
    def test_feedforward_degenerate(self):
        rng = np.random.default_rng(1)
        W, x, h = rng.normal(size=(3, 2)), rng.normal(size=2), rng.normal(size=3)
        out = indrnn_step(Tensor(x), Tensor(h), CellParams(Tensor(W), Tensor(np.zeros(3)), Tensor(np.zeros(3))))
        np.testing.assert_allclose(out.data, np.maximum(W @ x, 0), atol=1e-15)

    def test_zero_input(self):
        rng = np.random.default_rng(2)
        u, h = rng.normal(size=3), rng.normal(size=3)
        cell = CellParams(Tensor(rng.normal(size=(3, 2))), Tensor(u), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(indrnn_step(Tensor(np.zeros(2)), Tensor(h), cell).data, np.maximum(u * h, 0))

    def test_scalar_hand_case(self):
        cell = CellParams(Tensor([[1.0]]), Tensor([0.5]), Tensor([0.0]))
        assert indrnn_step(Tensor([2.0]), Tensor([4.0]), cell).data[0] == 4.0

    def test_shape_mismatch(self):
        cell = CellParams(Tensor(np.ones((3, 2))), Tensor(np.ones(3)), Tensor(np.ones(3)))
        with pytest.raises(DimensionError):
            indrnn_step(Tensor(np.ones(4)), Tensor(np.ones(3)), cell)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_recurrence_is_elementwise(self, seed):
        rng = np.random.default_rng(seed)
        k, H = 3, 5
        cell = _cell(rng, k, H)
        x, h = rng.normal(size=k), rng.normal(size=H)
        base = indrnn_step(Tensor(x), Tensor(h), cell).data
        i = int(rng.integers(H))
        h2 = h.copy()
        h2[i] += rng.normal() * 3
        moved = indrnn_step(Tensor(x), Tensor(h2), cell).data
        others = np.arange(H) != i
        np.testing.assert_array_equal(moved[others], base[others])


class TestBiIndRNN:
    def test_shape(self):
        rng = np.random.default_rng(0)
        params = EncoderParams(Tensor(np.zeros((5, 3))), _cell(rng, 3, 4), _cell(rng, 3, 4))
        assert bi_indrnn(Tensor(rng.normal(size=(7, 3))), params).shape == (7, 8)
        assert bi_indrnn(Tensor(rng.normal(size=(2, 7, 3))), params).shape == (2, 7, 8)

    def test_palindrome_with_tied_cells(self):
        rng = np.random.default_rng(1)
        cell = _cell(rng, 3, 4)
        half = rng.normal(size=(3, 3))
        X = np.concatenate([half, rng.normal(size=(1, 3)), half[::-1]])
        out = bi_indrnn(Tensor(X), EncoderParams(Tensor(np.zeros((1, 3))), cell, cell)).data
        n = len(X)
        for t in range(n):
            np.testing.assert_allclose(out[t, :4], out[n - 1 - t, 4:], atol=1e-13)

    def test_two_step_hand_case(self):
        # scalar cells: forward W=1,u=0.5,b=0 ; backward W=2,u=-1,b=1
        fwd = CellParams(Tensor([[1.0]]), Tensor([0.5]), Tensor([0.0]))
        bwd = CellParams(Tensor([[2.0]]), Tensor([-1.0]), Tensor([1.0]))
        X = Tensor([[2.0], [3.0]])
        out = bi_indrnn(X, EncoderParams(Tensor(np.zeros((1, 1))), fwd, bwd)).data
        # forward: h0 = 2, h1 = relu(3 + 0.5*2) = 4
        # backward over [3, 2]: g1 = relu(6 + 1) = 7, g0 = relu(4 - 7 + 1) = 0
        np.testing.assert_array_equal(out, [[2.0, 0.0], [4.0, 7.0]])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 6))
    def test_equals_repeated_steps(self, seed, n):
        rng = np.random.default_rng(seed)
        k, H = 3, 4
        fwd, bwd = _cell(rng, k, H), _cell(rng, k, H)
        X = rng.normal(size=(n, k))
        out = bi_indrnn(Tensor(X), EncoderParams(Tensor(np.zeros((1, k))), fwd, bwd)).data
        h = Tensor(np.zeros(H))
        for t in range(n):
            h = indrnn_step(Tensor(X[t]), h, fwd)
            np.testing.assert_allclose(out[t, :H], h.data, rtol=1e-12, atol=1e-12)
        h = Tensor(np.zeros(H))
        for t in reversed(range(n)):
            h = indrnn_step(Tensor(X[t]), h, bwd)
            np.testing.assert_allclose(out[t, H:], h.data, rtol=1e-12, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(4)
        arrays = init_encoder(rng, 9, 4, 3)
        names = sorted(arrays)
        ids = np.array([[3, 4, 5, 0], [8, 2, 0, 0]])
        weights = rng.normal(size=(2, 4, 6))

        def f(ts):
            h = bi_indrnn(embed(ids, ts[names.index("embedding")]), encoder_params(dict(zip(names, ts))))
            return sum_(mul(h, weights))

        report = grad_check(f, [arrays[n] for n in names], 1e-5, 1e-4)
        assert report.passed, dict(zip(names, report.per_param))
