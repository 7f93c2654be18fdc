"""Corruption, masked loss, Adam and the training loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsb.encoder import ModelConfig, init_parameters
from bsb.pretraining import (
    IGNORE_INDEX,
    LOSS_CURVE_HEADER,
    AdamState,
    LossError,
    MaskedBatch,
    TrainingConfig,
    TrainingError,
    adam_step,
    init_adam_state,
    mlm_corrupt,
    mlm_loss,
    train,
)
from bsb.checkpoint import load_checkpoint
from bsb.tensor import Tape, Tensor, backward
from bsb.tokenization import SPECIAL_TOKENS, InputError, Vocabulary, encode, stack_encodings

from oracles import scalar_loop_cross_entropy


def word_vocab(words):
    return Vocabulary(list(SPECIAL_TOKENS) + sorted(set(words)))


def toy_batch(vocab, sentences, max_len=16):
    encs = [encode(s, vocab, max_len=max_len) for s in sentences]
    return stack_encodings(encs)


@pytest.fixture
def vocab():
    words = [f"w{i:02d}" for i in range(40)]
    return word_vocab(words)


class TestTrainingConfig:
    def test_defaults(self):
        cfg = TrainingConfig()
        assert cfg.learning_rate == 1e-4
        assert cfg.batch_size == 128
        assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)
        assert cfg.mask_prob == 0.15
        assert cfg.mask_split == (0.8, 0.1, 0.1)

    def test_split_must_sum_to_one(self):
        with pytest.raises(InputError):
            TrainingConfig(mask_split=(0.8, 0.1, 0.2))

    def test_negative_lr_rejected_zero_allowed(self):
        with pytest.raises(InputError):
            TrainingConfig(learning_rate=-1e-4)
        assert TrainingConfig(learning_rate=0.0).learning_rate == 0.0

    def test_bad_mask_prob(self):
        with pytest.raises(InputError):
            TrainingConfig(mask_prob=1.5)

    def test_dict_round_trip(self):
        cfg = TrainingConfig(batch_size=32, mask_split=(1.0, 0.0, 0.0))
        d = cfg.to_dict()
        assert d["mask_split"] == [1.0, 0.0, 0.0]
        assert TrainingConfig.from_dict(d) == cfg

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(InputError):
            TrainingConfig.from_dict({"momentum": 0.9})


class TestCorrupt:
    def test_mask_prob_zero(self, vocab):
        ids, mask = toy_batch(vocab, ["w00 w01 w02 w03 w04"])
        cfg = TrainingConfig(mask_prob=0.0)
        out = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(0))
        assert out.n_corrupted == 0
        assert (out.labels == IGNORE_INDEX).all()
        assert np.array_equal(out.input_ids, ids)

    def test_mask_prob_one_pure_mask_split(self, vocab):
        ids, mask = toy_batch(vocab, ["w00 w01 w02", "w03 w04 w05 w06"])
        cfg = TrainingConfig(mask_prob=1.0, mask_split=(1.0, 0.0, 0.0))
        out = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(0))
        special = np.isin(ids, list(vocab.special_ids))
        maskable = (mask == 1) & ~special
        assert (out.input_ids[maskable] == vocab.mask_id).all()
        assert np.array_equal(out.labels[maskable], ids[maskable])
        assert (out.labels[~maskable] == IGNORE_INDEX).all()
        assert out.n_corrupted == int(maskable.sum())

    def test_corrupted_fraction_concentrates(self, vocab):
        # ~10,000 maskable tokens; binomial concentration puts the observed
        # rate well inside [0.13, 0.17]
        sentences = ["w%02d " % (i % 40) * 10 for i in range(1000)]
        ids, mask = toy_batch(vocab, sentences, max_len=12)
        cfg = TrainingConfig(mask_prob=0.15)
        out = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(7))
        special = np.isin(ids, list(vocab.special_ids))
        n_maskable = int(((mask == 1) & ~special).sum())
        assert n_maskable >= 10000
        frac = out.n_corrupted / n_maskable
        assert 0.13 <= frac <= 0.17

    def test_keep_split_keeps_ids(self, vocab):
        ids, mask = toy_batch(vocab, ["w00 w01 w02 w03"])
        cfg = TrainingConfig(mask_prob=1.0, mask_split=(0.0, 0.0, 1.0))
        out = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(0))
        assert np.array_equal(out.input_ids, ids)
        assert out.n_corrupted > 0

    def test_replacements_are_non_special(self, vocab):
        ids, mask = toy_batch(vocab, ["w00 w01 w02 w03 w04 w05"] * 20)
        cfg = TrainingConfig(mask_prob=1.0, mask_split=(0.0, 1.0, 0.0))
        out = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(3))
        changed = out.labels != IGNORE_INDEX
        assert not np.isin(out.input_ids[changed], list(vocab.special_ids)).any()

    def test_skip_counter_for_unmaskable_row(self, vocab):
        # row 1 is an empty sentence: [CLS] [SEP] only
        ids, mask = toy_batch(vocab, ["w00 w01 w02", ""])
        cfg = TrainingConfig(mask_prob=1.0, mask_split=(1.0, 0.0, 0.0))
        out = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(0))
        assert out.n_skipped == 1
        assert (out.labels[1] == IGNORE_INDEX).all()

    def test_deterministic(self, vocab):
        ids, mask = toy_batch(vocab, ["w00 w01 w02 w03 w04"] * 8)
        cfg = TrainingConfig()
        a = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(5))
        b = mlm_corrupt(ids, mask, vocab, cfg, np.random.default_rng(5))
        assert np.array_equal(a.input_ids, b.input_ids)
        assert np.array_equal(a.labels, b.labels)

    @given(seed=st.integers(0, 10_000), prob=st.floats(0.0, 1.0))
    @settings(max_examples=80, deadline=None)
    def test_specials_never_corrupted(self, seed, prob):
        words = [f"w{i:02d}" for i in range(40)]
        v = word_vocab(words)
        rng = np.random.default_rng(seed)
        n_sent = int(rng.integers(1, 6))
        sentences = [
            " ".join(rng.choice(words, size=rng.integers(1, 8)))
            for _ in range(n_sent)
        ]
        ids, mask = toy_batch(v, sentences)
        cfg = TrainingConfig(mask_prob=prob)
        out = mlm_corrupt(ids, mask, v, cfg, rng)
        special = np.isin(ids, list(v.special_ids))
        assert np.array_equal(out.input_ids[special], ids[special])
        assert (out.labels[special] == IGNORE_INDEX).all()
        assert (out.labels[mask == 0] == IGNORE_INDEX).all()


class TestLoss:
    def test_confident_correct_logits_drive_loss_to_zero(self):
        labels = np.array([[1, IGNORE_INDEX], [IGNORE_INDEX, 3]])
        logits = np.zeros((2, 2, 8))
        logits[0, 0, 1] = 50.0
        logits[1, 1, 3] = 50.0
        loss = mlm_loss(Tensor(logits), labels)
        assert float(loss.data) < 1e-6

    def test_uniform_logits_give_log_vocab(self):
        labels = np.full((2, 4), IGNORE_INDEX)
        labels[0, 1] = 5
        labels[1, 2] = 11
        loss = mlm_loss(Tensor(np.zeros((2, 4, 16))), labels)
        assert abs(float(loss.data) - np.log(16)) < 1e-12

    def test_matches_scalar_loop_oracle(self, rng):
        logits = rng.normal(size=(2, 4, 16))
        labels = np.full((2, 4), IGNORE_INDEX)
        labels[0, 0] = 3
        labels[0, 3] = 15
        labels[1, 1] = 0
        got = float(mlm_loss(Tensor(logits), labels).data)
        rows = [logits[0, 0], logits[0, 3], logits[1, 1]]
        want = scalar_loop_cross_entropy(np.stack(rows), np.array([3, 15, 0]))
        assert abs(got - want) < 1e-10

    def test_zero_labels_rejected(self):
        labels = np.full((1, 4), IGNORE_INDEX)
        with pytest.raises(LossError):
            mlm_loss(Tensor(np.zeros((1, 4, 8))), labels)

    def test_gradient_reaches_logits(self, rng):
        logits = Tensor(rng.normal(size=(1, 3, 8)), requires_grad=True)
        labels = np.array([[2, IGNORE_INDEX, 5]])
        with Tape() as tape:
            loss = mlm_loss(logits, labels)
        grads = backward(tape, loss)
        g = grads[logits.node_id]
        assert g.shape == logits.data.shape
        # unlabeled position receives no gradient
        assert np.abs(g[0, 1]).max() == 0.0
        assert np.abs(g[0, 0]).max() > 0.0


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        state = init_adam_state(params)
        new, _ = adam_step(params, {"w": np.zeros(3)}, state, TrainingConfig(), step=1)
        assert np.array_equal(new["w"], params["w"])

    def test_quadratic_convergence(self):
        cfg = TrainingConfig(learning_rate=0.1)
        params = {"w": np.array([1.0])}
        state = init_adam_state(params)
        for step in range(1, 201):
            grads = {"w": 2.0 * params["w"]}
            params, state = adam_step(params, grads, state, cfg, step)
        assert abs(params["w"][0]) < 1e-3

    def test_first_step_magnitude_bounded_by_lr(self, rng):
        cfg = TrainingConfig(learning_rate=1e-2)
        params = {"w": rng.normal(size=20)}
        state = init_adam_state(params)
        g = rng.normal(size=20) * 100
        new, _ = adam_step(params, {"w": g}, state, cfg, step=1)
        delta = np.abs(new["w"] - params["w"])
        assert delta.max() <= cfg.learning_rate * (1 + 1e-6)

    def test_nan_gradient_aborts(self):
        params = {"w": np.ones(3)}
        state = init_adam_state(params)
        g = np.array([1.0, np.nan, 0.0])
        with pytest.raises(TrainingError):
            adam_step(params, {"w": g}, state, TrainingConfig(), step=1)

    def test_elementwise_ordering_irrelevant(self, rng):
        cfg = TrainingConfig(learning_rate=0.05)
        a = {"x": rng.normal(size=4), "y": rng.normal(size=3)}
        ga = {"x": rng.normal(size=4), "y": rng.normal(size=3)}
        b = {"y": a["y"].copy(), "x": a["x"].copy()}
        gb = {"y": ga["y"].copy(), "x": ga["x"].copy()}
        na, _ = adam_step(a, ga, init_adam_state(a), cfg, 1)
        nb, _ = adam_step(b, gb, init_adam_state(b), cfg, 1)
        for k in ("x", "y"):
            assert np.array_equal(na[k], nb[k])

    def test_bad_step_rejected(self):
        params = {"w": np.ones(1)}
        with pytest.raises(TrainingError):
            adam_step(params, {"w": np.ones(1)}, init_adam_state(params), TrainingConfig(), 0)

    def test_mismatched_state_rejected(self):
        params = {"w": np.ones(1)}
        state = AdamState(m={"q": np.zeros(1)}, v={"q": np.zeros(1)})
        with pytest.raises(TrainingError):
            adam_step(params, {"w": np.ones(1)}, state, TrainingConfig(), 1)

    def test_warmup_scales_first_steps(self):
        cfg = TrainingConfig(learning_rate=0.1, warmup_steps=10)
        params = {"w": np.array([1.0])}
        new, _ = adam_step(params, {"w": np.array([1.0])}, init_adam_state(params), cfg, 1)
        # effective lr is 0.1 * 1/10
        assert abs(params["w"][0] - new["w"][0]) <= 0.01 + 1e-9


def make_toy_setup(n_words=24):
    words = [f"w{i:02d}" for i in range(n_words)]
    vocab = word_vocab(words)
    rng = np.random.default_rng(0)
    corpus = [" ".join(rng.choice(words, size=6)) for _ in range(32)]
    model = ModelConfig(
        hidden_size=32,
        num_attention_heads=2,
        num_hidden_layers=2,
        vocab_size=len(vocab),
        max_position_embeddings=16,
        hidden_dropout_prob=0.0,
        attention_dropout_prob=0.0,
    )
    return corpus, vocab, model


class TestTrain:
    def test_loss_decreases_on_toy_corpus(self):
        corpus, vocab, model = make_toy_setup()
        cfg = TrainingConfig(
            learning_rate=1e-3, batch_size=16, max_steps=120, seed=1,
            mask_prob=0.25, max_seq_len=16,
        )
        result = train(corpus, vocab, model, cfg)
        assert result.curve[-1].loss < result.curve[0].loss
        assert all(np.isfinite(pt.loss) for pt in result.curve)

    def test_deterministic_curves(self):
        corpus, vocab, model = make_toy_setup()
        cfg = TrainingConfig(
            learning_rate=1e-3, batch_size=8, max_steps=25, seed=4,
            mask_prob=0.25, max_seq_len=16,
        )
        a = train(corpus, vocab, model, cfg)
        b = train(corpus, vocab, model, cfg)
        assert [pt.loss for pt in a.curve] == [pt.loss for pt in b.curve]
        assert [pt.masked_tokens for pt in a.curve] == [pt.masked_tokens for pt in b.curve]
        for name in a.store:
            assert np.array_equal(a.store[name].data, b.store[name].data)

    def test_zero_lr_is_identity(self):
        corpus, vocab, model = make_toy_setup()
        cfg = TrainingConfig(
            learning_rate=0.0, batch_size=8, max_steps=5, seed=2,
            mask_prob=0.25, max_seq_len=16,
        )
        before = init_parameters(model, seed=cfg.seed)
        result = train(corpus, vocab, model, cfg)
        for name in before:
            assert np.array_equal(result.store[name].data, before[name].data), name

    def test_emits_checkpoint_and_curve(self, tmp_path):
        corpus, vocab, model = make_toy_setup()
        cfg = TrainingConfig(
            learning_rate=1e-3, batch_size=8, max_steps=4, seed=0,
            mask_prob=0.25, max_seq_len=16,
        )
        result = train(corpus, vocab, model, cfg, out_dir=tmp_path)
        text = result.curve_path.read_text().splitlines()
        assert text[0] == ",".join(LOSS_CURVE_HEADER)
        assert len(text) == 1 + cfg.max_steps
        loaded = load_checkpoint(result.checkpoint_path)
        assert loaded.config == model
        for name in result.store:
            assert np.allclose(
                loaded[name].data,
                result.store[name].data.astype(np.float32),
            )

    def test_nan_halts_with_step_diagnostic(self):
        corpus, vocab, model = make_toy_setup()
        store = init_parameters(model, seed=0)
        store["mlm.output_bias"].data[0] = np.nan
        cfg = TrainingConfig(
            learning_rate=1e-3, batch_size=4, max_steps=3, seed=0,
            mask_prob=0.25, max_seq_len=16,
        )
        with pytest.raises(TrainingError, match="step 1"):
            train(corpus, vocab, model, cfg, init_store=store)

    def test_empty_corpus_rejected(self):
        _, vocab, model = make_toy_setup()
        with pytest.raises(InputError):
            train([], vocab, model, TrainingConfig())
