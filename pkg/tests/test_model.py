"""Pointer-generator model: attention, copy heads, mixture, decoding."""

import numpy as np
import pytest

from confnet2seq import confnet as cn
from confnet2seq import numcore as nc
from confnet2seq.data import BOS, EOS, ExtendedVocabulary, Vocabulary
from confnet2seq.errors import ContractError
from confnet2seq.model import (
    ModelConfig,
    ModelParams,
    SampleContext,
    StepDistribution,
    beam_decode,
    copy_answer,
    copy_confnet,
    decode_step,
    encode_sample,
    final_distribution,
    global_attention,
    greedy_decode,
    nll_loss,
    sample_loss,
    score_sequence,
    teacher_forced_distributions,
)

from util import random_normalized_network, toy_model, toy_vocab


def net_of(*slots, net_id="n"):
    return cn.ConfusionNetwork(
        net_id, tuple(cn.Bin(tuple(cn.Arc(t, p) for t, p in slot)) for slot in slots)
    )


@pytest.fixture
def small():
    rng = np.random.default_rng(0)
    vocab = toy_vocab(["what", "time", "is", "it", "the", "cat", "sat", "mat"])
    params = toy_model(rng, vocab, embed_dim=5, hidden=4, layers=2)
    net = cn.normalize(net_of([("what", 0.9), ("watt", 0.1)], [("time", 1.0)], [("is", 0.5), ("was", 0.5)]))
    answer = ("the", "cat")
    ext = ExtendedVocabulary.for_sample(vocab, net, answer)
    return rng, vocab, params, net, answer, ext


class TestGlobalAttention:
    def test_zero_maps_give_uniform_attention(self, small):
        rng, vocab, params, net, answer, _ = small
        params.attn_Wh.data[...] = 0.0
        params.attn_Ws.data[...] = 0.0
        params.attn_b.data[...] = 0.0
        enc = encode_sample(net, answer, params, vocab)
        attn = global_attention(enc.h_src, nc.Tensor(rng.normal(size=4)), params)
        total = enc.n_question + enc.m_answer
        np.testing.assert_allclose(attn.data, np.full(total, 1.0 / total), atol=1e-15)

    def test_single_source_state(self, small):
        rng, _, params, _, _, _ = small
        h_src = nc.Tensor(rng.normal(size=(1, 8)))
        attn = global_attention(h_src, nc.Tensor(rng.normal(size=4)), params)
        np.testing.assert_allclose(attn.data, [1.0], atol=0)

    def test_matches_extended_precision_formula(self, small):
        rng, _, params, _, _, _ = small
        for _ in range(50):
            h_src = nc.Tensor(rng.normal(size=(6, 8)))
            s = nc.Tensor(rng.normal(size=4))
            got = global_attention(h_src, s, params).data
            hl = h_src.data.astype(np.longdouble)
            scores = np.tanh(
                hl @ params.attn_Wh.data.astype(np.longdouble)
                + s.data.astype(np.longdouble) @ params.attn_Ws.data.astype(np.longdouble)
                + params.attn_b.data.astype(np.longdouble)
            ) @ params.attn_v.data.astype(np.longdouble)
            e = np.exp(scores - scores.max())
            want = (e / e.sum()).astype(np.float64)
            assert np.max(np.abs(got - want)) < 1e-12


class TestCopyHeads:
    def test_confnet_copy_worked_example(self):
        vocab = toy_vocab(["the"])
        net = net_of([("the", 1.0)], [("cat", 0.6), ("cap", 0.4)])
        ext = ExtendedVocabulary.for_sample(vocab, net, ())
        attn = nc.Tensor([0.3, 0.7])
        out = copy_confnet(attn, net, ext)
        assert out.data[ext.source_id("the")] == pytest.approx(0.3, abs=1e-15)
        assert out.data[ext.source_id("cat")] == pytest.approx(0.42, abs=1e-15)
        assert out.data[ext.source_id("cap")] == pytest.approx(0.28, abs=1e-15)

    def test_repeated_word_aggregates_across_bins(self):
        vocab = toy_vocab(["the"])
        net = net_of([("the", 1.0)], [("the", 1.0)])
        ext = ExtendedVocabulary.for_sample(vocab, net, ())
        out = copy_confnet(nc.Tensor([0.5, 0.5]), net, ext)
        assert out.data[ext.source_id("the")] == pytest.approx(1.0, abs=1e-15)

    def test_confnet_copy_matches_brute_force(self):
        rng = np.random.default_rng(1)
        vocab = toy_vocab(["the", "cat"])
        for _ in range(200):
            net = random_normalized_network(rng, max_bins=3, max_arcs=3)
            ext = ExtendedVocabulary.for_sample(vocab, net, ())
            raw = rng.uniform(0.1, 1.0, size=len(net.bins))
            attn = raw / raw.sum()
            out = copy_confnet(nc.Tensor(attn), net, ext).data
            masses: dict[str, float] = {}
            for i, b in enumerate(net.bins):
                for arc in b.arcs:
                    masses[arc.token] = masses.get(arc.token, 0.0) + attn[i] * arc.posterior
            for token, mass in masses.items():
                assert abs(out[ext.source_id(token)] - mass) <= 1e-15
            assert abs(out.sum() - sum(masses.values())) <= 1e-12

    def test_answer_copy_positional_example(self):
        vocab = toy_vocab(["the"])
        tokens = ("conan", "the", "destroyer")
        net = net_of([("x", 1.0)])
        ext = ExtendedVocabulary.for_sample(vocab, net, tokens)
        out = copy_answer(nc.Tensor([0.2, 0.3, 0.5]), tokens, ext)
        assert out.data[ext.source_id("conan")] == pytest.approx(0.2, abs=1e-15)
        assert out.data[ext.source_id("the")] == pytest.approx(0.3, abs=1e-15)
        assert out.data[ext.source_id("destroyer")] == pytest.approx(0.5, abs=1e-15)

    def test_answer_copy_aggregates_repeats(self):
        vocab = toy_vocab(["the"])
        net = net_of([("x", 1.0)])
        ext = ExtendedVocabulary.for_sample(vocab, net, ("the", "the"))
        out = copy_answer(nc.Tensor([0.4, 0.6]), ("the", "the"), ext)
        assert out.data[ext.source_id("the")] == pytest.approx(1.0, abs=1e-15)

    def test_answer_copy_matches_brute_force(self):
        rng = np.random.default_rng(2)
        vocab = toy_vocab(["a", "b"])
        pool = ["a", "b", "c", "d"]
        net = net_of([("x", 1.0)])
        for _ in range(200):
            m = int(rng.integers(1, 5))
            tokens = tuple(pool[i] for i in rng.integers(0, len(pool), size=m))
            ext = ExtendedVocabulary.for_sample(vocab, net, tokens)
            raw = rng.uniform(0.1, 1.0, size=m)
            attn = raw / raw.sum()
            out = copy_answer(nc.Tensor(attn), tokens, ext).data
            for token in set(tokens):
                want = sum(a for a, t in zip(attn, tokens) if t == token)
                assert abs(out[ext.source_id(token)] - want) <= 1e-15

    def test_slice_length_contract(self):
        vocab = toy_vocab(["a"])
        net = net_of([("a", 1.0)], [("b", 1.0)])
        ext = ExtendedVocabulary.for_sample(vocab, net, ("a",))
        with pytest.raises(ContractError):
            copy_confnet(nc.Tensor([1.0]), net, ext)
        with pytest.raises(ContractError):
            copy_answer(nc.Tensor([0.5, 0.5]), ("a",), ext)


class TestFinalDistribution:
    def build(self, p_gen_value):
        vocab = toy_vocab(["w"])  # base size 5
        net = net_of([("only_in_net", 1.0)])
        ext = ExtendedVocabulary.for_sample(vocab, net, ("w",))
        rng = np.random.default_rng(3)
        raw = rng.uniform(0.1, 1.0, size=len(vocab))
        p_vocab = nc.Tensor(raw / raw.sum())
        copy_cn = copy_confnet(nc.Tensor([0.6]), net, ext)
        copy_ans = copy_answer(nc.Tensor([0.4]), ("w",), ext)
        p_final = final_distribution(nc.Tensor(p_gen_value), p_vocab, copy_cn, copy_ans, ext)
        return ext, p_vocab, p_final

    def test_pure_generation_pads_with_zeros(self):
        ext, p_vocab, p_final = self.build(1.0)
        np.testing.assert_allclose(p_final.data[: len(ext.base)], p_vocab.data, atol=0)
        np.testing.assert_allclose(p_final.data[len(ext.base):], 0.0, atol=0)

    def test_pure_copy(self):
        ext, _, p_final = self.build(0.0)
        assert p_final.data[ext.source_id("only_in_net")] == pytest.approx(0.6, abs=1e-15)
        assert p_final.data[ext.source_id("w")] == pytest.approx(0.4, abs=1e-15)

    def test_mixture_substitution(self):
        vocab = toy_vocab(["w"])
        net = net_of([("w", 0.25), ("v", 0.75)])
        ext = ExtendedVocabulary.for_sample(vocab, net, ("w",))
        p_vocab_arr = np.zeros(len(vocab))
        p_vocab_arr[ext.source_id("w")] = 0.2
        p_vocab_arr[0] = 0.8
        copy_cn = copy_confnet(nc.Tensor([0.4]), net, ext)   # w gets 0.4*0.25 = 0.1
        copy_ans = copy_answer(nc.Tensor([0.3]), ("w",), ext)  # w gets 0.3
        p_final = final_distribution(
            nc.Tensor(0.5), nc.Tensor(p_vocab_arr), copy_cn, copy_ans, ext
        )
        # 0.5*0.2 + 0.5*(0.1 + 0.3) = 0.3
        assert p_final.data[ext.source_id("w")] == pytest.approx(0.3, abs=1e-15)


class TestEncodeSample:
    def test_source_count_is_bins_plus_answer_tokens(self, small):
        _, vocab, params, net, answer, _ = small
        enc = encode_sample(net, answer, params, vocab)
        assert enc.h_src.shape == (len(net.bins) + len(answer), 2 * 4)
        assert enc.n_question == len(net.bins)
        assert enc.m_answer == len(answer)

    def test_minimal_sample(self, small):
        _, vocab, params, _, _, _ = small
        net = cn.normalize(net_of([("what", 1.0)]))
        enc = encode_sample(net, ("cat",), params, vocab)
        assert enc.h_src.shape[0] == 2

    def test_init_state_is_stream_sum(self, small):
        _, vocab, params, net, answer, _ = small
        enc = encode_sample(net, answer, params, vocab)
        for (ih, ic), (qh, qc), (ah, ac) in zip(enc.init_state, enc.question_final, enc.answer_final):
            np.testing.assert_array_equal(ih.data, qh.data + ah.data)
            np.testing.assert_array_equal(ic.data, qc.data + ac.data)

    def test_answer_stream_independent_of_question(self, small):
        _, vocab, params, net, answer, _ = small
        other = cn.normalize(net_of([("cat", 0.5), ("sat", 0.5)], [("mat", 1.0)]))
        enc_a = encode_sample(net, answer, params, vocab)
        enc_b = encode_sample(other, answer, params, vocab)
        rows_a = enc_a.h_src.data[enc_a.n_question:]
        rows_b = enc_b.h_src.data[enc_b.n_question:]
        np.testing.assert_array_equal(rows_a, rows_b)

    def test_forward_direction_matches_unidirectional_run(self):
        rng = np.random.default_rng(4)
        vocab = toy_vocab(["a", "b", "c"])
        params = toy_model(rng, vocab, embed_dim=4, hidden=3, layers=1)
        net = random_normalized_network(rng, max_bins=4, tokens=["a", "b", "c"])
        enc = encode_sample(net, ("a", "b"), params, vocab)

        from confnet2seq.encoder import encode_network

        betas = [eb.beta for eb in encode_network(net, params.confnet_encoder, vocab)]
        uni, _ = nc.run_lstm(betas, params.enc_fwd[0])
        for i, h in enumerate(uni):
            np.testing.assert_array_equal(enc.h_src.data[i, :3], h.data)

    def test_empty_inputs_rejected(self, small):
        _, vocab, params, net, answer, _ = small
        with pytest.raises(ContractError):
            encode_sample(cn.ConfusionNetwork("e", ()), answer, params, vocab)
        with pytest.raises(ContractError):
            encode_sample(net, (), params, vocab)

    def test_shared_encoder_is_single_storage(self, small):
        _, _, params, _, _, _ = small
        q_fwd, q_bwd = params.question_encoder
        a_fwd, a_bwd = params.answer_encoder
        assert q_fwd is a_fwd and q_bwd is a_bwd
        named = params.named()
        opt = nc.Optimizer(nc.OptimizerConfig(kind="sgd", learning_rate=0.1), named)
        before = [id(t) for t in named.values()]
        for t in named.values():
            t.grad = np.ones_like(t.data)
        opt.step()
        assert [id(t) for t in params.named().values()] == before
        assert params.question_encoder[0][0].W is params.answer_encoder[0][0].W


class TestDecodeStep:
    def test_distributions_normalize(self, small):
        _, vocab, params, net, answer, ext = small
        enc = encode_sample(net, answer, params, vocab)
        ctx = SampleContext(net, answer, ext)
        dist, _ = decode_step(enc.init_state, BOS, enc, ctx, params)
        assert abs(dist.attn.data.sum() - 1.0) <= 1e-9
        assert abs(dist.p_vocab.data.sum() - 1.0) <= 1e-9
        assert abs(dist.p_final.data.sum() - 1.0) <= 1e-6
        assert 0.0 < float(dist.p_gen.data) < 1.0
        assert dist.p_final.data.shape == (len(ext),)

    def test_deterministic_bit_identical(self, small):
        _, vocab, params, net, answer, ext = small
        enc = encode_sample(net, answer, params, vocab)
        ctx = SampleContext(net, answer, ext)
        d1, s1 = decode_step(enc.init_state, BOS, enc, ctx, params)
        d2, s2 = decode_step(enc.init_state, BOS, enc, ctx, params)
        assert np.array_equal(d1.p_final.data, d2.p_final.data)
        assert np.array_equal(d1.attn.data, d2.attn.data)
        for (h1, c1), (h2, c2) in zip(s1, s2):
            assert np.array_equal(h1.data, h2.data)
            assert np.array_equal(c1.data, c2.data)

    def test_source_only_word_gets_pure_copy_mass(self, small):
        _, vocab, params, net, answer, ext = small
        enc = encode_sample(net, answer, params, vocab)
        ctx = SampleContext(net, answer, ext)
        dist, _ = decode_step(enc.init_state, BOS, enc, ctx, params)
        # "watt" exists only as a confusion-network arc
        idx = ext.source_id("watt")
        assert ext.is_extra(idx)
        copy_cn = copy_confnet(nc.Tensor(dist.attn.data[: enc.n_question]), net, ext)
        want = (1.0 - float(dist.p_gen.data)) * copy_cn.data[idx]
        assert dist.p_final.data[idx] == pytest.approx(want, abs=1e-15)

    def test_oov_feedback_equals_unk_feedback(self, small):
        _, vocab, params, net, answer, ext = small
        enc = encode_sample(net, answer, params, vocab)
        ctx = SampleContext(net, answer, ext)
        oov_id = ext.source_id("watt")
        d_oov, _ = decode_step(enc.init_state, oov_id, enc, ctx, params)
        d_unk, _ = decode_step(enc.init_state, 1, enc, ctx, params)
        assert np.array_equal(d_oov.p_final.data, d_unk.p_final.data)


class TestNllLoss:
    @staticmethod
    def dist_of(p_final):
        t = nc.Tensor(p_final)
        return StepDistribution(attn=t, p_gen=t, p_vocab=t, p_final=t)

    def test_certain_targets_give_zero_loss(self):
        dists = [self.dist_of([0.0, 1.0, 0.0]), self.dist_of([1.0, 0.0, 0.0])]
        loss = nll_loss(dists, [1, 0])
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_gives_log_k(self):
        k = 7
        dists = [self.dist_of(np.full(k, 1.0 / k))]
        loss = nll_loss(dists, [3])
        assert float(loss.data) == pytest.approx(np.log(k), abs=1e-12)

    def test_matches_direct_average(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            steps = int(rng.integers(1, 6))
            dists = []
            targets = []
            direct = []
            for _ in range(steps):
                raw = rng.uniform(0.01, 1.0, size=6)
                p = raw / raw.sum()
                t = int(rng.integers(0, 6))
                dists.append(self.dist_of(p))
                targets.append(t)
                direct.append(-np.log(max(p[t], 1e-12)))
            loss = nll_loss(dists, targets)
            assert float(loss.data) == pytest.approx(np.mean(direct), abs=1e-12)

    def test_probability_floor(self):
        dists = [self.dist_of([1.0, 0.0])]
        loss = nll_loss(dists, [1])
        assert float(loss.data) == pytest.approx(-np.log(1e-12), rel=1e-9)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            nll_loss([self.dist_of([1.0])], [0, 0])


def build_tiny_task(seed=6, vocab_words=("the", "cat", "sat", "on", "mat"), hidden=6):
    rng = np.random.default_rng(seed)
    vocab = toy_vocab(list(vocab_words))
    params = toy_model(rng, vocab, embed_dim=hidden, hidden=hidden, layers=2, max_len=12)
    net = cn.normalize(net_of([("the", 0.8), ("a", 0.2)], [("cat", 0.7), ("cap", 0.3)]))
    answer = ("mat",)
    ext = ExtendedVocabulary.for_sample(vocab, net, answer)
    target_tokens = ["the", "cat", "sat"]
    targets = [ext.target_id(t) for t in target_tokens] + [EOS]
    return rng, vocab, params, net, answer, ext, target_tokens, targets


class TestTrainingDynamics:
    def test_loss_decreases_monotonically_with_small_lr(self):
        rng, vocab, params, net, answer, ext, _, targets = build_tiny_task()
        opt = nc.Optimizer(nc.OptimizerConfig(kind="sgd", learning_rate=0.05), params.named())
        losses = []
        for _ in range(50):
            opt.zero_grad()
            with nc.Tape() as tape:
                loss = sample_loss(net, answer, targets, params, vocab, ext)
            nc.backward(loss, tape)
            opt.step()
            losses.append(float(loss.data))
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_overfit_single_sample_reproduces_target(self):
        rng, vocab, params, net, answer, ext, target_tokens, targets = build_tiny_task(seed=7)
        opt = nc.Optimizer(nc.OptimizerConfig(kind="adam", learning_rate=0.01,
                                              grad_clip_norm=5.0), params.named())
        for step in range(400):
            opt.zero_grad()
            with nc.Tape() as tape:
                loss = sample_loss(net, answer, targets, params, vocab, ext)
            nc.backward(loss, tape)
            opt.step()
            if float(loss.data) < 0.02:
                break
        assert greedy_decode(net, answer, params, vocab) == target_tokens


class TestDecoding:
    def random_case(self, rng):
        words = ["a", "b", "c", "d", "e", "f"]
        vocab = toy_vocab(words)
        params = toy_model(rng, vocab, embed_dim=4, hidden=4, layers=1, max_len=6)
        net = random_normalized_network(rng, max_bins=3, max_arcs=2, tokens=words)
        answer = tuple(words[i] for i in rng.integers(0, len(words), size=2))
        return vocab, params, net, answer

    def test_beam_width_one_equals_greedy(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            vocab, params, net, answer = self.random_case(rng)
            assert beam_decode(net, answer, params, vocab, beam_width=1) == \
                greedy_decode(net, answer, params, vocab)

    def test_beam_three_never_scores_below_greedy(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            vocab, params, net, answer = self.random_case(rng)
            ext = ExtendedVocabulary.for_sample(vocab, net, answer)
            g = greedy_decode(net, answer, params, vocab)
            b = beam_decode(net, answer, params, vocab, beam_width=3)
            g_ids = [ext.target_id(t) for t in g] + [EOS]
            b_ids = [ext.target_id(t) for t in b] + [EOS]
            g_score = score_sequence(net, answer, g_ids, params, vocab)
            b_score = score_sequence(net, answer, b_ids, params, vocab)
            assert b_score >= g_score - 1e-9

    def test_teacher_forcing_feeds_gold_tokens(self, small):
        _, vocab, params, net, answer, ext = small
        targets = [ext.target_id("the"), ext.target_id("cat"), EOS]
        dists = teacher_forced_distributions(net, answer, targets, params, vocab, ext)
        assert len(dists) == 3
        for d in dists:
            assert abs(d.p_final.data.sum() - 1.0) <= 1e-6
