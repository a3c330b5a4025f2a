"""Pointer-generator over a confusion-network question and a factoid answer.

Question bins (encoded by the graph encoder) and answer word embeddings run
through one shared stacked bidirectional LSTM; their hidden states are
stacked into a single source list.  At every decoder step a global
attention over that list feeds three heads: a generator softmax over the
base vocabulary, a graph-copy head that multiplies per-bin attention into
arc posteriors, and a text-copy head over answer positions.  A sigmoid
switch mixes generation and copy mass into one distribution over the
extended (base + source) vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .confnet import ConfusionNetwork
from .data import BOS, EOS, UNK, ExtendedVocabulary, Vocabulary
from .encoder import ConfNetEncoderParams, EncodedBin, encode_network
from .errors import ContractError, DivergenceError, ShapeError
from .numcore import (
    LstmLayer,
    Tensor,
    add,
    clip_min,
    concat,
    dot,
    embedding_row,
    gather1d,
    init_lstm_layer,
    log,
    matmul,
    mean_,
    mul,
    neg,
    run_bilstm,
    scale,
    sigmoid,
    slice1d,
    softmax,
    stack_rows,
    step_stack,
    sub,
    tanh,
    uniform_init,
    weighted_scatter,
    zeros,
)


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 300
    hidden_size: int = 512
    layers: int = 3
    max_bins: int = 50
    max_arcs: int = 20
    max_len: int = 50

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden_size": self.hidden_size,
            "layers": self.layers,
            "max_bins": self.max_bins,
            "max_arcs": self.max_arcs,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


class ModelParams:
    """All learned tensors, addressable by stable names.

    The question and answer streams run through the *same* encoder layer
    objects (single storage), which is what makes their weights shared.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.embedding: Tensor
        self.enc_W1: Tensor
        self.enc_W2: Tensor
        self.enc_fwd: list[LstmLayer] = []
        self.enc_bwd: list[LstmLayer] = []
        self.dec: list[LstmLayer] = []
        self.attn_Wh: Tensor
        self.attn_Ws: Tensor
        self.attn_v: Tensor
        self.attn_b: Tensor
        self.pgen_wc: Tensor
        self.pgen_ws: Tensor
        self.pgen_wx: Tensor
        self.pgen_b: Tensor
        self.out_W: Tensor
        self.out_b: Tensor

    @classmethod
    def build(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        p = cls(config)
        e, h, v = config.embed_dim, config.hidden_size, config.vocab_size
        p.embedding = uniform_init(rng, (v, e), name="embedding")
        p.enc_W1 = uniform_init(rng, (e, e), name="encoder.W1")
        p.enc_W2 = uniform_init(rng, (e,), name="encoder.W2")
        for depth in range(config.layers):
            in_size = e if depth == 0 else 2 * h
            p.enc_fwd.append(init_lstm_layer(rng, in_size, h, name=f"enc.l{depth}.fwd"))
            p.enc_bwd.append(init_lstm_layer(rng, in_size, h, name=f"enc.l{depth}.bwd"))
        for depth in range(config.layers):
            in_size = e if depth == 0 else h
            p.dec.append(init_lstm_layer(rng, in_size, h, name=f"dec.l{depth}"))
        p.attn_Wh = uniform_init(rng, (2 * h, h), name="attn.Wh")
        p.attn_Ws = uniform_init(rng, (h, h), name="attn.Ws")
        p.attn_v = uniform_init(rng, (h,), name="attn.v")
        p.attn_b = uniform_init(rng, (h,), name="attn.b")
        p.pgen_wc = uniform_init(rng, (2 * h,), name="pgen.wc")
        p.pgen_ws = uniform_init(rng, (h,), name="pgen.ws")
        p.pgen_wx = uniform_init(rng, (e,), name="pgen.wx")
        p.pgen_b = uniform_init(rng, (), name="pgen.b")
        p.out_W = uniform_init(rng, (v, 3 * h), name="out.W")
        p.out_b = uniform_init(rng, (v,), name="out.b")
        return p

    @property
    def confnet_encoder(self) -> ConfNetEncoderParams:
        return ConfNetEncoderParams(self.embedding, self.enc_W1, self.enc_W2)

    # Both streams intentionally resolve to the identical layer objects.
    @property
    def question_encoder(self) -> tuple[list[LstmLayer], list[LstmLayer]]:
        return self.enc_fwd, self.enc_bwd

    @property
    def answer_encoder(self) -> tuple[list[LstmLayer], list[LstmLayer]]:
        return self.enc_fwd, self.enc_bwd

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            "embedding": self.embedding,
            "encoder.W1": self.enc_W1,
            "encoder.W2": self.enc_W2,
        }
        for depth, (f, b) in enumerate(zip(self.enc_fwd, self.enc_bwd)):
            out[f"enc.l{depth}.fwd.W"] = f.W
            out[f"enc.l{depth}.fwd.b"] = f.b
            out[f"enc.l{depth}.bwd.W"] = b.W
            out[f"enc.l{depth}.bwd.b"] = b.b
        for depth, layer in enumerate(self.dec):
            out[f"dec.l{depth}.W"] = layer.W
            out[f"dec.l{depth}.b"] = layer.b
        out.update(
            {
                "attn.Wh": self.attn_Wh,
                "attn.Ws": self.attn_Ws,
                "attn.v": self.attn_v,
                "attn.b": self.attn_b,
                "pgen.wc": self.pgen_wc,
                "pgen.ws": self.pgen_ws,
                "pgen.wx": self.pgen_wx,
                "pgen.b": self.pgen_b,
                "out.W": self.out_W,
                "out.b": self.out_b,
            }
        )
        return out

    @classmethod
    def from_named(cls, config: ModelConfig, named: dict[str, Tensor]) -> "ModelParams":
        p = cls(config)
        try:
            p.embedding = named["embedding"]
            p.enc_W1 = named["encoder.W1"]
            p.enc_W2 = named["encoder.W2"]
            for depth in range(config.layers):
                p.enc_fwd.append(LstmLayer(named[f"enc.l{depth}.fwd.W"], named[f"enc.l{depth}.fwd.b"]))
                p.enc_bwd.append(LstmLayer(named[f"enc.l{depth}.bwd.W"], named[f"enc.l{depth}.bwd.b"]))
                p.dec.append(LstmLayer(named[f"dec.l{depth}.W"], named[f"dec.l{depth}.b"]))
            p.attn_Wh = named["attn.Wh"]
            p.attn_Ws = named["attn.Ws"]
            p.attn_v = named["attn.v"]
            p.attn_b = named["attn.b"]
            p.pgen_wc = named["pgen.wc"]
            p.pgen_ws = named["pgen.ws"]
            p.pgen_wx = named["pgen.wx"]
            p.pgen_b = named["pgen.b"]
            p.out_W = named["out.W"]
            p.out_b = named["out.b"]
        except KeyError as exc:
            raise ContractError(f"parameter set is missing tensor {exc}") from None
        return p


@dataclass
class EncoderOutputs:
    """Stacked source states: question rows first, then answer rows."""

    h_src: Tensor                # (n + m, 2H)
    n_question: int
    m_answer: int
    init_state: list[tuple[Tensor, Tensor]]       # decoder (h, c) per layer
    encoded_bins: list[EncodedBin]
    question_final: list[tuple[Tensor, Tensor]]   # per layer, summed over directions
    answer_final: list[tuple[Tensor, Tensor]]


@dataclass
class StepDistribution:
    attn: Tensor     # (n + m,)
    p_gen: Tensor    # ()
    p_vocab: Tensor  # (V,)
    p_final: Tensor  # (V + extras,)


def encode_sample(net: ConfusionNetwork, answer_tokens, params: ModelParams,
                  vocab: Vocabulary, drop=None) -> EncoderOutputs:
    """Run both source streams through the shared encoder stack.

    The decoder start state is the elementwise sum of the two streams'
    final states (directions summed first, per layer).
    """
    answer_tokens = list(answer_tokens)
    if net.is_empty:
        raise ContractError(f"cannot encode sample with empty question network {net.id!r}")
    if not answer_tokens:
        raise ContractError("cannot encode sample with an empty factoid answer")
    if len(answer_tokens) > params.config.max_len:
        raise ContractError(
            f"answer has {len(answer_tokens)} tokens, limit is {params.config.max_len}"
        )
    encoded_bins = encode_network(net, params.confnet_encoder, vocab)
    q_seq = [eb.beta for eb in encoded_bins]
    a_seq = [embedding_row(params.embedding, vocab.id(tok)) for tok in answer_tokens]
    fwd, bwd = params.question_encoder
    h_q, finals_q = run_bilstm(q_seq, fwd, bwd, drop)
    fwd, bwd = params.answer_encoder
    h_a, finals_a = run_bilstm(a_seq, fwd, bwd, drop)

    question_final = [(add(f[0], b[0]), add(f[1], b[1])) for f, b in finals_q]
    answer_final = [(add(f[0], b[0]), add(f[1], b[1])) for f, b in finals_a]
    init_state = [
        (add(qh, ah), add(qc, ac))
        for (qh, qc), (ah, ac) in zip(question_final, answer_final)
    ]
    return EncoderOutputs(
        h_src=stack_rows(h_q + h_a),
        n_question=len(q_seq),
        m_answer=len(a_seq),
        init_state=init_state,
        encoded_bins=encoded_bins,
        question_final=question_final,
        answer_final=answer_final,
    )


def global_attention(h_src: Tensor, s_t: Tensor, params: ModelParams) -> Tensor:
    """softmax over source positions of v . tanh(Wh h_i + Ws s_t + b)."""
    if h_src.ndim != 2:
        raise ShapeError(f"h_src must be 2-D, got shape {h_src.shape}")
    scores = matmul(
        tanh(add(add(matmul(h_src, params.attn_Wh), matmul(s_t, params.attn_Ws)), params.attn_b)),
        params.attn_v,
    )
    return softmax(scores)


def _confnet_scatter_arrays(net: ConfusionNetwork, ext: ExtendedVocabulary):
    pos, out, coeff = [], [], []
    for i, b in enumerate(net.bins):
        for arc in b.arcs:
            pos.append(i)
            out.append(ext.source_id(arc.token))
            coeff.append(arc.posterior)
    return (
        np.asarray(pos, dtype=np.int64),
        np.asarray(out, dtype=np.int64),
        np.asarray(coeff, dtype=np.float64),
    )


def _answer_scatter_arrays(answer_tokens, ext: ExtendedVocabulary):
    pos = np.arange(len(answer_tokens), dtype=np.int64)
    out = np.asarray([ext.source_id(tok) for tok in answer_tokens], dtype=np.int64)
    coeff = np.ones(len(answer_tokens), dtype=np.float64)
    return pos, out, coeff


def copy_confnet(attn_question: Tensor, net: ConfusionNetwork,
                 ext: ExtendedVocabulary) -> Tensor:
    """Joint copy probability per token: sum over arcs of
    (bin attention) * (arc posterior), aggregated across repeats."""
    if attn_question.shape != (len(net.bins),):
        raise ContractError(
            f"attention slice has {attn_question.shape[0]} weights for {len(net.bins)} bins"
        )
    pos, out, coeff = _confnet_scatter_arrays(net, ext)
    return weighted_scatter(attn_question, pos, out, coeff, len(ext))


def copy_answer(attn_answer: Tensor, answer_tokens, ext: ExtendedVocabulary) -> Tensor:
    """Text copy probability per token: attention mass summed per word."""
    answer_tokens = list(answer_tokens)
    if attn_answer.shape != (len(answer_tokens),):
        raise ContractError(
            f"attention slice has {attn_answer.shape[0]} weights for {len(answer_tokens)} answer tokens"
        )
    pos, out, coeff = _answer_scatter_arrays(answer_tokens, ext)
    return weighted_scatter(attn_answer, pos, out, coeff, len(ext))


def final_distribution(p_gen: Tensor, p_vocab: Tensor, copy_cn: Tensor,
                       copy_ans: Tensor, ext: ExtendedVocabulary) -> Tensor:
    """p_gen * P_vocab scattered over base indices plus (1 - p_gen) times the
    combined copy mass; source-only words therefore carry pure copy mass."""
    if p_vocab.shape != (len(ext.base),):
        raise ShapeError(f"p_vocab shape {p_vocab.shape} does not match base vocabulary {len(ext.base)}")
    generated = mul(p_vocab, p_gen)
    if ext.extra_tokens:
        generated = concat([generated, zeros(len(ext.extra_tokens))])
    copied = mul(add(copy_cn, copy_ans), sub(Tensor(1.0), p_gen))
    return add(generated, copied)


class SampleContext:
    """Per-sample constants reused across decode steps."""

    def __init__(self, net: ConfusionNetwork, answer_tokens, ext: ExtendedVocabulary):
        self.net = net
        self.answer_tokens = list(answer_tokens)
        self.ext = ext
        self.cn_arrays = _confnet_scatter_arrays(net, ext)
        self.ans_arrays = _answer_scatter_arrays(self.answer_tokens, ext)


def decode_step(state, prev_token_id: int, enc: EncoderOutputs, ctx: SampleContext,
                params: ModelParams, drop=None):
    """One decoder step.  Returns (StepDistribution, next state).

    ``prev_token_id`` is an extended-vocabulary index; copied
    out-of-vocabulary tokens feed back through the UNK embedding.
    """
    base_size = len(ctx.ext.base)
    feed = prev_token_id if prev_token_id < base_size else UNK
    x = embedding_row(params.embedding, feed)
    s_t, new_state = step_stack(x, state, params.dec, drop)

    attn = global_attention(enc.h_src, s_t, params)
    context = matmul(attn, enc.h_src)
    n, m = enc.n_question, enc.m_answer
    attn_q = slice1d(attn, 0, n)
    attn_a = slice1d(attn, n, n + m)

    copy_cn = weighted_scatter(attn_q, *ctx.cn_arrays, len(ctx.ext))
    copy_ans = weighted_scatter(attn_a, *ctx.ans_arrays, len(ctx.ext))

    p_gen = sigmoid(
        add(
            add(dot(params.pgen_wc, context), dot(params.pgen_ws, s_t)),
            add(dot(params.pgen_wx, x), params.pgen_b),
        )
    )
    p_vocab = softmax(add(matmul(params.out_W, concat([s_t, context])), params.out_b))
    p_final = final_distribution(p_gen, p_vocab, copy_cn, copy_ans, ctx.ext)
    dist = StepDistribution(attn=attn, p_gen=p_gen, p_vocab=p_vocab, p_final=p_final)
    return dist, new_state


def teacher_forced_distributions(net: ConfusionNetwork, answer_tokens, target_ids,
                                 params: ModelParams, vocab: Vocabulary,
                                 ext: ExtendedVocabulary, drop=None) -> list[StepDistribution]:
    enc = encode_sample(net, answer_tokens, params, vocab, drop)
    ctx = SampleContext(net, answer_tokens, ext)
    state = enc.init_state
    prev = BOS
    dists = []
    for target in target_ids:
        dist, state = decode_step(state, prev, enc, ctx, params, drop)
        dists.append(dist)
        prev = int(target)
    return dists


PROB_FLOOR = 1e-12


def nll_loss(dists: list[StepDistribution], target_ids) -> Tensor:
    """Mean over steps of -log p_final(target), probabilities floored at 1e-12.

    Target ids must already be extended-vocabulary indices (encoding a
    target token that is neither in the vocabulary nor among the sample's
    source words raises DataError at encoding time).
    """
    target_ids = list(target_ids)
    if len(dists) != len(target_ids):
        raise ContractError(f"{len(dists)} step distributions for {len(target_ids)} targets")
    if not dists:
        raise ContractError("nll_loss needs at least one step")
    picked = concat([gather1d(d.p_final, [t]) for d, t in zip(dists, target_ids)])
    return neg(mean_(log(clip_min(picked, PROB_FLOOR))))


def sample_loss(net: ConfusionNetwork, answer_tokens, target_ids, params: ModelParams,
                vocab: Vocabulary, ext: ExtendedVocabulary, drop=None) -> Tensor:
    if len(target_ids) > params.config.max_len + 1:
        raise ContractError(f"target has {len(target_ids)} tokens, limit is {params.config.max_len} + end marker")
    dists = teacher_forced_distributions(net, answer_tokens, target_ids, params, vocab, ext, drop)
    return nll_loss(dists, target_ids)


def batch_loss(batch, params: ModelParams, vocab: Vocabulary, drop=None) -> Tensor:
    """Mean of per-sample teacher-forced losses over a padded batch.

    Samples are rebuilt from the padded arrays and masks, so the masks must
    label exactly the real positions for this to agree with unbatched
    evaluation.
    """
    views = batch.unpack()
    if not views:
        raise ContractError("cannot compute the loss of an empty batch")
    total = None
    for view in views:
        loss = sample_loss(view.net, view.answer_tokens, view.target_ids, params,
                           vocab, view.ext, drop)
        total = loss if total is None else add(total, loss)
    return scale(total, 1.0 / len(views))


def greedy_decode(net: ConfusionNetwork, answer_tokens, params: ModelParams,
                  vocab: Vocabulary, max_len: int | None = None) -> list[str]:
    """Argmax decoding until the end marker; copied OOV tokens come out
    verbatim.  An empty output is legal."""
    max_len = max_len or params.config.max_len
    ext = ExtendedVocabulary.for_sample(vocab, net, answer_tokens)
    enc = encode_sample(net, answer_tokens, params, vocab)
    ctx = SampleContext(net, answer_tokens, ext)
    state = enc.init_state
    prev = BOS
    tokens: list[str] = []
    for _ in range(max_len):
        dist, state = decode_step(state, prev, enc, ctx, params)
        chosen = int(np.argmax(dist.p_final.data))
        if chosen == EOS:
            break
        tokens.append(ext.token(chosen))
        prev = chosen
    return tokens


@dataclass
class _Hypothesis:
    token_ids: tuple[int, ...]
    log_prob: float
    state: list
    finished: bool = False

    def normalized(self) -> float:
        return self.log_prob / max(1, len(self.token_ids))


def beam_decode(net: ConfusionNetwork, answer_tokens, params: ModelParams,
                vocab: Vocabulary, beam_width: int = 5,
                max_len: int | None = None) -> list[str]:
    """Beam search over summed log-probabilities; final ranking is
    length-normalized.  Ties break deterministically (score, then lower
    token index), so width 1 reproduces greedy decoding."""
    if beam_width < 1:
        raise ContractError(f"beam width must be >= 1, got {beam_width}")
    max_len = max_len or params.config.max_len
    ext = ExtendedVocabulary.for_sample(vocab, net, answer_tokens)
    enc = encode_sample(net, answer_tokens, params, vocab)
    ctx = SampleContext(net, answer_tokens, ext)

    live = [_Hypothesis((), 0.0, enc.init_state)]
    done: list[_Hypothesis] = []
    for _ in range(max_len):
        if not live:
            break
        scores = []
        states = []
        for hyp in live:
            prev = hyp.token_ids[-1] if hyp.token_ids else BOS
            dist, state = decode_step(state=hyp.state, prev_token_id=prev, enc=enc,
                                      ctx=ctx, params=params)
            scores.append(hyp.log_prob + np.log(np.maximum(dist.p_final.data, PROB_FLOOR)))
            states.append(state)
        flat = np.concatenate(scores)
        width = len(scores[0])
        order = np.argsort(-flat, kind="stable")[: beam_width]
        next_live: list[_Hypothesis] = []
        for flat_idx in order:
            hyp_idx, token_id = divmod(int(flat_idx), width)
            parent = live[hyp_idx]
            candidate = _Hypothesis(
                token_ids=parent.token_ids + (token_id,),
                log_prob=float(flat[flat_idx]),
                state=states[hyp_idx],
                finished=token_id == EOS,
            )
            if candidate.finished:
                done.append(candidate)
            else:
                next_live.append(candidate)
        live = next_live
    done.extend(live)
    best = max(done, key=lambda h: (h.normalized(), -len(h.token_ids)))
    return [ext.token(t) for t in best.token_ids if t != EOS]


def score_sequence(net: ConfusionNetwork, answer_tokens, token_ids, params: ModelParams,
                   vocab: Vocabulary) -> float:
    """Summed log-probability the model assigns to a token-id sequence
    (extended-vocabulary indices, end marker included)."""
    ext = ExtendedVocabulary.for_sample(vocab, net, answer_tokens)
    enc = encode_sample(net, answer_tokens, params, vocab)
    ctx = SampleContext(net, answer_tokens, ext)
    state = enc.init_state
    prev = BOS
    total = 0.0
    for token_id in token_ids:
        dist, state = decode_step(state, prev, enc, ctx, params)
        total += float(np.log(max(float(dist.p_final.data[token_id]), PROB_FLOOR)))
        prev = int(token_id)
    return total


def check_finite_loss(loss: Tensor, step: int) -> None:
    if not np.isfinite(loss.data):
        raise DivergenceError(f"non-finite loss {float(loss.data)!r} at step {step}")
