"""Corpus ingestion, vocabularies, pretrained embeddings, and batching.

The canonical corpus format is a JSON-lines manifest; each line is an object
with ``id``, ``confnet`` (a path to a sausage/JSON file, relative to the
manifest, or an inline JSON network object), ``factoid`` and ``answer``
text fields.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import confnet as cn
from .errors import ContractError, DataError, DegenerateBinError, FormatError, ParseError
from .numcore import Tensor, uniform_init

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

#: Question representations matching the three evaluation conditions.
INPUT_MODES = ("confnet", "clean_confnet", "best_hypothesis")


def tokenize(text: str) -> list[str]:
    """Case-fold and split on whitespace (idempotent)."""
    return text.casefold().split()


class Vocabulary:
    """Token/index bijection with fixed reserved entries at indices 0-3."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[: len(RESERVED_TOKENS)] != list(RESERVED_TOKENS):
            tokens = list(RESERVED_TOKENS) + tokens
        self._tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}
        if len(self._index) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def lookup(self, token: str) -> int | None:
        return self._index.get(token)

    def token(self, index: int) -> str:
        return self._tokens[index]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)


class ExtendedVocabulary:
    """Base vocabulary plus one sample's copyable source tokens.

    Extra indices start at ``len(base)`` and follow first-occurrence order:
    confusion-network arcs (bin by bin), then factoid-answer words.
    """

    def __init__(self, base: Vocabulary, extra_tokens):
        self.base = base
        extras = []
        seen = set()
        for tok in extra_tokens:
            if tok in base or tok in seen:
                if tok in base:
                    raise ContractError(f"extended-vocabulary token {tok!r} collides with the base vocabulary")
                continue
            seen.add(tok)
            extras.append(tok)
        self.extra_tokens = tuple(extras)
        self._extra_index = {t: len(base) + i for i, t in enumerate(extras)}

    @classmethod
    def for_sample(cls, base: Vocabulary, net: cn.ConfusionNetwork, answer_tokens) -> "ExtendedVocabulary":
        extras = []
        seen = set()
        for b in net.bins:
            for arc in b.arcs:
                if arc.token not in base and arc.token not in seen:
                    seen.add(arc.token)
                    extras.append(arc.token)
        for tok in answer_tokens:
            if tok not in base and tok not in seen:
                seen.add(tok)
                extras.append(tok)
        return cls(base, extras)

    def __len__(self) -> int:
        return len(self.base) + len(self.extra_tokens)

    def source_id(self, token: str) -> int:
        """Index of a token known to occur in this sample's sources."""
        idx = self.base.lookup(token)
        if idx is not None:
            return idx
        return self._extra_index[token]

    def target_id(self, token: str) -> int:
        """Index for a training target; unknown tokens are a data error."""
        idx = self.base.lookup(token)
        if idx is not None:
            return idx
        idx = self._extra_index.get(token)
        if idx is None:
            raise DataError(
                f"target token {token!r} is neither in the vocabulary nor among this sample's source words"
            )
        return idx

    def token(self, index: int) -> str:
        if index < len(self.base):
            return self.base.token(index)
        return self.extra_tokens[index - len(self.base)]

    def is_extra(self, index: int) -> bool:
        return index >= len(self.base)


@dataclass(frozen=True)
class Sample:
    """One corpus triple plus bookkeeping.

    ``question_net`` already reflects the requested input mode (raw,
    noise-pruned, or a single-arc network built from the best hypothesis).
    ``ordinal`` is the zero-based manifest line position, used to keep
    generation output aligned with its input even when samples are dropped.
    """

    id: str
    question_net: cn.ConfusionNetwork
    factoid_answer: tuple[str, ...]
    full_answer: tuple[str, ...]
    best_hypothesis_text: tuple[str, ...] | None = None
    ordinal: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question_net": json.loads(cn.serialize_json([self.question_net]))[0],
            "factoid_answer": list(self.factoid_answer),
            "full_answer": list(self.full_answer),
            "best_hypothesis_text": list(self.best_hypothesis_text or []),
            "ordinal": self.ordinal,
        }


@dataclass(frozen=True)
class Rejection:
    ordinal: int
    id: str
    reason: str


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    rejected: tuple[Rejection, ...] = ()

    def __len__(self) -> int:
        return len(self.samples)

    def to_json(self) -> str:
        return json.dumps(
            {
                "samples": [s.to_dict() for s in self.samples],
                "rejected": [[r.ordinal, r.id, r.reason] for r in self.rejected],
            },
            ensure_ascii=False,
            sort_keys=True,
        )


def singleton_network(net_id: str, tokens) -> cn.ConfusionNetwork:
    """A width-1 network carrying one token per bin with full posterior."""
    bins = tuple(cn.Bin((cn.Arc(tok, 1.0),)) for tok in tokens)
    return cn.ConfusionNetwork(net_id, bins)


def question_network_for_mode(
    raw: cn.ConfusionNetwork,
    mode: str,
    noise: cn.NoiseLexicon | None = None,
) -> cn.ConfusionNetwork:
    """Build the question representation for one input mode from a
    normalized raw network."""
    if mode == "confnet":
        return raw
    if mode == "clean_confnet":
        return cn.prune_noise(raw, noise)
    if mode == "best_hypothesis":
        return singleton_network(raw.id, cn.best_hypothesis(raw))
    raise ContractError(f"unknown input mode {mode!r}; expected one of {INPUT_MODES}")


def load_corpus(
    manifest_path,
    mode: str = "clean_confnet",
    max_bins: int = cn.DEFAULT_MAX_BINS,
    max_arcs: int = cn.DEFAULT_MAX_ARCS,
    max_len: int = 50,
    noise: cn.NoiseLexicon | None = None,
) -> Dataset:
    """Read a JSON-lines manifest into Samples, in file order.

    Networks are parsed, normalized and transformed per ``mode``.  Samples
    whose question network ends up empty (or whose text fields are empty)
    are collected under ``rejected`` rather than raising; malformed manifest
    lines and unparseable networks are errors.
    """
    if mode not in INPUT_MODES:
        raise ContractError(f"unknown input mode {mode!r}; expected one of {INPUT_MODES}")
    manifest_path = Path(manifest_path)
    base_dir = manifest_path.parent
    samples: list[Sample] = []
    rejected: list[Rejection] = []
    with open(manifest_path, encoding="utf-8") as fh:
        for ordinal, raw_line in enumerate(fh):
            line_no = ordinal + 1
            if not raw_line.strip():
                continue
            try:
                record = json.loads(raw_line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: manifest line is not valid JSON: {exc}") from None
            missing = [k for k in ("id", "confnet", "factoid", "answer") if k not in record]
            if missing:
                raise DataError(f"line {line_no}: manifest record is missing fields {missing}")
            sample_id = str(record["id"])
            try:
                raw_net = _read_network(record["confnet"], base_dir, max_bins, max_arcs)
            except ParseError as exc:
                raise DataError(f"sample {sample_id!r}: cannot parse confusion network: {exc}") from None
            try:
                raw_net = cn.normalize(raw_net)
            except DegenerateBinError as exc:
                raise DataError(f"sample {sample_id!r}: {exc}") from None
            net = question_network_for_mode(
                cn.ConfusionNetwork(sample_id, raw_net.bins), mode, noise
            )
            factoid = tuple(tokenize(str(record["factoid"]))[:max_len])
            answer = tuple(tokenize(str(record["answer"]))[:max_len])
            best = tuple(cn.best_hypothesis(raw_net))
            if net.is_empty:
                rejected.append(Rejection(ordinal, sample_id, f"question network is empty in mode {mode!r}"))
                continue
            if not factoid or not answer:
                rejected.append(Rejection(ordinal, sample_id, "empty factoid or answer text"))
                continue
            samples.append(
                Sample(
                    id=sample_id,
                    question_net=net,
                    factoid_answer=factoid,
                    full_answer=answer,
                    best_hypothesis_text=best,
                    ordinal=ordinal,
                )
            )
    return Dataset(tuple(samples), tuple(rejected))


def _read_network(spec, base_dir: Path, max_bins: int, max_arcs: int) -> cn.ConfusionNetwork:
    if isinstance(spec, dict):
        nets = cn.parse_json(json.dumps(spec), max_bins, max_arcs)
    elif isinstance(spec, str):
        path = base_dir / spec
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        nets = cn.parse_any(text, max_bins, max_arcs)
    else:
        raise DataError(f"confnet field must be a path or an inline object, got {type(spec).__name__}")
    if len(nets) != 1:
        raise DataError(f"expected exactly one network per sample, found {len(nets)}")
    return nets[0]


def build_vocab(dataset: Dataset, max_size: int = 50000, min_freq: int = 1) -> Vocabulary:
    """Frequency-ranked vocabulary (ties broken lexicographically) over arc
    tokens, factoid words and answer words; reserved tokens prepended."""
    if not dataset.samples:
        raise ContractError("cannot build a vocabulary from an empty dataset")
    counts: Counter[str] = Counter()
    for s in dataset.samples:
        for b in s.question_net.bins:
            counts.update(a.token for a in b.arcs)
        counts.update(s.factoid_answer)
        counts.update(s.full_answer)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, freq in ranked if freq >= min_freq][:max_size]
    return Vocabulary(kept)


@dataclass
class EmbeddingTable:
    """Vocabulary-aligned word vectors; rows missing from the pretrained
    file come from the seeded initializer."""

    table: Tensor
    trainable: bool
    coverage: float
    matched: int


def load_embeddings(path, vocab: Vocabulary, rng: np.random.Generator,
                    trainable: bool = True) -> EmbeddingTable:
    """Read a text embedding file (token then E floats per line)."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split(" ")
            if len(fields) < 2:
                continue
            token, values = fields[0], fields[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise FormatError(
                    f"embedding dimension changed from {dim} to {len(values)}", line_no
                )
            if token in vocab:
                try:
                    vectors[token] = np.array([float(v) for v in values], dtype=np.float64)
                except ValueError:
                    raise FormatError(f"non-numeric embedding value for {token!r}", line_no) from None
    if dim is None:
        raise FormatError(f"embedding file {path} holds no vectors")
    table = uniform_init(rng, (len(vocab), dim), name="embedding")
    matched = 0
    for token, vec in vectors.items():
        table.data[vocab.id(token)] = vec
        matched += 1
    table.requires_grad = trainable
    return EmbeddingTable(
        table=table, trainable=trainable, coverage=matched / len(vocab), matched=matched
    )


@dataclass
class UnpackedSample:
    id: str
    net: cn.ConfusionNetwork
    answer_tokens: tuple[str, ...]
    target_ids: tuple[int, ...]
    ext: ExtendedVocabulary


@dataclass
class Batch:
    """Padded index/posterior arrays for a group of samples.

    ``net_tok`` and ``ans_ids`` / ``tgt_ids`` hold extended-vocabulary
    indices; the boolean masks mark real entries.  ``unpack`` reconstructs
    the per-sample inputs from the padded arrays alone, so anything the
    masks mislabel would corrupt the rebuilt samples (this is what the
    batching-equivalence checks lean on).
    """

    ids: tuple[str, ...]
    exts: tuple[ExtendedVocabulary, ...]
    net_tok: np.ndarray   # (B, MB, MA) int64
    net_post: np.ndarray  # (B, MB, MA) float64
    arc_mask: np.ndarray  # (B, MB, MA) bool
    bin_mask: np.ndarray  # (B, MB) bool
    ans_ids: np.ndarray   # (B, MAns) int64
    ans_mask: np.ndarray  # (B, MAns) bool
    tgt_ids: np.ndarray   # (B, MT) int64
    tgt_mask: np.ndarray  # (B, MT) bool

    def __len__(self) -> int:
        return len(self.ids)

    def unpack(self) -> list[UnpackedSample]:
        out = []
        for i, (sid, ext) in enumerate(zip(self.ids, self.exts)):
            bins = []
            for b in range(self.net_tok.shape[1]):
                if not self.bin_mask[i, b]:
                    continue
                arcs = tuple(
                    cn.Arc(ext.token(int(self.net_tok[i, b, a])), float(self.net_post[i, b, a]))
                    for a in range(self.net_tok.shape[2])
                    if self.arc_mask[i, b, a]
                )
                bins.append(cn.Bin(arcs))
            net = cn.ConfusionNetwork(sid, tuple(bins))
            answer = tuple(
                ext.token(int(t)) for t, m in zip(self.ans_ids[i], self.ans_mask[i]) if m
            )
            targets = tuple(
                int(t) for t, m in zip(self.tgt_ids[i], self.tgt_mask[i]) if m
            )
            out.append(UnpackedSample(sid, net, answer, targets, ext))
        return out


def batchify(dataset: Dataset, batch_size: int, vocab: Vocabulary) -> list[Batch]:
    """Bucket samples by bin count (stable) and cut into padded batches.

    Targets are the full answer plus a closing end-of-sequence token,
    encoded against each sample's extended vocabulary (a target word absent
    from both the vocabulary and the sample's sources is a data error).
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    order = sorted(range(len(dataset.samples)), key=lambda i: (len(dataset.samples[i].question_net), i))
    batches = []
    for lo in range(0, len(order), batch_size):
        chunk = [dataset.samples[i] for i in order[lo:lo + batch_size]]
        batches.append(_pack(chunk, vocab))
    return batches


def _pack(samples: list[Sample], vocab: Vocabulary) -> Batch:
    exts = tuple(
        ExtendedVocabulary.for_sample(vocab, s.question_net, s.factoid_answer) for s in samples
    )
    n = len(samples)
    mb = max(len(s.question_net) for s in samples)
    ma = max(len(b) for s in samples for b in s.question_net.bins)
    mans = max(len(s.factoid_answer) for s in samples)
    mt = max(len(s.full_answer) for s in samples) + 1  # room for the end marker

    net_tok = np.zeros((n, mb, ma), dtype=np.int64)
    net_post = np.zeros((n, mb, ma), dtype=np.float64)
    arc_mask = np.zeros((n, mb, ma), dtype=bool)
    bin_mask = np.zeros((n, mb), dtype=bool)
    ans_ids = np.full((n, mans), PAD, dtype=np.int64)
    ans_mask = np.zeros((n, mans), dtype=bool)
    tgt_ids = np.full((n, mt), PAD, dtype=np.int64)
    tgt_mask = np.zeros((n, mt), dtype=bool)

    for i, (s, ext) in enumerate(zip(samples, exts)):
        for b, bin_ in enumerate(s.question_net.bins):
            bin_mask[i, b] = True
            for a, arc in enumerate(bin_.arcs):
                net_tok[i, b, a] = ext.source_id(arc.token)
                net_post[i, b, a] = arc.posterior
                arc_mask[i, b, a] = True
        for k, tok in enumerate(s.factoid_answer):
            ans_ids[i, k] = ext.source_id(tok)
            ans_mask[i, k] = True
        targets = [ext.target_id(tok) for tok in s.full_answer] + [EOS]
        for k, t in enumerate(targets):
            tgt_ids[i, k] = t
            tgt_mask[i, k] = True

    return Batch(
        ids=tuple(s.id for s in samples),
        exts=exts,
        net_tok=net_tok,
        net_post=net_post,
        arc_mask=arc_mask,
        bin_mask=bin_mask,
        ans_ids=ans_ids,
        ans_mask=ans_mask,
        tgt_ids=tgt_ids,
        tgt_mask=tgt_mask,
    )
