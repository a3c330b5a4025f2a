"""Shared test helpers: random generators, finite differences, toy corpora."""

from __future__ import annotations

import itertools
import json

import numpy as np

from confnet2seq import confnet as cn
from confnet2seq.data import Vocabulary
from confnet2seq.model import ModelConfig, ModelParams

WORD_POOL = [
    "the", "cat", "sat", "on", "mat", "dog", "ran", "big", "red", "sun",
    "sky", "day", "who", "what", "time", "blue", "tree", "rock", "bird", "fish",
]


def random_network(rng: np.random.Generator, *, max_bins=5, max_arcs=4,
                   tokens=None, net_id="net", min_bins=1,
                   noise_share=0.0) -> cn.ConfusionNetwork:
    """Random raw network: unique tokens per bin, positive posteriors."""
    tokens = tokens or WORD_POOL
    pool = list(tokens)
    if noise_share > 0:
        pool = pool + list(cn.DEFAULT_NOISE_TOKENS)
    n_bins = int(rng.integers(min_bins, max_bins + 1))
    bins = []
    for _ in range(n_bins):
        width = int(rng.integers(1, max_arcs + 1))
        if noise_share > 0 and rng.random() < noise_share:
            choices = rng.choice(len(cn.DEFAULT_NOISE_TOKENS),
                                 size=min(width, len(cn.DEFAULT_NOISE_TOKENS)), replace=False)
            words = [cn.DEFAULT_NOISE_TOKENS[i] for i in choices]
        else:
            choices = rng.choice(len(pool), size=min(width, len(pool)), replace=False)
            words = [pool[i] for i in choices]
        arcs = tuple(cn.Arc(w, float(rng.uniform(0.05, 1.0))) for w in words)
        bins.append(cn.Bin(arcs))
    return cn.ConfusionNetwork(net_id, tuple(bins))


def random_normalized_network(rng, **kwargs) -> cn.ConfusionNetwork:
    return cn.normalize(random_network(rng, **kwargs))


def brute_force_best_path(net: cn.ConfusionNetwork) -> list[str]:
    """Exhaustive max-product path over all per-bin arc choices (first best
    wins ties), with the deletion marker dropped from the emitted tokens."""
    best_tokens, best_score = None, -1.0
    for combo in itertools.product(*[b.arcs for b in net.bins]):
        score = 1.0
        for arc in combo:
            score *= arc.posterior
        if score > best_score:
            best_score = score
            best_tokens = [a.token for a in combo if a.token != cn.DELETE_MARKER]
    return best_tokens or []


def edit_search(a, b) -> int:
    """Minimum edit cost by uniform-cost search over the alignment graph
    (0-1 BFS): every edit script is a path, matches are free moves.
    Independent of the dynamic-programming recurrence used in the package.
    """
    from collections import deque

    a, b = list(a), list(b)
    goal = (len(a), len(b))
    best = {(0, 0): 0}
    queue = deque([(0, 0)])
    while queue:
        i, j = queue.popleft()
        cost = best[(i, j)]
        if (i, j) == goal:
            return cost
        moves = []
        if i < len(a) and j < len(b):
            moves.append(((i + 1, j + 1), 0 if a[i] == b[j] else 1))
        if i < len(a):
            moves.append(((i + 1, j), 1))  # drop a token of a
        if j < len(b):
            moves.append(((i, j + 1), 1))  # insert a token of b
        for state, step in moves:
            new_cost = cost + step
            if state not in best or new_cost < best[state]:
                best[state] = new_cost
                if step == 0:
                    queue.appendleft(state)
                else:
                    queue.append(state)
    return best[goal]


def longest_common_substring_len(a, b) -> int:
    a, b = list(a), list(b)
    best = 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else 0)
        best = max(best, max(cur))
        prev = cur
    return best


def finite_difference(f, tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. every tensor element."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Elementwise |a - n| / max(|a|, |n|, floor), reduced to the maximum.

    The floor turns the comparison absolute (at floor * tol) for gradients
    near zero, where central differences only deliver ~1e-10 accuracy.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def toy_vocab(words) -> Vocabulary:
    return Vocabulary(list(words))


def toy_model(rng, vocab, embed_dim=6, hidden=6, layers=2, max_len=50) -> ModelParams:
    config = ModelConfig(vocab_size=len(vocab), embed_dim=embed_dim,
                         hidden_size=hidden, layers=layers, max_len=max_len)
    return ModelParams.build(config, rng)


# ---------------------------------------------------------------------------
# Hand-built overfit corpus: 8 question networks with distractor arcs,
# factoid answers, and full-length answers.  "zorblat" exists only as a
# confusion-network arc and a full-answer word, never as a factoid token,
# so it can be kept out of the base vocabulary by capping its size.
# ---------------------------------------------------------------------------

def _bins(*slots):
    return [[{"token": t, "posterior": p} for t, p in slot] for slot in slots]


TOY_CORPUS = [
    {
        "id": "s1",
        "confnet": {"id": "s1", "bins": _bins(
            [("what", 0.8), ("watt", 0.2)], [("is", 1.0)], [("uh", 1.0)],
            [("the", 0.7), ("a", 0.3)], [("capital", 0.9), ("capitol", 0.1)],
            [("of", 1.0)], [("france", 0.7), ("frowns", 0.3)],
        )},
        "factoid": "paris",
        "answer": "the capital of france is paris",
    },
    {
        "id": "s2",
        "confnet": {"id": "s2", "bins": _bins(
            [("what", 0.9), ("that", 0.1)], [("is", 1.0)], [("the", 1.0)],
            [("capital", 0.8), ("capture", 0.2)], [("of", 1.0)],
            [("germany", 0.6), ("germane", 0.4)],
        )},
        "factoid": "berlin",
        "answer": "the capital of germany is berlin",
    },
    {
        "id": "s3",
        "confnet": {"id": "s3", "bins": _bins(
            [("who", 1.0)], [("wrote", 0.7), ("rote", 0.3)], [("hamlet", 0.9), ("omelet", 0.1)],
        )},
        "factoid": "shakespeare",
        "answer": "shakespeare wrote hamlet",
    },
    {
        "id": "s4",
        "confnet": {"id": "s4", "bins": _bins(
            [("what", 1.0)], [("color", 0.8), ("collar", 0.2)], [("is", 1.0)],
            [("the", 1.0)], [("sky", 0.9), ("ski", 0.1)],
        )},
        "factoid": "blue",
        "answer": "the sky is blue",
    },
    {
        "id": "s5",
        "confnet": {"id": "s5", "bins": _bins(
            [("what", 1.0)], [("is", 1.0)], [("two", 0.8), ("too", 0.2)],
            [("plus", 1.0)], [("two", 0.9), ("to", 0.1)],
        )},
        "factoid": "four",
        "answer": "two plus two is four",
    },
    {
        "id": "s6",
        "confnet": {"id": "s6", "bins": _bins(
            [("what", 1.0)], [("is", 1.0)], [("the", 1.0)],
            [("largest", 0.7), ("large", 0.3)], [("planet", 0.9), ("planned", 0.1)],
        )},
        "factoid": "jupiter",
        "answer": "the largest planet is jupiter",
    },
    {
        "id": "s7",
        "confnet": {"id": "s7", "bins": _bins(
            [("what", 1.0)], [("is", 1.0)], [("the", 1.0)],
            [("gadget", 0.8), ("gasket", 0.2)], [("called", 1.0)],
            [("zorblat", 0.9), ("zorro", 0.1)],
        )},
        "factoid": "gadget",
        "answer": "the gadget is called zorblat",
    },
    {
        "id": "s8",
        "confnet": {"id": "s8", "bins": _bins(
            [("how", 1.0)], [("many", 0.8), ("mane", 0.2)], [("legs", 0.9), ("eggs", 0.1)],
            [("has", 1.0)], [("a", 1.0)], [("spider", 0.9), ("spied", 0.1)],
        )},
        "factoid": "eight",
        "answer": "a spider has eight legs",
    },
]


def write_manifest(path, records=TOY_CORPUS) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def vocab_size_excluding(dataset, word: str) -> int:
    """Content-vocabulary size that keeps every token ranked before ``word``
    (frequency desc, then lexicographic) and drops ``word`` itself."""
    from collections import Counter

    counts = Counter()
    for s in dataset.samples:
        for b in s.question_net.bins:
            counts.update(a.token for a in b.arcs)
        counts.update(s.factoid_answer)
        counts.update(s.full_answer)
    ranked = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
    return ranked.index(word)
