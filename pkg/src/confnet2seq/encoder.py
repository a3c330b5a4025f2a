"""Confusion-network encoder: collapse the 2-D graph into a sequence of
dense bin encodings.

Each arc's word embedding is scaled by its ASR posterior and passed through
a learned tanh transform; a learned softmax over the transformed arcs then
mixes them into one vector per bin, so the network becomes an ordinary
1-D input sequence for the downstream recurrent encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

from .confnet import Bin, ConfusionNetwork
from .data import Vocabulary
from .errors import ContractError
from .numcore import Tensor, embedding_row, matmul, scale, softmax, stack_rows, tanh


@dataclass
class ConfNetEncoderParams:
    """Learned pieces of the graph encoder.

    ``embedding_table`` is (V, E); ``W1`` is square (E, E) so the bin
    encodings live in the same space as word embeddings and can share the
    recurrent encoder with the answer stream; ``W2`` is the (E,) scoring
    vector behind the per-bin arc weighting.
    """

    embedding_table: Tensor
    W1: Tensor
    W2: Tensor


@dataclass
class EncodedBin:
    beta: Tensor                 # (E,) mixed bin encoding
    alphas: Tensor               # (k,) arc weights, sums to 1
    word_encodings: list[Tensor]  # k tensors of shape (E,)


def encode_word(token: str, posterior: float, params: ConfNetEncoderParams,
                vocab: Vocabulary) -> Tensor:
    """tanh(W1 . (posterior * embedding)); unknown words use the UNK row."""
    e = embedding_row(params.embedding_table, vocab.id(token))
    return tanh(matmul(params.W1, scale(e, posterior)))


def encode_bin(bin_: Bin, params: ConfNetEncoderParams, vocab: Vocabulary) -> EncodedBin:
    if not bin_.arcs:
        raise ContractError("cannot encode an empty bin")
    qs = [encode_word(a.token, a.posterior, params, vocab) for a in bin_.arcs]
    q_matrix = stack_rows(qs)                    # (k, E)
    alphas = softmax(matmul(q_matrix, params.W2))  # (k,)
    beta = matmul(alphas, q_matrix)              # (E,)
    return EncodedBin(beta=beta, alphas=alphas, word_encodings=qs)


def encode_network(net: ConfusionNetwork, params: ConfNetEncoderParams,
                   vocab: Vocabulary) -> list[EncodedBin]:
    """One EncodedBin per bin, in order.  Empty networks are the caller's
    problem (a pruned-to-empty question cannot be encoded)."""
    if net.is_empty:
        raise ContractError(f"cannot encode empty confusion network {net.id!r}")
    return [encode_bin(b, params, vocab) for b in net.bins]
