"""LSTM cell and sequence runners.

The cell is a fused primitive: one tape node per step, with a hand-written
backward over the gate algebra.  Weight layout per layer is a single
(4H, in+H) matrix over the concatenated [x; h_prev] input, gate rows in
i / f / g / o order, plus a (4H,) bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _accum, _wrap, active_tape, concat, uniform_init, zeros


@dataclass
class LstmLayer:
    W: Tensor  # (4H, input + H)
    b: Tensor  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden_size


def init_lstm_layer(rng: np.random.Generator, input_size: int, hidden_size: int,
                    scale: float = 0.1, name: str = "lstm") -> LstmLayer:
    return LstmLayer(
        W=uniform_init(rng, (4 * hidden_size, input_size + hidden_size), scale, f"{name}.W"),
        b=uniform_init(rng, (4 * hidden_size,), scale, f"{name}.b"),
    )


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, layer: LstmLayer) -> tuple[Tensor, Tensor]:
    """One step of the standard gate equations:

    i, f, o = sigmoid(slices of W[x; h] + b), g = tanh(slice),
    c = f * c_prev + i * g, h = o * tanh(c).
    """
    hs = layer.hidden_size
    if x.ndim != 1 or h_prev.shape != (hs,) or c_prev.shape != (hs,):
        raise ShapeError(
            f"lstm_cell: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"do not fit hidden size {hs}"
        )
    if x.shape[0] != layer.input_size:
        raise ShapeError(f"lstm_cell: input {x.shape} does not fit W {layer.W.shape}")

    xh = np.concatenate([x.data, h_prev.data])
    z = layer.W.data @ xh + layer.b.data
    i = _sigmoid(z[:hs])
    f = _sigmoid(z[hs:2 * hs])
    g = np.tanh(z[2 * hs:3 * hs])
    o = _sigmoid(z[3 * hs:])
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc

    requires = any(t.requires_grad for t in (x, h_prev, c_prev, layer.W, layer.b))
    h_out = _wrap(h, requires)
    c_out = _wrap(c, requires)

    tape = active_tape()
    if tape is not None and requires:
        def bwd(gs):
            dh, dc_ext = gs
            do = dh * tc
            dc = dc_ext + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * c_prev.data
            dg = dc * i
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            _accum(layer.W, np.outer(dz, xh))
            _accum(layer.b, dz)
            dxh = layer.W.data.T @ dz
            _accum(x, dxh[:x.shape[0]])
            _accum(h_prev, dxh[x.shape[0]:])
            _accum(c_prev, dc * f)

        tape.record((x, h_prev, c_prev, layer.W, layer.b), (h_out, c_out), bwd)
    return h_out, c_out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def run_lstm(inputs, layer: LstmLayer, reverse: bool = False,
             h0: Tensor | None = None, c0: Tensor | None = None):
    """Run one layer over a sequence of 1-D tensors.

    Returns (outputs aligned with the input order, (final h, final c)).
    """
    hs = layer.hidden_size
    h = h0 if h0 is not None else zeros(hs)
    c = c0 if c0 is not None else zeros(hs)
    ordered = reversed(inputs) if reverse else inputs
    outs = []
    for x in ordered:
        h, c = lstm_cell(x, h, c, layer)
        outs.append(h)
    if reverse:
        outs.reverse()
    return outs, (h, c)


def run_bilstm(inputs, fwd_layers, bwd_layers, drop=None):
    """Stacked bidirectional run.

    Per layer the forward and backward passes share the input sequence; the
    per-step concatenation [h_fwd; h_bwd] feeds the next layer.  ``drop`` is
    an optional callable applied between layers (never after the last).
    Returns (top-layer outputs as (2H,) tensors, per-layer final states as
    ((h_f, c_f), (h_b, c_b)) tuples).
    """
    seq = list(inputs)
    finals = []
    last = len(fwd_layers) - 1
    for depth, (fl, bl) in enumerate(zip(fwd_layers, bwd_layers)):
        outs_f, final_f = run_lstm(seq, fl, reverse=False)
        outs_b, final_b = run_lstm(seq, bl, reverse=True)
        seq = [concat([f, b]) for f, b in zip(outs_f, outs_b)]
        finals.append((final_f, final_b))
        if drop is not None and depth < last:
            seq = [drop(t) for t in seq]
    return seq, finals


def step_stack(x: Tensor, states, layers, drop=None):
    """Advance a unidirectional stack by one step.

    ``states`` is a list of (h, c) per layer.  Returns (top hidden state,
    new states).  ``drop`` applies between layers only.
    """
    new_states = []
    inp = x
    last = len(layers) - 1
    for depth, (layer, (h, c)) in enumerate(zip(layers, states)):
        h, c = lstm_cell(inp, h, c, layer)
        new_states.append((h, c))
        inp = drop(h) if (drop is not None and depth < last) else h
    return inp, new_states
