"""Training loop: deterministic batch order, per-step dropout streams,
JSON-lines loss logging and resumable checkpoints.

Every source of randomness is a pure function of (seed, purpose, step), so
resuming from a checkpoint replays exactly the run an uninterrupted session
would have produced.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import RunConfig
from .errors import CompatibilityError, ContractError, DivergenceError
from .model import ModelConfig, ModelParams, batch_loss, check_finite_loss
from .numcore import Optimizer, Tape, backward, dropout, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    checkpoint_prefix: Path
    steps: int
    final_loss: float
    losses: list[float]


def _rng(seed: int, purpose: int, step: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, step]))


def _batch_order(seed: int, epoch: int, n_batches: int) -> np.ndarray:
    return _rng(seed, 1, epoch).permutation(n_batches)


def _dropout_fn(rate: float, seed: int, step: int):
    if rate == 0.0:
        return None
    rng = _rng(seed, 2, step)
    return lambda t: dropout(t, rate, rng)


def checkpoint_payload(config: RunConfig, model_config: ModelConfig, vocab) -> dict:
    return {
        "model": model_config.to_dict(),
        "vocab": vocab.tokens,
        "optimizer": config.optimizer.to_dict(),
        "input_mode": config.input_mode,
        "seed": config.seed,
    }


def train(config: RunConfig, resume=None, max_steps: int | None = None,
          stop_loss: float | None = None) -> TrainResult:
    """Train from scratch or resume from a checkpoint prefix.

    Stops after ``max_steps`` (defaults to the config value) or as soon as
    a step's loss drops below ``stop_loss``.  Writes ``ckpt_<step>`` and
    ``final`` checkpoints plus ``train_log.jsonl`` under the checkpoint
    directory.  A non-finite loss or gradient aborts with DivergenceError.
    """
    max_steps = config.max_steps if max_steps is None else max_steps
    dataset = data_mod.load_corpus(
        config.corpus,
        mode=config.input_mode,
        max_bins=config.max_bins,
        max_arcs=config.max_arcs,
        max_len=config.max_len,
    )
    if not dataset.samples:
        raise ContractError(f"corpus {config.corpus} has no usable samples")
    for rej in dataset.rejected:
        log.warning("skipping sample %r (line %d): %s", rej.id, rej.ordinal + 1, rej.reason)
    vocab = data_mod.build_vocab(dataset, config.vocab_size, config.min_freq)
    model_config = config.model_config(len(vocab))

    start_step = 0
    optimizer_state: dict = {}
    if resume is not None:
        ckpt = load_checkpoint(resume)
        saved_model = ModelConfig.from_dict(ckpt.config["model"])
        if saved_model.to_dict() != model_config.to_dict():
            raise CompatibilityError(
                f"checkpoint model config {saved_model.to_dict()} differs from requested {model_config.to_dict()}"
            )
        if ckpt.config["vocab"] != vocab.tokens:
            raise CompatibilityError("checkpoint vocabulary differs from the corpus vocabulary")
        params = ModelParams.from_named(model_config, ckpt.params)
        start_step = ckpt.step
        optimizer_state = ckpt.state
    else:
        params = ModelParams.build(model_config, _rng(config.seed, 0))
        if config.embeddings:
            table = data_mod.load_embeddings(config.embeddings, vocab, _rng(config.seed, 3))
            if table.table.shape != params.embedding.shape:
                raise CompatibilityError(
                    f"embedding file dimension {table.table.shape} does not match model {params.embedding.shape}"
                )
            params.embedding.data[...] = table.table.data
            log.info("loaded pretrained embeddings, coverage %.1f%%", 100 * table.coverage)

    named = params.named()
    optimizer = Optimizer(config.optimizer, named)
    if optimizer_state:
        optimizer.load_state(optimizer_state, start_step)
    else:
        optimizer.step_count = start_step

    batches = data_mod.batchify(dataset, config.batch_size, vocab)
    n_batches = len(batches)
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / "train_log.jsonl"
    log_mode = "a" if resume is not None else "w"
    payload = checkpoint_payload(config, model_config, vocab)

    losses: list[float] = []
    last_loss = float("nan")
    step = start_step
    with open(log_path, log_mode, encoding="utf-8") as log_fh:
        while step < max_steps:
            epoch, offset = divmod(step, n_batches)
            batch = batches[int(_batch_order(config.seed, epoch, n_batches)[offset])]
            drop = _dropout_fn(config.optimizer.dropout_rate, config.seed, step)
            optimizer.zero_grad()
            with Tape() as tape:
                loss = batch_loss(batch, params, vocab, drop)
            check_finite_loss(loss, step)
            backward(loss, tape)
            try:
                lr = optimizer.step()
            except DivergenceError as exc:
                raise DivergenceError(f"step {step}: {exc}") from None
            last_loss = float(loss.data)
            losses.append(last_loss)
            step += 1
            log_fh.write(json.dumps({"step": step, "loss": last_loss, "lr": lr}) + "\n")
            if config.checkpoint_every and step % config.checkpoint_every == 0 and step < max_steps:
                save_checkpoint(ckpt_dir / f"ckpt_{step:06d}", named, step, payload,
                                optimizer.state_arrays())
            if stop_loss is not None and last_loss < stop_loss:
                break
    final_prefix = ckpt_dir / "final"
    save_checkpoint(final_prefix, named, step, payload, optimizer.state_arrays())
    return TrainResult(checkpoint_prefix=final_prefix, steps=step, final_loss=last_loss, losses=losses)
