"""Command-line interface.

    confnet2seq confnet {prune|best|stats|convert} --input FILE ...
    confnet2seq train --config FILE [overrides]
    confnet2seq generate --checkpoint PREFIX --input MANIFEST ...
    confnet2seq eval --predictions FILE --references FILE ...

Every command exits 0 on success and 1 on any reported error; parse errors
carry file and line diagnostics.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import confnet as cn
from . import data as data_mod
from . import metrics
from .config import load_run_config
from .errors import Confnet2SeqError, ContractError, DataError
from .model import ModelConfig, ModelParams, beam_decode, greedy_decode
from .numcore import load_checkpoint
from .training import train

log = logging.getLogger(__name__)

MODE_FLAGS = {
    "confnet": "confnet",
    "raw": "confnet",
    "clean-confnet": "clean_confnet",
    "clean": "clean_confnet",
    "best-hyp": "best_hypothesis",
    "best-hypothesis": "best_hypothesis",
}


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _noise_lexicon(args) -> cn.NoiseLexicon:
    tokens = list(cn.DEFAULT_NOISE_TOKENS)
    if args.noise_token:
        tokens.extend(args.noise_token)
    return cn.NoiseLexicon(tokens)


def cmd_confnet(args) -> int:
    nets = cn.parse_any(_read_text(args.input), args.max_bins, args.max_arcs)
    if args.action == "prune":
        noise = _noise_lexicon(args)
        pruned = []
        for net in nets:
            out = cn.prune_noise(cn.normalize(net), noise, drop_noise_arcs=args.drop_noise_arcs)
            if out.is_empty:
                print(f"warning: network {net.id!r} is empty after pruning", file=sys.stderr)
            pruned.append(out)
        _write_text(args.output, cn.serialize_sausage(pruned))
    elif args.action == "best":
        lines = [" ".join(cn.best_hypothesis(cn.normalize(net))) for net in nets]
        _write_text(args.output, "\n".join(lines) + "\n")
    elif args.action == "stats":
        report = [dict(id=net.id, **cn.stats(cn.normalize(net)).as_dict()) for net in nets]
        _write_text(args.output, json.dumps(report, indent=2) + "\n")
    elif args.action == "convert":
        if args.to == "json":
            _write_text(args.output, cn.serialize_json(nets))
        else:
            _write_text(args.output, cn.serialize_sausage(nets))
    return 0


def cmd_train(args) -> int:
    overrides = {
        "corpus": args.corpus,
        "checkpoint_dir": args.checkpoint_dir,
        "max_steps": args.max_steps,
        "seed": args.seed,
        "input_mode": MODE_FLAGS[args.mode] if args.mode else None,
    }
    config = load_run_config(args.config, overrides)
    if not config.corpus:
        raise DataError("no corpus given (config 'corpus' or --corpus)")
    result = train(config, resume=args.resume)
    print(f"trained {result.steps} steps, final loss {result.final_loss:.6f}")
    print(f"checkpoint: {result.checkpoint_prefix}")
    return 0


def _load_model(prefix):
    ckpt = load_checkpoint(prefix)
    model_config = ModelConfig.from_dict(ckpt.config["model"])
    vocab = data_mod.Vocabulary(ckpt.config["vocab"])
    if len(vocab) != model_config.vocab_size:
        raise ContractError(
            f"checkpoint vocabulary has {len(vocab)} entries, model expects {model_config.vocab_size}"
        )
    params = ModelParams.from_named(model_config, ckpt.params)
    return params, vocab, ckpt.config


def cmd_generate(args) -> int:
    params, vocab, ckpt_config = _load_model(args.checkpoint)
    mode = MODE_FLAGS[args.mode] if args.mode else ckpt_config.get("input_mode", "clean_confnet")
    dataset = data_mod.load_corpus(
        args.input,
        mode=mode,
        max_bins=params.config.max_bins,
        max_arcs=params.config.max_arcs,
        max_len=params.config.max_len,
    )
    for rej in dataset.rejected:
        print(f"warning: no output for sample {rej.id!r}: {rej.reason}", file=sys.stderr)
    outputs: dict[int, str] = {rej.ordinal: "" for rej in dataset.rejected}
    for sample in dataset.samples:
        if args.greedy or args.beam == 1:
            tokens = greedy_decode(sample.question_net, sample.factoid_answer, params, vocab,
                                   max_len=args.max_len)
        else:
            tokens = beam_decode(sample.question_net, sample.factoid_answer, params, vocab,
                                 beam_width=args.beam, max_len=args.max_len)
        outputs[sample.ordinal] = " ".join(tokens)
    lines = [outputs[k] for k in sorted(outputs)]
    _write_text(args.output, "\n".join(lines) + ("\n" if lines else ""))
    return 0


def _read_token_lines(path: str) -> list[list[str]]:
    text = _read_text(path)
    return [data_mod.tokenize(line) for line in text.splitlines()]


def cmd_eval(args) -> int:
    predictions = _read_token_lines(args.predictions)
    references = _read_token_lines(args.references)
    if not predictions:
        raise ContractError(f"prediction file {args.predictions} is empty")
    if len(predictions) != len(references):
        raise DataError(
            f"{len(predictions)} prediction lines against {len(references)} reference lines"
        )
    report = metrics.evaluate(predictions, references)
    print(report.to_table())
    json_path = args.json or f"{args.predictions}.metrics.json"
    _write_text(json_path, report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confnet2seq",
                                     description="Confusion-network answer generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cn = sub.add_parser("confnet", help="confusion-network utilities")
    p_cn.add_argument("action", choices=("prune", "best", "stats", "convert"))
    p_cn.add_argument("--input", required=True, help="sausage or JSON file ('-' for stdin)")
    p_cn.add_argument("--output", default=None, help="output file (default stdout)")
    p_cn.add_argument("--max-bins", type=int, default=cn.DEFAULT_MAX_BINS)
    p_cn.add_argument("--max-arcs", type=int, default=cn.DEFAULT_MAX_ARCS)
    p_cn.add_argument("--noise-token", action="append", default=None,
                      help="extra noise token (repeatable)")
    p_cn.add_argument("--drop-noise-arcs", action="store_true",
                      help="also drop noise arcs from mixed bins")
    p_cn.add_argument("--to", choices=("json", "sausage"), default="json",
                      help="convert target format")
    p_cn.set_defaults(func=cmd_confnet)

    p_tr = sub.add_parser("train", help="train a model")
    p_tr.add_argument("--config", default=None, help="JSON run config")
    p_tr.add_argument("--corpus", default=None, help="JSON-lines manifest (overrides config)")
    p_tr.add_argument("--checkpoint-dir", default=None)
    p_tr.add_argument("--max-steps", type=int, default=None)
    p_tr.add_argument("--seed", type=int, default=None)
    p_tr.add_argument("--mode", choices=sorted(MODE_FLAGS), default=None,
                      help="question input representation")
    p_tr.add_argument("--resume", default=None, help="checkpoint prefix to resume from")
    p_tr.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="generate answers from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True, help="checkpoint prefix")
    p_gen.add_argument("--input", required=True, help="JSON-lines manifest")
    p_gen.add_argument("--output", default=None, help="output file (default stdout)")
    p_gen.add_argument("--mode", choices=sorted(MODE_FLAGS), default=None,
                       help="question input representation (default: the checkpoint's)")
    p_gen.add_argument("--beam", type=int, default=5, help="beam width")
    p_gen.add_argument("--greedy", action="store_true", help="greedy decoding")
    p_gen.add_argument("--max-len", type=int, default=None)
    p_gen.set_defaults(func=cmd_generate)

    p_ev = sub.add_parser("eval", help="score predictions against references")
    p_ev.add_argument("--predictions", required=True)
    p_ev.add_argument("--references", required=True)
    p_ev.add_argument("--json", default=None, help="metric report path (default <predictions>.metrics.json)")
    p_ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Confnet2SeqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
