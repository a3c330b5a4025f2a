"""Confusion-network data model, sausage/JSON parsing, and graph cleanup.

A confusion network ("sausage") is a sequence of bins; each bin holds the
parallel weighted arcs for one time slot, i.e. the competing ASR word
hypotheses with their posteriors.  All types here are immutable and all
operations are pure functions returning new networks.

Text format (one record per network, whitespace separated, UTF-8)::

    name <id>
    numaligns <m>
    posterior <scale>
    align 0 <token> <prob> [<token> <prob> ...]
    ...
    align m-1 ...

Align indices must run 0..m-1 in order.  The JSON mirror is an array of
``{"id": str, "bins": [[{"token": str, "posterior": float}, ...], ...]}``
objects.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

from .errors import (
    DegenerateBinError,
    FormatError,
    ParseError,
    StructuralError,
)

log = logging.getLogger(__name__)

#: Epsilon marker SRILM emits for a skippable slot.
DELETE_MARKER = "*DELETE*"

#: Noise and interjection tokens pruned by default.
DEFAULT_NOISE_TOKENS = (DELETE_MARKER, "[noise]", "[laughter]", "uh", "oh")

DEFAULT_MAX_BINS = 50
DEFAULT_MAX_ARCS = 20


@dataclass(frozen=True)
class Arc:
    """One word hypothesis with its posterior weight.

    Posteriors may exceed 1 before normalization (raw sausage files carry
    unnormalized weights); they are only guaranteed to lie in [0, 1] once
    the owning network has been normalized.
    """

    token: str
    posterior: float

    def __post_init__(self):
        if not self.token or self.token.split() != [self.token]:
            raise ParseError(f"arc token must be a single non-empty word, got {self.token!r}")
        if not math.isfinite(self.posterior) or self.posterior < 0:
            raise ParseError(f"arc posterior must be finite and >= 0, got {self.posterior!r}")


@dataclass(frozen=True)
class Bin:
    """One set of parallel arcs.  Tokens within a bin are unique."""

    arcs: tuple[Arc, ...]

    def __post_init__(self):
        if not self.arcs:
            raise StructuralError("bin must contain at least one arc")
        tokens = [a.token for a in self.arcs]
        if len(set(tokens)) != len(tokens):
            raise StructuralError(f"duplicate token within bin: {tokens}")

    def __len__(self) -> int:
        return len(self.arcs)

    def posterior_sum(self) -> float:
        return sum(a.posterior for a in self.arcs)


@dataclass(frozen=True)
class ConfusionNetwork:
    """An identified sequence of bins."""

    id: str
    bins: tuple[Bin, ...]

    def __len__(self) -> int:
        return len(self.bins)

    @property
    def is_empty(self) -> bool:
        return not self.bins


class NoiseLexicon:
    """Set of tokens treated as noise; membership is case-folded exact match."""

    def __init__(self, tokens):
        folded = frozenset(t.casefold() for t in tokens)
        if not folded:
            raise ValueError("noise lexicon must not be empty")
        self.tokens = folded

    def __contains__(self, token: str) -> bool:
        return token.casefold() in self.tokens

    @classmethod
    def default(cls) -> "NoiseLexicon":
        return cls(DEFAULT_NOISE_TOKENS)


def _merge_duplicate_arcs(arcs: list[Arc]) -> list[Arc]:
    # Raw files may repeat a word within one slot; fold weights into the
    # first occurrence so the Bin uniqueness invariant holds.
    seen: dict[str, int] = {}
    merged: list[Arc] = []
    for arc in arcs:
        if arc.token in seen:
            i = seen[arc.token]
            merged[i] = Arc(arc.token, merged[i].posterior + arc.posterior)
        else:
            seen[arc.token] = len(merged)
            merged.append(arc)
    return merged


def _cap_arcs(arcs: list[Arc], max_arcs: int) -> list[Arc]:
    if len(arcs) <= max_arcs:
        return arcs
    # Keep the highest-posterior arcs (ties keep earlier file order), then
    # renormalize the survivors so the bin remains a distribution.
    order = sorted(range(len(arcs)), key=lambda i: (-arcs[i].posterior, i))
    keep = sorted(order[:max_arcs])
    kept = [arcs[i] for i in keep]
    total = sum(a.posterior for a in kept)
    if total <= 0:
        raise DegenerateBinError("bin has no positive posterior mass after arc cap")
    return [Arc(a.token, a.posterior / total) for a in kept]


def _build_bin(arcs: list[Arc], max_arcs: int) -> Bin:
    return Bin(tuple(_cap_arcs(_merge_duplicate_arcs(arcs), max_arcs)))


def _build_network(net_id: str, bins: list[list[Arc]], max_bins: int, max_arcs: int) -> ConfusionNetwork:
    capped = bins[:max_bins]
    return ConfusionNetwork(net_id, tuple(_build_bin(b, max_arcs) for b in capped))


class _RecordBuilder:
    """Accumulates one sausage record and validates its structure."""

    def __init__(self, net_id: str, line: int):
        self.net_id = net_id
        self.start_line = line
        self.numaligns: int | None = None
        self.posterior_scale: float | None = None
        self.bins: list[list[Arc]] = []

    def add_align(self, index: int, arcs: list[Arc], line: int) -> None:
        if index < len(self.bins):
            raise StructuralError(f"duplicate align index {index} in record {self.net_id!r}", line)
        if index > len(self.bins):
            raise StructuralError(
                f"align index gap in record {self.net_id!r}: expected {len(self.bins)}, got {index}", line
            )
        self.bins.append(arcs)

    def finish(self, max_bins: int, max_arcs: int) -> ConfusionNetwork:
        if self.numaligns is None:
            raise StructuralError(f"record {self.net_id!r} has no numaligns line", self.start_line)
        if self.numaligns != len(self.bins):
            raise StructuralError(
                f"record {self.net_id!r} declares numaligns {self.numaligns} "
                f"but has {len(self.bins)} align lines",
                self.start_line,
            )
        return _build_network(self.net_id, self.bins, max_bins, max_arcs)


def parse_sausage(
    text: str,
    max_bins: int = DEFAULT_MAX_BINS,
    max_arcs: int = DEFAULT_MAX_ARCS,
) -> list[ConfusionNetwork]:
    """Parse sausage text into networks, one per ``name`` record.

    Posteriors are taken verbatim (decimal floats, not normalized).  Bins
    beyond ``max_bins`` are dropped; bins wider than ``max_arcs`` keep only
    their highest-posterior arcs and are renormalized.
    """
    networks: list[ConfusionNetwork] = []
    current: _RecordBuilder | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        fields = raw.split()
        if not fields:
            continue
        keyword = fields[0]
        if keyword == "name":
            if len(fields) != 2:
                raise ParseError(f"expected 'name <id>', got {raw.strip()!r}", lineno)
            if current is not None:
                networks.append(current.finish(max_bins, max_arcs))
            current = _RecordBuilder(fields[1], lineno)
        elif current is None:
            raise ParseError(f"{keyword!r} line before any 'name' record", lineno)
        elif keyword == "numaligns":
            if len(fields) != 2 or not fields[1].isdigit():
                raise ParseError(f"expected 'numaligns <count>', got {raw.strip()!r}", lineno)
            current.numaligns = int(fields[1])
        elif keyword == "posterior":
            try:
                current.posterior_scale = float(fields[1])
            except (IndexError, ValueError):
                raise ParseError(f"expected 'posterior <scale>', got {raw.strip()!r}", lineno) from None
        elif keyword == "align":
            if len(fields) < 4 or len(fields) % 2 != 0:
                raise ParseError(
                    f"align line needs an index and token/probability pairs, got {raw.strip()!r}", lineno
                )
            try:
                index = int(fields[1])
            except ValueError:
                raise ParseError(f"align index must be an integer, got {fields[1]!r}", lineno) from None
            arcs = []
            for tok, prob in zip(fields[2::2], fields[3::2]):
                try:
                    arcs.append(Arc(tok, float(prob)))
                except ValueError:
                    raise ParseError(f"bad probability {prob!r} for token {tok!r}", lineno) from None
            current.add_align(index, arcs, lineno)
        else:
            raise ParseError(f"unknown keyword {keyword!r}", lineno)
    if current is not None:
        networks.append(current.finish(max_bins, max_arcs))
    return networks


def serialize_sausage(networks) -> str:
    """Render networks back to sausage text (posteriors at 6 significant digits)."""
    out: list[str] = []
    for net in networks:
        out.append(f"name {net.id}")
        out.append(f"numaligns {len(net.bins)}")
        out.append("posterior 1")
        for i, b in enumerate(net.bins):
            pairs = " ".join(f"{a.token} {a.posterior:.6g}" for a in b.arcs)
            out.append(f"align {i} {pairs}")
    return "\n".join(out) + ("\n" if out else "")


def parse_json(
    text: str,
    max_bins: int = DEFAULT_MAX_BINS,
    max_arcs: int = DEFAULT_MAX_ARCS,
) -> list[ConfusionNetwork]:
    """Parse the JSON mirror format (an array of network objects)."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise ParseError("JSON confnet file must be an array of network objects")
    networks = []
    for entry in payload:
        try:
            net_id = entry["id"]
            raw_bins = entry["bins"]
            bins = [[Arc(str(a["token"]), float(a["posterior"])) for a in raw] for raw in raw_bins]
        except (TypeError, KeyError) as exc:
            raise ParseError(f"malformed network object: missing {exc}") from None
        networks.append(_build_network(str(net_id), bins, max_bins, max_arcs))
    return networks


def serialize_json(networks) -> str:
    payload = [
        {
            "id": net.id,
            "bins": [[{"token": a.token, "posterior": a.posterior} for a in b.arcs] for b in net.bins],
        }
        for net in networks
    ]
    return json.dumps(payload, ensure_ascii=False, indent=1) + "\n"


def normalize(net: ConfusionNetwork) -> ConfusionNetwork:
    """Rescale every bin so its posteriors sum to 1.

    Raises DegenerateBinError for a bin whose weights sum to zero.
    """
    bins = []
    for i, b in enumerate(net.bins):
        total = b.posterior_sum()
        if total <= 0:
            raise DegenerateBinError(f"network {net.id!r} bin {i} has zero total posterior")
        bins.append(Bin(tuple(Arc(a.token, a.posterior / total) for a in b.arcs)))
    return ConfusionNetwork(net.id, tuple(bins))


def prune_noise(
    net: ConfusionNetwork,
    noise: NoiseLexicon | None = None,
    drop_noise_arcs: bool = False,
) -> ConfusionNetwork:
    """Delete bins made up entirely of noise tokens.

    Mixed bins are kept verbatim unless ``drop_noise_arcs`` is set, in which
    case their noise arcs are removed and the survivors renormalized.  The
    operation is idempotent.  A result with zero bins is valid but logged as
    a warning.
    """
    noise = noise or NoiseLexicon.default()
    bins: list[Bin] = []
    for b in net.bins:
        noisy = [a.token in noise for a in b.arcs]
        if all(noisy):
            continue
        if drop_noise_arcs and any(noisy):
            kept = [a for a, n in zip(b.arcs, noisy) if not n]
            total = sum(a.posterior for a in kept)
            if total <= 0:
                raise DegenerateBinError(
                    f"network {net.id!r}: non-noise arcs carry zero posterior mass"
                )
            bins.append(Bin(tuple(Arc(a.token, a.posterior / total) for a in kept)))
        else:
            bins.append(b)
    pruned = ConfusionNetwork(net.id, tuple(bins))
    if pruned.is_empty and not net.is_empty:
        log.warning("network %r is empty after noise pruning", net.id)
    return pruned


def best_hypothesis(net: ConfusionNetwork) -> list[str]:
    """Highest-posterior token per bin, ties to the earlier arc; the epsilon
    marker never appears in the output."""
    tokens = []
    for b in net.bins:
        best = max(b.arcs, key=lambda a: a.posterior)  # max keeps the first of equals
        if best.token != DELETE_MARKER:
            tokens.append(best.token)
    return tokens


@dataclass(frozen=True)
class ConfnetStats:
    bin_count: int
    max_bin_width: int
    mean_bin_width: float
    mean_bin_entropy: float

    def as_dict(self) -> dict:
        return {
            "bin_count": self.bin_count,
            "max_bin_width": self.max_bin_width,
            "mean_bin_width": self.mean_bin_width,
            "mean_bin_entropy": self.mean_bin_entropy,
        }


def stats(net: ConfusionNetwork) -> ConfnetStats:
    """Width and per-bin entropy (nats) summary; zeros for an empty network."""
    if net.is_empty:
        return ConfnetStats(0, 0, 0.0, 0.0)
    widths = [len(b) for b in net.bins]
    entropies = []
    for b in net.bins:
        h = 0.0
        for a in b.arcs:
            if a.posterior > 0:
                h -= a.posterior * math.log(a.posterior)
        entropies.append(h)
    return ConfnetStats(
        bin_count=len(net.bins),
        max_bin_width=max(widths),
        mean_bin_width=sum(widths) / len(widths),
        mean_bin_entropy=sum(entropies) / len(entropies),
    )


def sniff_format(text: str) -> str:
    """Guess 'json' or 'sausage' from the first non-space character."""
    for ch in text:
        if not ch.isspace():
            return "json" if ch in "[{" else "sausage"
    return "sausage"


def parse_any(text: str, max_bins: int = DEFAULT_MAX_BINS, max_arcs: int = DEFAULT_MAX_ARCS):
    if sniff_format(text) == "json":
        return parse_json(text, max_bins, max_arcs)
    return parse_sausage(text, max_bins, max_arcs)
