"""Mixed context-window packing, document masks, and the inference switch rule.

Short documents (within the pre-trained window) are packed several to a
window and trained under the original rotary angles with document-block
attention; long documents are chunked one per window under rescaled angles
with full attention.  At inference the original angles are used until
prompt plus generated tokens exceed the pre-trained window.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import jsonutil
from .errors import DocTooLongForBucketError

# Each packed document spends one window slot on its terminator token; the
# worked packing arithmetic in the plan format assumes exactly one.
FRAMING_TOKENS_PER_DOC = 1

# Default long-bucket boundary between "moderately long" and "very long"
# documents when quota fractions are applied.
DEFAULT_LONG_SPLIT = 100_000


class SegmentMode(str, enum.Enum):
    SHORT_ORIGINAL_ROPE = "short"
    LONG_RESCALED_ROPE = "long"


class RopeMode(str, enum.Enum):
    ORIGINAL = "original"
    RESCALED = "rescaled"


@dataclass(frozen=True)
class DocSpec:
    doc_id: str
    token_len: int

    def __post_init__(self):
        if self.token_len < 1:
            raise ValueError(f"token_len must be >= 1, got {self.token_len}")


@dataclass(frozen=True)
class SegmentEntry:
    """A contiguous token range of one document placed in a segment."""

    doc_id: str
    start: int
    end: int


@dataclass(frozen=True)
class Segment:
    window_len: int
    entries: tuple[SegmentEntry, ...]
    mode: SegmentMode
    boundaries: tuple[int, ...]
    doc_id_per_token: np.ndarray

    @property
    def used_len(self) -> int:
        return int(np.count_nonzero(self.doc_id_per_token >= 0))


@dataclass(frozen=True)
class MaskSpec:
    """Block-attention structure: same non-padding doc id means attention allowed."""

    doc_id_per_token: np.ndarray
    full_attention: bool

    def allowed(self, a: int, b: int) -> bool:
        ids = self.doc_id_per_token
        if ids[a] < 0 or ids[b] < 0:
            return False
        return True if self.full_attention else bool(ids[a] == ids[b])


@dataclass(frozen=True)
class SwitchPlan:
    """Where a generation run must swap original angles for rescaled ones."""

    prompt_tokens: int
    pretrained_len: int
    starts_rescaled: bool
    flip_at_generated: int
    flips: bool | None
    recompute_kv_cache_once: bool


def _bucket_of(token_len: int, bounds: Sequence[int]) -> int:
    for b, upper in enumerate(bounds):
        if token_len <= upper:
            return b
    return len(bounds)


def _apply_quotas(
    docs: Sequence[DocSpec], quotas: Sequence[float], bounds: Sequence[int]
) -> list[DocSpec]:
    """Select a subset whose per-bucket token mix matches the fractions.

    The selected budget is the largest total the available documents can
    supply at the requested mix (the binding bucket determines it); docs
    are then taken greedily in input order per bucket while below
    ``fraction * budget``, so each bucket lands within one document of its
    target.
    """
    if len(quotas) != len(bounds) + 1:
        raise ValueError(
            f"{len(bounds) + 1} buckets need {len(bounds) + 1} quota fractions, got {len(quotas)}"
        )
    if any(q < 0 for q in quotas) or sum(quotas) <= 0:
        raise ValueError("quota fractions must be nonnegative and not all zero")
    available = [0] * len(quotas)
    for doc in docs:
        available[_bucket_of(doc.token_len, bounds)] += doc.token_len
    budget = min(
        available[b] / q for b, q in enumerate(quotas) if q > 0
    )
    targets = [q * budget for q in quotas]
    taken = [0] * len(targets)
    selected = []
    for doc in docs:
        b = _bucket_of(doc.token_len, bounds)
        if quotas[b] > 0 and taken[b] < targets[b]:
            taken[b] += doc.token_len
            selected.append(doc)
    return selected


def _pack_short(docs: list[DocSpec], window_len: int, pretrained_len: int) -> list[Segment]:
    """First-fit-decreasing over framed sizes; stable order on equal lengths."""
    for doc in docs:
        if doc.token_len > pretrained_len:
            raise DocTooLongForBucketError(
                f"doc {doc.doc_id!r} has {doc.token_len} tokens, over the"
                f" pre-trained window of {pretrained_len}"
            )
        if doc.token_len + FRAMING_TOKENS_PER_DOC > window_len:
            raise DocTooLongForBucketError(
                f"doc {doc.doc_id!r} plus framing does not fit a {window_len}-token window"
            )
    bins: list[list[DocSpec]] = []
    fill: list[int] = []
    for doc in sorted(docs, key=lambda d: -d.token_len):
        size = doc.token_len + FRAMING_TOKENS_PER_DOC
        for b, used in enumerate(fill):
            if used + size <= window_len:
                bins[b].append(doc)
                fill[b] += size
                break
        else:
            bins.append([doc])
            fill.append(size)

    segments = []
    for contents in bins:
        ids = np.full(window_len, -1, dtype=np.int64)
        entries = []
        boundaries = []
        cursor = 0
        for local_id, doc in enumerate(contents):
            boundaries.append(cursor)
            span = doc.token_len + FRAMING_TOKENS_PER_DOC
            ids[cursor : cursor + span] = local_id
            entries.append(SegmentEntry(doc.doc_id, 0, doc.token_len))
            cursor += span
        segments.append(
            Segment(
                window_len=window_len,
                entries=tuple(entries),
                mode=SegmentMode.SHORT_ORIGINAL_ROPE,
                boundaries=tuple(boundaries),
                doc_id_per_token=ids,
            )
        )
    return segments


def _chunk_long(doc: DocSpec, window_len: int) -> list[Segment]:
    """Split one framed long document into window-sized pieces, last padded."""
    framed_len = doc.token_len + FRAMING_TOKENS_PER_DOC
    n_chunks = math.ceil(framed_len / window_len)
    segments = []
    for c in range(n_chunks):
        lo = c * window_len
        hi = min((c + 1) * window_len, framed_len)
        # Framed stream: positions [0, token_len) are content, token_len is
        # the terminator.
        start = lo
        end = min(hi, doc.token_len)
        ids = np.full(window_len, -1, dtype=np.int64)
        ids[: hi - lo] = 0
        segments.append(
            Segment(
                window_len=window_len,
                entries=(SegmentEntry(doc.doc_id, start, max(start, end)),),
                mode=SegmentMode.LONG_RESCALED_ROPE,
                boundaries=(0,) if c == 0 else (),
                doc_id_per_token=ids,
            )
        )
    return segments


def plan_packing(
    docs: Sequence[DocSpec],
    window_len: int,
    pretrained_len: int,
    quotas: Sequence[float] | None = None,
    bucket_bounds: Sequence[int] | None = None,
) -> list[Segment]:
    """Assign documents to window-sized training segments.

    Documents at or under ``pretrained_len`` are packed first-fit-decreasing
    into short-mode segments; longer documents are chunked one per segment
    in input order.  ``quotas`` caps per-bucket token totals as fractions of
    the total token count, with buckets split at ``bucket_bounds``
    (default: pre-trained length, then 100k).
    """
    if window_len < pretrained_len:
        raise ValueError(
            f"window_len {window_len} must be >= pretrained_len {pretrained_len}"
        )
    bounds = list(bucket_bounds) if bucket_bounds is not None else [
        pretrained_len,
        max(DEFAULT_LONG_SPLIT, pretrained_len + 1),
    ]
    if sorted(bounds) != bounds:
        raise ValueError("bucket_bounds must be non-decreasing")
    chosen = list(docs)
    if quotas is not None:
        chosen = _apply_quotas(chosen, quotas, bounds)

    short = [d for d in chosen if d.token_len <= bounds[0]]
    long = [d for d in chosen if d.token_len > bounds[0]]
    segments = _pack_short(short, window_len, pretrained_len)
    for doc in long:
        segments.extend(_chunk_long(doc, window_len))
    return segments


def document_mask(seg: Segment) -> MaskSpec:
    """Mask for a segment: block-diagonal by document for short mode, full for long."""
    return MaskSpec(
        doc_id_per_token=seg.doc_id_per_token,
        full_attention=seg.mode is SegmentMode.LONG_RESCALED_ROPE,
    )


def rope_mode(prompt_tokens: int, generated_tokens: int, pretrained_len: int) -> RopeMode:
    """Original angles while prompt + generated stays within the trained window."""
    if prompt_tokens < 0 or generated_tokens < 0:
        raise ValueError("token counts must be nonnegative")
    if prompt_tokens + generated_tokens <= pretrained_len:
        return RopeMode.ORIGINAL
    return RopeMode.RESCALED


def switch_plan(
    prompt_tokens: int,
    pretrained_len: int,
    expected_generated: int | None = None,
) -> SwitchPlan:
    """Describe when generation must swap to rescaled angles.

    ``flip_at_generated`` counts the tokens that can still be generated
    under the original angles; 0 means the first generated token (or the
    prompt itself) is already rescaled.  Crossing the flip requires a
    one-time recomputation of cached keys/values under the rescaled angles,
    unless the run starts rescaled and never builds an original-angle
    cache.
    """
    if prompt_tokens < 0:
        raise ValueError("prompt_tokens must be nonnegative")
    starts_rescaled = prompt_tokens > pretrained_len
    flip_at = max(0, pretrained_len - prompt_tokens)
    flips: bool | None
    if starts_rescaled:
        flips = True
    elif expected_generated is None:
        flips = None
    else:
        flips = prompt_tokens + expected_generated > pretrained_len
    return SwitchPlan(
        prompt_tokens=prompt_tokens,
        pretrained_len=pretrained_len,
        starts_rescaled=starts_rescaled,
        flip_at_generated=flip_at,
        flips=flips,
        recompute_kv_cache_once=(not starts_rescaled) and flips is not False,
    )


# ---------------------------------------------------------------------------
# Plan file io


def _rle_encode(ids: np.ndarray) -> list[list[int]]:
    runs = []
    for value in ids:
        value = int(value)
        if runs and runs[-1][0] == value:
            runs[-1][1] += 1
        else:
            runs.append([value, 1])
    return runs


def _rle_decode(runs: Sequence[Sequence[int]]) -> np.ndarray:
    return np.concatenate(
        [np.full(count, value, dtype=np.int64) for value, count in runs]
    ) if runs else np.empty(0, dtype=np.int64)


def segment_document(seg: Segment) -> dict:
    return {
        "mode": seg.mode.value,
        "window_len": seg.window_len,
        "entries": [
            {"doc_id": e.doc_id, "start": e.start, "end": e.end} for e in seg.entries
        ],
        "doc_id_per_token": _rle_encode(seg.doc_id_per_token),
    }


def write_plan(segments: Sequence[Segment], path: str | Path) -> None:
    lines = [jsonutil.dumps(segment_document(s)) for s in segments]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_plan(path: str | Path) -> list[Segment]:
    segments = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        ids = _rle_decode(doc["doc_id_per_token"])
        entries = tuple(
            SegmentEntry(e["doc_id"], int(e["start"]), int(e["end"]))
            for e in doc["entries"]
        )
        mode = SegmentMode(doc["mode"])
        # Boundaries are derivable: short-mode runs with distinct non-padding
        # ids each start a document; a long chunk starts one only at the
        # document head.
        if mode is SegmentMode.SHORT_ORIGINAL_ROPE:
            boundaries = []
            cursor = 0
            for value, count in doc["doc_id_per_token"]:
                if value >= 0:
                    boundaries.append(cursor)
                cursor += count
        else:
            boundaries = [0] if entries and entries[0].start == 0 else []
        segments.append(
            Segment(
                window_len=int(doc["window_len"]),
                entries=entries,
                mode=mode,
                boundaries=tuple(boundaries),
                doc_id_per_token=ids,
            )
        )
    return segments
