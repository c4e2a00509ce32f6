"""Needle-retrieval corpus synthesis.

Each sample is a long document with a "magic number" sentence planted near
the start, book text filling the middle, and a retrieval question plus
answer stem at the end, with the answer digits' character and token spans
recorded so an evaluator can score only those tokens.
"""

from __future__ import annotations

import json
import re
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import jsonutil
from .errors import SourceTooShortError

PREAMBLE = (
    "A special magic number is hidden within the following text. "
    "Make sure to memorize it. I will quiz you about the number afterwards."
)
NEEDLE_TEMPLATE = "One of the special magic numbers for {key_word} is: {magic_number}."
QUESTION_TEMPLATE = (
    "What is the special magic number for {key_word} mentioned in the provided text?"
)
ANSWER_STEM_TEMPLATE = (
    "The special magic number for {key_word} mentioned in the provided text is"
)

# Tokenizers merge across part boundaries; allow the assembled sample to
# fall at most this many tokens short of the target.
TOKEN_SLACK = 16

ADJECTIVES = (
    "able", "acute", "amber", "ancient", "arid", "bitter", "bold", "brave",
    "brief", "bright", "brisk", "broad", "calm", "cheap", "chilly", "clever",
    "cloudy", "coarse", "cold", "crisp", "curly", "curved", "damp", "dark",
    "deep", "dense", "dizzy", "dusty", "eager", "early", "earnest", "easy",
    "elated", "empty", "even", "faint", "fancy", "fast", "fierce", "firm",
    "flat", "fond", "formal", "frail", "fresh", "gentle", "giant", "glad",
    "gloomy", "golden", "grand", "grave", "great", "green", "happy", "hardy",
    "hasty", "heavy", "hollow", "humble", "icy", "idle", "ivory", "jolly",
    "keen", "kind", "large", "late", "lazy", "light", "lively", "lofty",
    "loud", "loyal", "lucky", "mellow", "merry", "mild", "misty", "modern",
    "narrow", "neat", "nimble", "noble", "numerous", "odd", "pale", "plain",
    "polite", "proud", "quick", "quiet", "rapid", "rare", "rigid", "ripe",
    "rough", "round", "royal", "rusty", "sandy", "sharp", "shiny", "silent",
    "silver", "simple", "sleek", "slow", "small", "smooth", "solid", "stark",
    "steady", "steep", "stern", "still", "stout", "swift", "tall", "tender",
    "tidy", "tiny", "vivid", "warm", "weary", "wide", "wild", "young",
)

NOUNS = (
    "anchor", "apple", "arrow", "badge", "banner", "basket", "beacon", "bell",
    "berry", "boat", "bottle", "box", "branch", "brick", "bridge", "brook",
    "brush", "bucket", "button", "cabin", "candle", "canyon", "castle", "cedar",
    "chair", "chest", "cliff", "clock", "cloud", "coin", "comet", "coral",
    "crane", "crown", "cup", "daisy", "deer", "dome", "door", "drum",
    "eagle", "ember", "fence", "fern", "field", "flag", "flute", "forest",
    "fox", "garden", "gate", "glacier", "glove", "grape", "harbor", "harp",
    "hawk", "hill", "horn", "house", "island", "ivy", "jar", "kettle",
    "key", "kite", "ladder", "lake", "lamp", "lantern", "leaf", "lemon",
    "lily", "lion", "maple", "marble", "meadow", "mirror", "moon", "mountain",
    "oak", "ocean", "orchard", "otter", "owl", "pearl", "pebble", "pine",
    "pond", "quill", "rabbit", "raven", "reef", "ribbon", "ridge", "river",
    "robin", "rose", "sail", "shell", "ship", "spring", "star", "stone",
    "swan", "table", "thorn", "tiger", "tower", "trail", "tulip", "valley",
    "violet", "wagon", "walnut", "wave", "wheel", "willow", "window", "wolf",
)


@dataclass(frozen=True)
class Needle:
    """An adjective-noun key and its 7-digit magic number."""

    key_word: str
    magic_number: int

    def __post_init__(self):
        if not re.fullmatch(r"[a-z]+-[a-z]+", self.key_word):
            raise ValueError(f"key_word must match lowercase pair form, got {self.key_word!r}")
        if not 1_000_000 <= self.magic_number <= 9_999_999:
            raise ValueError(f"magic_number must have 7 digits, got {self.magic_number}")

    @property
    def sentence(self) -> str:
        return NEEDLE_TEMPLATE.format(key_word=self.key_word, magic_number=self.magic_number)


@dataclass(frozen=True)
class NeedleSample:
    full_text: str
    needle: Needle
    answer_char_span: tuple[int, int]
    token_len: int
    answer_token_span: tuple[int, int]
    tokenizer_id: str


class Tokenizer(Protocol):
    tokenizer_id: str

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


class WhitespaceTokenizer:
    """Deterministic test tokenizer: one token per whitespace-led word.

    Pieces match ``\\s*\\S+`` (leading whitespace glued to the word) plus a
    final pure-whitespace run, so decoding the encoded pieces reproduces the
    input exactly.  Ids grow as new pieces appear; the id assignment has no
    effect on any measurement here, only the piece boundaries do.
    """

    tokenizer_id = "whitespace-v1"
    _piece_re = re.compile(r"\s*\S+|\s+")

    def __init__(self):
        self._ids: dict[str, int] = {}
        self._pieces: list[str] = []
        self._lock = threading.Lock()

    def _piece_id(self, piece: str) -> int:
        with self._lock:
            pid = self._ids.get(piece)
            if pid is None:
                pid = len(self._pieces)
                self._ids[piece] = pid
                self._pieces.append(piece)
            return pid

    def encode(self, text: str) -> list[int]:
        return [self._piece_id(p) for p in self._piece_re.findall(text)]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self._pieces[i] for i in ids)


def make_needle(rng: np.random.Generator) -> Needle:
    """Uniform adjective-noun pair and 7-digit number."""
    adjective = ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]
    noun = NOUNS[int(rng.integers(len(NOUNS)))]
    magic = int(rng.integers(1_000_000, 10_000_000))
    return Needle(key_word=f"{adjective}-{noun}", magic_number=magic)


def synthesize_sample(
    book_text: str,
    target_tokens: int,
    tokenizer: Tokenizer,
    rng: np.random.Generator,
) -> NeedleSample:
    """Assemble one needle sample of ``target_tokens`` tokens from a book.

    Only the book body is truncated, at token boundaries; the template
    strings and answer digits are kept intact so the recorded spans are
    exact.
    """
    needle = make_needle(rng)
    digits = str(needle.magic_number)
    header = PREAMBLE + "\n" + needle.sentence
    question_block = (
        "\n"
        + QUESTION_TEMPLATE.format(key_word=needle.key_word)
        + " "
        + ANSWER_STEM_TEMPLATE.format(key_word=needle.key_word)
    )
    answer_block = " " + digits

    overhead = sum(
        len(tokenizer.encode(part)) for part in (header, question_block, answer_block)
    )
    budget = target_tokens - overhead
    if budget < 1:
        raise SourceTooShortError(
            f"target of {target_tokens} tokens leaves no room after {overhead} template tokens"
        )

    body_ids = tokenizer.encode(" " + book_text.strip())
    full_text = ""
    token_len = 0
    for _ in range(4):  # re-trim if boundary merges overshoot the target
        if len(body_ids) < budget:
            raise SourceTooShortError(
                f"book provides {len(body_ids)} body tokens, need {budget}"
            )
        body_text = tokenizer.decode(body_ids[:budget])
        full_text = header + body_text + question_block + answer_block
        token_len = len(tokenizer.encode(full_text))
        if token_len <= target_tokens:
            break
        budget -= token_len - target_tokens
    if token_len > target_tokens or token_len < target_tokens - TOKEN_SLACK:
        raise SourceTooShortError(
            f"assembled sample has {token_len} tokens for target {target_tokens}"
        )

    if full_text.count(needle.sentence) != 1:
        raise ValueError("needle sentence must appear exactly once in the sample")

    answer_char_span = (len(full_text) - len(digits), len(full_text))
    answer_ids = tokenizer.encode(answer_block)
    answer_token_span = (token_len - len(answer_ids), token_len)
    decoded = tokenizer.decode(tokenizer.encode(full_text)[slice(*answer_token_span)])
    if decoded.strip() != digits:
        raise ValueError(
            f"answer span decodes to {decoded!r}, expected the digits {digits!r}"
        )
    return NeedleSample(
        full_text=full_text,
        needle=needle,
        answer_char_span=answer_char_span,
        token_len=token_len,
        answer_token_span=answer_token_span,
        tokenizer_id=tokenizer.tokenizer_id,
    )


def build_corpus(
    books: Sequence[str],
    n_samples: int,
    target_tokens: int,
    tokenizer: Tokenizer,
    rng: np.random.Generator,
) -> list[NeedleSample]:
    """Synthesize ``n_samples`` samples, one book per sample, cycling.

    Books that are too short for the target are skipped with a warning; the
    build fails only if a sample slot cannot be filled by any book.
    Per-sample generators are spawned from ``rng`` so samples are
    independent and the corpus is a pure function of (books, params, seed).
    """
    if n_samples == 0:
        return []
    if not books:
        raise SourceTooShortError("no books supplied")
    streams = rng.spawn(n_samples)
    samples: list[NeedleSample] = []
    cursor = 0
    for stream in streams:
        for attempt in range(len(books)):
            book_index = (cursor + attempt) % len(books)
            try:
                samples.append(
                    synthesize_sample(books[book_index], target_tokens, tokenizer, stream)
                )
                cursor = book_index + 1
                break
            except SourceTooShortError as exc:
                warnings.warn(f"book {book_index} skipped: {exc}", stacklevel=2)
        else:
            raise SourceTooShortError(
                f"only {len(samples)} of {n_samples} samples could be synthesized"
            )
    return samples


def sample_document(sample: NeedleSample) -> dict:
    """JSON-ready corpus line (fixed key order, magic number as a string)."""
    return {
        "text": sample.full_text,
        "key_word": sample.needle.key_word,
        "magic_number": str(sample.needle.magic_number),
        "answer_char_span": list(sample.answer_char_span),
        "token_len": sample.token_len,
        "answer_token_span": list(sample.answer_token_span),
        "tokenizer_id": sample.tokenizer_id,
    }


def write_corpus(samples: Sequence[NeedleSample], path: str | Path) -> None:
    lines = [jsonutil.dumps(sample_document(s)) for s in samples]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_corpus(path: str | Path) -> list[NeedleSample]:
    samples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        samples.append(
            NeedleSample(
                full_text=doc["text"],
                needle=Needle(
                    key_word=doc["key_word"], magic_number=int(doc["magic_number"])
                ),
                answer_char_span=tuple(doc["answer_char_span"]),
                token_len=int(doc["token_len"]),
                answer_token_span=tuple(doc["answer_token_span"]),
                tokenizer_id=doc["tokenizer_id"],
            )
        )
    return samples
