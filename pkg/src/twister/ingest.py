"""Readers for Amazon Review 2018 / Goodreads JSON-lines dumps and a synthetic TEG generator."""

from __future__ import annotations

import gzip
import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.5


class IngestError(RuntimeError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    rating: float
    review: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be non-empty")

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "item_id": self.item_id, "rating": self.rating, "review": self.review}


@dataclass
class ParseResult:
    records: list[InteractionRecord]
    metadata: dict[str, str]
    skipped: int = 0


def open_text(path: str | os.PathLike) -> IO[str]:
    """Open a UTF-8 text file, transparently decompressing ``.gz``."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _lines(stream: Iterable[str] | str | os.PathLike) -> Iterable[str]:
    if isinstance(stream, (str, os.PathLike)):
        try:
            with open_text(stream) as fh:
                yield from fh
        except OSError as exc:
            raise IngestError(f"cannot read {stream}: {exc}") from exc
    else:
        yield from stream


def _text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, list):
        return " ".join(str(v) for v in value if v)
    return str(value)


def _parse(stream, user_key, item_key, rating_key, review_key, meta_fn) -> ParseResult:
    records: list[InteractionRecord] = []
    metadata: dict[str, str] = {}
    skipped = total = 0
    for line in _lines(stream):
        if not line.strip():
            continue
        total += 1
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
            item = str(obj.get(item_key) or "")
            user = obj.get(user_key)
            if user is None and rating_key not in obj:
                # metadata line: carries the item key but no interaction
                if not item:
                    raise ValueError("metadata line without item id")
                text = meta_fn(obj)
                if text:
                    metadata[item] = text
                continue
            if obj.get(rating_key) is None:
                raise ValueError("missing rating")
            review = obj.get(review_key)
            records.append(
                InteractionRecord(
                    str(user or ""),
                    item,
                    float(obj[rating_key]),
                    review if isinstance(review, str) else None,
                )
            )
        except (ValueError, TypeError) as exc:
            skipped += 1
            log.debug("skipping line %d: %s", total, exc)
    if total and skipped / total > MAX_MALFORMED_FRACTION:
        raise IngestError(f"{skipped} of {total} lines malformed; is this the right file format?")
    return ParseResult(records, metadata, skipped)


def _amazon_meta(obj: dict) -> str:
    parts = [_text(obj.get("title")).strip(), _text(obj.get("description")).strip()]
    return " ".join(p for p in parts if p)


def _goodreads_meta(obj: dict) -> str:
    return _text(obj.get("title")).strip()


def parse_amazon(stream) -> ParseResult:
    """Parse Amazon Review 2018 lines (``reviewerID``/``asin``/``overall``/``reviewText``).

    Metadata lines (``asin`` with ``title``/``description`` and no rating)
    may be interleaved or read from a separate stream with the same function.
    """
    return _parse(stream, "reviewerID", "asin", "overall", "reviewText", _amazon_meta)


def parse_goodreads(stream) -> ParseResult:
    """Parse Goodreads lines (``user_id``/``book_id``/``rating``/``review_text``)."""
    return _parse(stream, "user_id", "book_id", "rating", "review_text", _goodreads_meta)


PARSERS = {"amazon": parse_amazon, "goodreads": parse_goodreads}


def _vocabulary(review_vocab: int | Sequence[str]) -> list[str]:
    if isinstance(review_vocab, int):
        return [f"w{k:04d}" for k in range(review_vocab)]
    vocab = list(dict.fromkeys(str(w) for w in review_vocab))
    if not vocab:
        raise ValueError("review_vocab is empty")
    return vocab


def synth_teg(
    n_users: int,
    n_items: int,
    density: float,
    review_vocab: int | Sequence[str] = 400,
    seed: int = 0,
    n_blocks: int = 1,
    in_block: float = 0.85,
    review_prob: float = 1.0,
) -> tuple[list[InteractionRecord], dict[str, str]]:
    """Seeded synthetic interactions with planted preference blocks.

    Exactly ``round(density * n_users * n_items)`` distinct pairs are drawn,
    a fraction ``in_block`` of the probability mass falling on pairs whose
    user and item share a block. The vocabulary is split into one shared
    pool and one pool per block; every item and user also gets a few
    signature words, so review text carries the block of its edge.
    In-block edges are rated higher.
    """
    if n_users <= 0 or n_items <= 0:
        raise ValueError("n_users and n_items must be positive")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    rng = np.random.default_rng(seed)
    vocab = _vocabulary(review_vocab)
    user_block = np.arange(n_users) % n_blocks
    item_block = np.arange(n_items) % n_blocks
    same = user_block[:, None] == item_block[None, :]
    if n_blocks == 1:
        weight = np.ones((n_users, n_items))
    else:
        weight = np.where(same, in_block / same.sum(), (1.0 - in_block) / max(1, (~same).sum()))
    n_edges = min(n_users * n_items, max(1, round(density * n_users * n_items)))
    flat = rng.choice(n_users * n_items, size=n_edges, replace=False, p=(weight / weight.sum()).ravel())

    n_pools = n_blocks + 1
    pools = [vocab[k::n_pools] or vocab for k in range(n_pools)]
    shared, block_pools = pools[0], pools[1:]
    user_words = [rng.choice(block_pools[user_block[u]], size=3) for u in range(n_users)]
    item_words = [rng.choice(block_pools[item_block[i]], size=3) for i in range(n_items)]

    metadata = {}
    for i in range(n_items):
        title = " ".join(rng.choice(block_pools[item_block[i]], size=3))
        metadata[f"i{i}"] = f"{title} {' '.join(item_words[i])}"

    records = []
    for idx in sorted(int(x) for x in flat):
        u, i = divmod(idx, n_items)
        b = item_block[i]
        mean = 4.3 if same[u, i] else 2.3
        rating = float(np.clip(np.rint(rng.normal(mean, 0.7)), 1, 5))
        sentences = []
        for _ in range(rng.integers(2, 5)):
            words = []
            for _ in range(rng.integers(5, 10)):
                r = rng.random()
                if r < 0.45:
                    words.append(rng.choice(block_pools[b]))
                elif r < 0.65:
                    words.append(rng.choice(item_words[i]))
                elif r < 0.8:
                    words.append(rng.choice(user_words[u]))
                else:
                    words.append(rng.choice(shared))
            sentences.append(" ".join(str(w) for w in words) + ".")
        review = " ".join(sentences) if rng.random() < review_prob else None
        records.append(InteractionRecord(f"u{u}", f"i{i}", rating, review))
    return records, metadata


def write_records(path: str | os.PathLike, records: Iterable[InteractionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path: str | os.PathLike) -> list[InteractionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(InteractionRecord(d["user_id"], d["item_id"], d["rating"], d.get("review")))
    return out
