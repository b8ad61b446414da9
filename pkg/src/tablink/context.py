"""Multi-source cell, paper and entity representations for the encoder.

Every representation is serialized to a ``TaggedSequence``: whitespace tokens
plus a parallel segment tag per token telling the encoder which feature the
token came from. The constants below are part of the wire format; two
implementations that follow them produce byte-identical serializations.

* separator token between features: ``⟨SEP⟩`` (also the in-row/in-column
  cell separator),
* fused-pair boundary token: ``⟨PAIR⟩`` (tagged META),
* placeholder for an empty cell: ``⟨EMPTY⟩``,
* cell metadata is rendered as ``region=<v> pos=<r>,<c> rpos=<r>,<c>
  ref=<0|1>`` and whitespace-split,
* cell token order: cell content, metadata, row context, column context,
  context sentences (best rank first); paper order: reference index, first
  author, year, title, abstract; entity order: abbreviation, full name,
  description. Empty features are omitted together with their separator.

Sequences are capped at ``DEFAULT_MAX_TOKENS``. The trimming order drops the
lowest-ranked sentences first, then column tokens (right to left), then row
tokens; cell content and metadata are never trimmed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from weakref import WeakKeyDictionary

from tablink.corpus import DocumentRecord, ReferenceEntry, TableCellRecord, TableRecord
from tablink.errors import NotFoundError
from tablink.kb import Entity
from tablink.lexical import TextIndex

SEP_TOKEN = "⟨SEP⟩"
PAIR_TOKEN = "⟨PAIR⟩"
EMPTY_TOKEN = "⟨EMPTY⟩"

TAG_CELL = "CELL"
TAG_SENTENCE = "SENTENCE"
TAG_ROW = "ROW"
TAG_COL = "COL"
TAG_META = "META"
TAG_PAPER = "PAPER"
TAG_ENTITY = "ENTITY"
SEGMENT_TAGS = (TAG_CELL, TAG_SENTENCE, TAG_ROW, TAG_COL, TAG_META, TAG_PAPER, TAG_ENTITY)
_CORE_TAGS = {TAG_CELL, TAG_PAPER, TAG_ENTITY}

REGIONS = ("top-left", "top-right", "bottom-left", "bottom-right")

DEFAULT_N_SENTENCES = 5
DEFAULT_MAX_TOKENS = 512


@dataclass(frozen=True)
class TaggedSequence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ValueError(
                f"tokens and tags differ in length: {len(self.tokens)} vs {len(self.tags)}"
            )
        if not _CORE_TAGS.intersection(self.tags):
            raise ValueError("sequence has no CELL-, PAPER- or ENTITY-tagged span")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CellContext:
    cell_content: str
    region: str
    context_sentences: tuple[str, ...]
    row_context: str
    col_context: str
    position: tuple[int, int]
    reverse_position: tuple[int, int]
    has_reference: bool


# -- sentence retrieval ------------------------------------------------------

_sentence_indexes: "WeakKeyDictionary[DocumentRecord, TextIndex]" = WeakKeyDictionary()


def _sentence_index(document: DocumentRecord) -> TextIndex:
    index = _sentence_indexes.get(document)
    if index is None:
        index = TextIndex(document.sentences)
        _sentence_indexes[document] = index
    return index


def bm25_sentences(query: str, document: DocumentRecord, n: int) -> list[str]:
    """Top-n document sentences by BM25, ties broken by sentence position."""
    if n <= 0:
        return []
    hits = _sentence_index(document).search(query, k=n)
    return [document.sentences[pos] for pos, _ in hits]


# -- table geometry ----------------------------------------------------------

_NUMERIC_STRIP = re.compile(r"[%,±\s]")


def is_numeric_cell(text: str) -> bool:
    """True when the text parses as a real number after stripping %, ± and commas."""
    stripped = _NUMERIC_STRIP.sub("", text)
    if not stripped:
        return False
    try:
        float(stripped)
    except ValueError:
        return False
    return True


def compute_region(cell: TableCellRecord, table: TableRecord) -> str:
    """Quadrant of the cell relative to the top-left-most numeric cell.

    Tables without any numeric cell fall back to the grid center as the
    anchor. Rows/columns at or past the anchor count as bottom/right.
    """
    anchor: tuple[float, float] | None = None
    for r in range(table.n_rows):
        for c in range(table.n_cols):
            if is_numeric_cell(table.grid[r][c]):
                anchor = (float(r), float(c))
                break
        if anchor is not None:
            break
    if anchor is None:
        anchor = ((table.n_rows - 1) / 2.0, (table.n_cols - 1) / 2.0)
    vertical = "top" if cell.row < anchor[0] else "bottom"
    horizontal = "left" if cell.col < anchor[1] else "right"
    return f"{vertical}-{horizontal}"


_BRACKET_CITATION = re.compile(r"\[\s*\d+(?:\s*[,;–-]\s*\d+)*\s*\]")
# a parenthetical holding a capitalized name and a plausible year
_NAME_YEAR_CITATION = re.compile(r"\([^()]*[A-Z][^()]*\b(?:19|20)\d{2}[a-z]?\s*\)")


def detect_reference(cell_text: str) -> bool:
    """True when the text carries an inline citation pattern."""
    return bool(
        _BRACKET_CITATION.search(cell_text) or _NAME_YEAR_CITATION.search(cell_text)
    )


def build_cell_context(
    cell: TableCellRecord,
    document: DocumentRecord,
    n_sentences: int = DEFAULT_N_SENTENCES,
) -> CellContext:
    """Assemble all cell representation features."""
    table = None
    for t in document.tables:
        if t.id == cell.table_id:
            table = t
            break
    if table is None:
        raise NotFoundError(f"document {document.id!r} has no table {cell.table_id!r}")
    row_cells = table.grid[cell.row]
    col_cells = tuple(table.grid[r][cell.col] for r in range(table.n_rows))
    return CellContext(
        cell_content=cell.raw_text,
        region=compute_region(cell, table),
        context_sentences=tuple(bm25_sentences(cell.raw_text, document, n_sentences)),
        row_context=f" {SEP_TOKEN} ".join(row_cells).strip(),
        col_context=f" {SEP_TOKEN} ".join(col_cells).strip(),
        position=(cell.row, cell.col),
        reverse_position=(table.n_rows - 1 - cell.row, table.n_cols - 1 - cell.col),
        has_reference=detect_reference(cell.raw_text),
    )


# -- serialization -----------------------------------------------------------

def _meta_tokens(context: CellContext) -> list[str]:
    r, c = context.position
    rr, rc = context.reverse_position
    rendered = (
        f"region={context.region} pos={r},{c} rpos={rr},{rc} "
        f"ref={1 if context.has_reference else 0}"
    )
    return rendered.split()


def serialize_cell(context: CellContext, max_tokens: int = DEFAULT_MAX_TOKENS) -> TaggedSequence:
    """Tagged token sequence for a cell, trimmed to the token budget."""
    cell_tokens = context.cell_content.split() or [EMPTY_TOKEN]
    spans: list[tuple[str, list[str]]] = [
        (TAG_CELL, cell_tokens),
        (TAG_META, [SEP_TOKEN] + _meta_tokens(context)),
        (TAG_ROW, [SEP_TOKEN] + context.row_context.split()),
        (TAG_COL, [SEP_TOKEN] + context.col_context.split()),
    ]
    for sentence in context.context_sentences:
        spans.append((TAG_SENTENCE, [SEP_TOKEN] + sentence.split()))

    def total() -> int:
        return sum(len(tokens) for _, tokens in spans)

    # lowest-ranked sentences go first
    while total() > max_tokens and spans[-1][0] == TAG_SENTENCE:
        spans.pop()
    for victim in (TAG_COL, TAG_ROW):
        while total() > max_tokens:
            tokens = next(tokens for tag, tokens in spans if tag == victim)
            if tokens:
                tokens.pop()
            else:
                break
        spans = [(tag, tokens) for tag, tokens in spans if tokens]
        if total() <= max_tokens:
            break
    if total() > max_tokens:
        raise ValueError(
            f"cell content exceeds the {max_tokens}-token budget and cannot be trimmed"
        )
    tokens = tuple(tok for _, span in spans for tok in span)
    tags = tuple(tag for tag, span in spans for _ in span)
    return TaggedSequence(tokens=tokens, tags=tags)


def _fielded_sequence(
    fields: list[str], tag: str, max_tokens: int
) -> TaggedSequence:
    tokens: list[str] = []
    for text in fields:
        parts = text.split()
        if not parts:
            continue
        if tokens:
            tokens.append(SEP_TOKEN)
        tokens.extend(parts)
    if not tokens:
        tokens = [EMPTY_TOKEN]
    tokens = tokens[:max_tokens]
    return TaggedSequence(tokens=tuple(tokens), tags=(tag,) * len(tokens))


def serialize_paper(
    entry: ReferenceEntry, max_tokens: int = DEFAULT_MAX_TOKENS
) -> TaggedSequence:
    """Reference paper representation: index, author, year, title, abstract."""
    return _fielded_sequence(
        [
            str(entry.index_in_reference_section),
            entry.first_author_last_name,
            str(entry.year) if entry.year is not None else "",
            entry.title,
            entry.abstract,
        ],
        TAG_PAPER,
        max_tokens,
    )


def serialize_self_source(
    document: DocumentRecord, max_tokens: int = DEFAULT_MAX_TOKENS
) -> TaggedSequence:
    """The document itself as an attribution source, with index token 0."""
    return _fielded_sequence(
        ["0", "", "", document.self_title, document.abstract], TAG_PAPER, max_tokens
    )


def serialize_entity(entity: Entity, max_tokens: int = DEFAULT_MAX_TOKENS) -> TaggedSequence:
    """KB entity representation: abbreviation, full name, description."""
    return _fielded_sequence(
        [entity.abbreviation, entity.full_name, entity.description], TAG_ENTITY, max_tokens
    )


def fuse_pair(left: TaggedSequence, right: TaggedSequence) -> TaggedSequence:
    """Concatenate two sequences around the pair boundary token."""
    return TaggedSequence(
        tokens=left.tokens + (PAIR_TOKEN,) + right.tokens,
        tags=left.tags + (TAG_META,) + right.tags,
    )


def pair_budgets(max_tokens: int = DEFAULT_MAX_TOKENS) -> tuple[int, int]:
    """Per-side token budgets so a fused pair fits in ``max_tokens``."""
    left = (max_tokens - 1) // 2
    return left, max_tokens - 1 - left
