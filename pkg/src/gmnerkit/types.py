"""Core domain types shared by every pipeline stage.

All types are immutable after construction and validate their own invariants,
so a loaded dataset can be shared freely across threads.
"""
from __future__ import annotations

from dataclasses import dataclass


class InvariantError(ValueError):
    """A domain type invariant was violated."""


@dataclass(frozen=True)
class EntityType:
    name: str
    id: int

    def __post_init__(self):
        if not self.name:
            raise InvariantError("entity type name must be non-empty")
        if self.id < 0:
            raise InvariantError(f"entity type id must be >= 0, got {self.id}")


def build_schema(names: list[str]) -> list[EntityType]:
    """Build a schema of entity types with dense ids assigned in list order."""
    seen = set()
    for name in names:
        if name in seen:
            raise InvariantError(f"duplicate entity type name: {name!r}")
        seen.add(name)
    return [EntityType(name=name, id=i) for i, name in enumerate(names)]


def schema_by_name(schema: list[EntityType]) -> dict[str, EntityType]:
    return {t.name: t for t in schema}


@dataclass(frozen=True)
class Token:
    surface: str
    char_start: int
    char_end: int


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if not self.text:
            raise InvariantError(f"sentence {self.id!r}: empty text")
        prev_end = 0
        for i, tok in enumerate(self.tokens):
            if not (0 <= tok.char_start < tok.char_end <= len(self.text)):
                raise InvariantError(
                    f"sentence {self.id!r}: token {i} range "
                    f"[{tok.char_start},{tok.char_end}) outside text bounds"
                )
            if tok.char_start < prev_end:
                raise InvariantError(
                    f"sentence {self.id!r}: token {i} overlaps previous token"
                )
            if self.text[tok.char_start:tok.char_end] != tok.surface:
                raise InvariantError(
                    f"sentence {self.id!r}: token {i} surface {tok.surface!r} does not "
                    f"match text range"
                )
            prev_end = tok.char_end

    def __len__(self) -> int:
        return len(self.tokens)

    def token_surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]


@dataclass(frozen=True)
class MentionSpan:
    sentence_id: str
    token_start: int  # inclusive
    token_end: int    # exclusive
    surface: str
    etype: EntityType

    def __post_init__(self):
        if not (0 <= self.token_start < self.token_end):
            raise InvariantError(
                f"span [{self.token_start},{self.token_end}) in {self.sentence_id!r} "
                f"is not a valid token range"
            )

    def overlaps(self, other: "MentionSpan") -> bool:
        return (
            self.sentence_id == other.sentence_id
            and self.token_start < other.token_end
            and other.token_start < self.token_end
        )

    def check_against(self, sentence: Sentence) -> None:
        """Validate the span against its sentence: bounds and surface text."""
        if self.sentence_id != sentence.id:
            raise InvariantError(
                f"span references sentence {self.sentence_id!r}, got {sentence.id!r}"
            )
        if self.token_end > len(sentence.tokens):
            raise InvariantError(
                f"span [{self.token_start},{self.token_end}) exceeds token count "
                f"{len(sentence.tokens)} of sentence {sentence.id!r}"
            )
        covered = sentence.text[
            sentence.tokens[self.token_start].char_start:
            sentence.tokens[self.token_end - 1].char_end
        ]
        if covered != self.surface:
            raise InvariantError(
                f"span surface {self.surface!r} does not match covered text "
                f"{covered!r} in sentence {sentence.id!r}"
            )


@dataclass(frozen=True)
class BoundingBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise InvariantError(
                f"degenerate box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )

    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def clip_box(x_min: float, y_min: float, x_max: float, y_max: float,
             width: int, height: int) -> BoundingBox | None:
    """Clip raw coordinates to image bounds; None when nothing remains."""
    x0 = max(0, min(int(round(x_min)), width))
    y0 = max(0, min(int(round(y_min)), height))
    x1 = max(0, min(int(round(x_max)), width))
    y1 = max(0, min(int(round(y_max)), height))
    if x0 >= x1 or y0 >= y1:
        return None
    return BoundingBox(x0, y0, x1, y1)


@dataclass(frozen=True)
class GmnerTriplet:
    """One task output unit: a typed mention plus its visual region.

    ``region`` is None when the entity is declared not visible in the image.
    """
    mention: MentionSpan
    region: BoundingBox | None = None


@dataclass(frozen=True)
class AnnotatedSample:
    sentence: Sentence
    triplets: tuple[GmnerTriplet, ...]
    image_path: str
    image_w: int
    image_h: int

    def __post_init__(self):
        if self.image_w <= 0 or self.image_h <= 0:
            raise InvariantError(
                f"sample {self.sentence.id!r}: image dimensions must be positive"
            )
        for trip in self.triplets:
            trip.mention.check_against(self.sentence)
            box = trip.region
            if box is not None:
                if box.x_max > self.image_w or box.y_max > self.image_h or box.x_min < 0 or box.y_min < 0:
                    raise InvariantError(
                        f"sample {self.sentence.id!r}: box {box.as_list()} outside "
                        f"{self.image_w}x{self.image_h} image"
                    )

    def mentions(self) -> list[MentionSpan]:
        return [t.mention for t in self.triplets]

    def has_regions(self) -> bool:
        return any(t.region is not None for t in self.triplets)
