"""IN/OUT decision from the 2D position of the bounce relative to annotated court lines."""

import json
import logging
import math
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from elc.errors import DegenerateLine

logger = logging.getLogger(__name__)


class CourtLine(BaseModel):
    """A painted line in image coordinates.

    in_side = +1 marks the side where the cross product (p1 - p0) x (p - p0) is positive
    as the in-bounds side; -1 the other one.
    """

    model_config = ConfigDict(extra="forbid")

    name: str
    p0: Tuple[float, float]
    p1: Tuple[float, float]
    thickness: float = Field(0.0, ge=0)
    in_side: Literal[1, -1] = 1


class CourtLineSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lines: List[CourtLine]
    delta: float = 0.0

    @field_validator("lines")
    @classmethod
    def _non_empty(cls, lines):
        if not lines:
            raise ValueError("Court spec needs at least one line")
        return lines

    @model_validator(mode="after")
    def _no_degenerate(self):
        for line in self.lines:
            if tuple(line.p0) == tuple(line.p1):
                raise ValueError(f"Line {line.name!r} has identical endpoints")
        return self

    def translated(self, dx: float, dy: float) -> "CourtLineSpec":
        moved = [
            line.model_copy(update={
                "p0": (line.p0[0] + dx, line.p0[1] + dy),
                "p1": (line.p1[0] + dx, line.p1[1] + dy),
            })
            for line in self.lines
        ]
        return self.model_copy(update={"lines": moved})


class Verdict(BaseModel):
    call: Literal["IN", "OUT"]
    decisive_line: str
    margin: float
    per_line: List[Tuple[str, float]]
    confident: bool = True


def signed_distance(p: Tuple[float, float], line: CourtLine) -> float:
    """Distance from the line's outer edge, positive on the in-bounds side.

    Any point on the painted surface scores >= 0, so a ball touching the line is in.
    """
    (x0, y0), (x1, y1) = line.p0, line.p1
    dx, dy = x1 - x0, y1 - y0
    length = math.hypot(dx, dy)
    if length == 0:
        raise DegenerateLine(f"Line {line.name!r} has identical endpoints")
    cross = dx * (p[1] - y0) - dy * (p[0] - x0)
    return line.in_side * cross / length + line.thickness / 2.0


def call(bounce, court: CourtLineSpec, delta: Optional[float] = None) -> Verdict:
    """`bounce` is a BouncePrediction or anything with .x, .y (and optionally .confident)."""
    delta = court.delta if delta is None else delta
    point = (bounce.x, bounce.y)
    per_line = sorted((line.name, signed_distance(point, line)) for line in court.lines)
    decisive, margin = min(per_line, key=lambda item: (item[1], item[0]))
    verdict = Verdict(
        call="OUT" if margin < -delta else "IN",
        decisive_line=decisive,
        margin=margin,
        per_line=per_line,
        confident=bool(getattr(bounce, "confident", True)),
    )
    logger.info(f"Call {verdict.call} on {decisive} (margin {margin:+.2f}px, confident={verdict.confident})")
    return verdict


def load_court(path: str) -> CourtLineSpec:
    with open(path, "r", encoding="utf-8") as f:
        return CourtLineSpec.model_validate(json.load(f))


def save_court(court: CourtLineSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(court.model_dump(mode="json"), f, indent=2)
        f.write("\n")


def parse_line_arg(text: str) -> CourtLine:
    """name:x0,y0:x1,y1[:thickness[:in_side]] as typed on the command line."""
    parts = text.split(":")
    if len(parts) < 3:
        raise ValueError(f"Expected name:x0,y0:x1,y1[:thickness[:in_side]], got {text!r}")
    p0 = tuple(float(v) for v in parts[1].split(","))
    p1 = tuple(float(v) for v in parts[2].split(","))
    fields = {"name": parts[0], "p0": p0, "p1": p1}
    if len(parts) > 3 and parts[3]:
        fields["thickness"] = float(parts[3])
    if len(parts) > 4 and parts[4]:
        fields["in_side"] = int(parts[4])
    return CourtLine(**fields)
