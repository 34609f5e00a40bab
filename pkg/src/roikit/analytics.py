"""Two-alternative forced-choice bookkeeping: preference ratios and intervals.

A preference fraction p maps to the ratio p/(1-p); 1.0 is indifference.
Summaries use the normal-approximation interval by default (matching the
±0.04 style of reporting this kind of study uses) with Wilson available
behind a flag. Degenerate tallies (everyone on one side) report no finite
ratio: the summary's `preference` is None.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

Z_95 = 1.96


@dataclass(frozen=True)
class VoteTally:
    prefer_a: int
    prefer_b: int

    def __post_init__(self):
        if self.prefer_a < 0 or self.prefer_b < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.prefer_a + self.prefer_b


@dataclass(frozen=True)
class TallySummary:
    fraction: float
    halfwidth: float
    preference: float | None  # None when the fraction is 0 or 1 (unbounded)
    n: int


def preference(p) -> float:
    """p/(1-p) for a preference fraction strictly inside (0, 1).

    Accepts any Real (fractions.Fraction stays exact). Raises ValueError at
    or outside the endpoints, where the ratio is zero or unbounded.
    """
    if not 0 < p < 1:
        raise ValueError(f"preference fraction must lie in (0, 1), got {p}")
    return p / (1 - p)


def tally_summary(tally: VoteTally, wilson: bool = False) -> TallySummary:
    """Fraction preferring A, 95% CI halfwidth, and the preference ratio.

    The ratio is computed from the raw counts (a/b), which is exact for
    integer tallies; unanimous tallies yield preference None.
    """
    n = tally.total
    if n < 1:
        raise ValueError("cannot summarize an empty tally")
    p = tally.prefer_a / n
    if wilson:
        z2 = Z_95 * Z_95
        halfwidth = (Z_95 * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))) / (1 + z2 / n)
    else:
        halfwidth = Z_95 * math.sqrt(p * (1 - p) / n)
    ratio = tally.prefer_a / tally.prefer_b if 0 < tally.prefer_a < n else None
    return TallySummary(fraction=p, halfwidth=halfwidth, preference=ratio, n=n)


def read_tally_file(path: Path | str) -> list[tuple[str, VoteTally]]:
    """Parse a line-delimited tally file: `video_id prefer_a prefer_b` per line.

    Blank lines and lines starting with # are skipped.
    """
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'video_id prefer_a prefer_b'")
        out.append((parts[0], VoteTally(int(parts[1]), int(parts[2]))))
    return out
