"""Spearman footrule distance and its normalized similarity between rankings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class RankingMismatchError(ValueError):
    """The two rankings do not cover the same set of ids."""


def _positions(ranking: Sequence[str], label: str) -> dict[str, int]:
    pos = {item: i + 1 for i, item in enumerate(ranking)}
    if len(pos) != len(ranking):
        raise RankingMismatchError(f"{label} ranking contains duplicate ids")
    return pos


def footrule(sigma: Sequence[str], tau: Sequence[str]) -> int:
    """Sum over items of the absolute difference of 1-based positions."""
    pos_s = _positions(sigma, "first")
    pos_t = _positions(tau, "second")
    if pos_s.keys() != pos_t.keys():
        only_s = sorted(pos_s.keys() - pos_t.keys())
        only_t = sorted(pos_t.keys() - pos_s.keys())
        raise RankingMismatchError(
            f"rankings cover different ids (first-only: {only_s[:5]}, "
            f"second-only: {only_t[:5]})"
        )
    return sum(abs(pos_s[item] - pos_t[item]) for item in pos_s)


def max_footrule(n: int) -> int:
    """Largest possible footrule distance between two rankings of n items."""
    return (n * n) // 2


def footrule_similarity(sigma: Sequence[str], tau: Sequence[str]) -> float:
    """Normalized agreement in [0, 1]: 1 - footrule / max_footrule.

    1.0 for identical rankings, 0.0 for a full reversal of even length.
    """
    n = len(sigma)
    if n < 2:
        raise RankingMismatchError("similarity needs at least 2 items")
    dist = footrule(sigma, tau)
    max_d = max_footrule(n)
    # single division keeps exact decimal fixtures exact in binary
    return (max_d - dist) / max_d


@dataclass(frozen=True)
class RankPair:
    """A validated pair of rankings over the same ids."""

    sigma: tuple[str, ...]
    tau: tuple[str, ...]

    def __post_init__(self) -> None:
        footrule(self.sigma, self.tau)  # validates id sets and duplicates

    @property
    def distance(self) -> int:
        return footrule(self.sigma, self.tau)

    @property
    def similarity(self) -> float:
        return footrule_similarity(self.sigma, self.tau)
