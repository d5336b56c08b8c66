"""Gaussian skill ratings from the comparison log, display scores, aggregation.

Implements the standard two-player, zero-draw TrueSkill update by moment
matching: each item keeps a Gaussian belief (mu, sigma) that tightens as it
wins and loses adjudications, and the finished table is mapped onto a
display scale and rolled up by county or province.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .corpus import Item
from .ranker import ComparisonRecord

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class RatingError(ValueError):
    """Raised for invalid rating inputs or non-finite updates."""


@dataclass(frozen=True)
class RatingParams:
    """Prior and dynamics of the rating model.

    ``beta`` is the performance variability per game and ``tau_dyn`` the
    skill drift added before every update; defaults follow the common
    mu0/3, mu0/6, sigma0/100 convention.  Draws are impossible because every
    adjudication is a forced choice.
    """

    mu0: float = 25.0
    sigma0: float = 25.0 / 3.0
    beta: float | None = None
    tau_dyn: float | None = None
    draw_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma0 <= 0:
            raise RatingError("sigma0 must be positive")
        if self.beta is None:
            object.__setattr__(self, "beta", self.sigma0 / 2.0)
        if self.tau_dyn is None:
            object.__setattr__(self, "tau_dyn", self.sigma0 / 100.0)
        if self.beta <= 0 or self.tau_dyn < 0:
            raise RatingError("beta must be positive and tau_dyn non-negative")
        if self.draw_prob != 0.0:
            raise RatingError("outcomes are forced-choice; draw_prob must be 0")


@dataclass(frozen=True)
class Rating:
    """Per-item Gaussian belief plus the number of games incorporated."""

    item_id: str
    mu: float
    sigma: float
    games: int = 0


def _pdf(x: float) -> float:
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


def _cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / SQRT2)


def _v_win(t: float) -> float:
    denom = _cdf(t)
    if denom < 1e-300:
        # deep tail: phi/Phi approaches -t
        return -t
    return _pdf(t) / denom


def update_pair(
    winner: Rating, loser: Rating, p: RatingParams = RatingParams()
) -> tuple[Rating, Rating]:
    """Apply one win/loss observation and return the two posterior ratings.

    Both variances are first inflated by tau_dyn**2, then moment matching
    shifts the means toward the observed outcome and shrinks both sigmas.
    """
    var_w = winner.sigma**2 + p.tau_dyn**2
    var_l = loser.sigma**2 + p.tau_dyn**2
    c_sq = 2.0 * p.beta**2 + var_w + var_l
    c = math.sqrt(c_sq)
    t = (winner.mu - loser.mu) / c
    v = _v_win(t)
    w = v * (v + t)

    mu_w = winner.mu + (var_w / c) * v
    mu_l = loser.mu - (var_l / c) * v
    sig_w = math.sqrt(var_w * (1.0 - (var_w / c_sq) * w))
    sig_l = math.sqrt(var_l * (1.0 - (var_l / c_sq) * w))

    for value in (mu_w, mu_l, sig_w, sig_l):
        if not math.isfinite(value):
            raise RatingError(
                f"non-finite rating update for ({winner.item_id}, {loser.item_id}); "
                f"check RatingParams"
            )

    return (
        Rating(winner.item_id, mu_w, sig_w, winner.games + 1),
        Rating(loser.item_id, mu_l, sig_l, loser.games + 1),
    )


def rate_log(
    records: Iterable[ComparisonRecord],
    item_ids: Iterable[str],
    p: RatingParams = RatingParams(),
) -> dict[str, Rating]:
    """Fold the comparison log, in order, into per-item ratings.

    All items start at (mu0, sigma0); cached records are restatements of
    already-counted adjudications and are skipped.  Deterministic: only the
    log order matters, not the order of ``item_ids``.
    """
    ratings = {
        item_id: Rating(item_id, p.mu0, p.sigma0) for item_id in sorted(item_ids)
    }
    for record in records:
        if record.cached:
            continue
        winner_id, loser_id = record.final_winner, record.loser
        if winner_id not in ratings or loser_id not in ratings:
            missing = winner_id if winner_id not in ratings else loser_id
            raise RatingError(f"log references unknown item {missing!r}")
        new_w, new_l = update_pair(ratings[winner_id], ratings[loser_id], p)
        ratings[winner_id] = new_w
        ratings[loser_id] = new_l
    return ratings


def mu_order(ratings: Mapping[str, Rating]) -> list[str]:
    """Item ids sorted best-first by mu (id breaks exact ties)."""
    return [
        r.item_id
        for r in sorted(ratings.values(), key=lambda r: (-r.mu, r.item_id))
    ]


# ---------------------------------------------------------------------------
# Display scores


@dataclass(frozen=True)
class ScoreStrategy:
    """How a Gaussian belief becomes a single display score."""

    kind: str = "minmax"  # raw_mu | conservative | minmax
    k: float = 3.0
    lo: float = 0.0
    hi: float = 100.0

    def __post_init__(self) -> None:
        if self.kind not in ("raw_mu", "conservative", "minmax"):
            raise RatingError(f"unknown score strategy {self.kind!r}")
        if self.kind == "minmax" and self.hi <= self.lo:
            raise RatingError("minmax needs hi > lo")

    @classmethod
    def raw_mu(cls) -> "ScoreStrategy":
        return cls(kind="raw_mu")

    @classmethod
    def conservative(cls, k: float = 3.0) -> "ScoreStrategy":
        return cls(kind="conservative", k=k)

    @classmethod
    def min_max(cls, lo: float = 0.0, hi: float = 100.0) -> "ScoreStrategy":
        return cls(kind="minmax", lo=lo, hi=hi)


def to_scores(
    ratings: Mapping[str, Rating],
    strategy: ScoreStrategy = ScoreStrategy(),
) -> dict[str, float]:
    """Map ratings to display scores under the chosen strategy."""
    if strategy.kind == "raw_mu":
        return {item_id: r.mu for item_id, r in ratings.items()}
    if strategy.kind == "conservative":
        return {item_id: r.mu - strategy.k * r.sigma for item_id, r in ratings.items()}

    if len(ratings) < 2:
        raise RatingError("minmax scaling needs at least 2 items")
    mus = [r.mu for r in ratings.values()]
    mu_min, mu_max = min(mus), max(mus)
    if mu_max == mu_min:
        raise RatingError("minmax scaling is undefined when all mu are equal")
    span = strategy.hi - strategy.lo
    return {
        item_id: strategy.lo + span * (r.mu - mu_min) / (mu_max - mu_min)
        for item_id, r in ratings.items()
    }


# ---------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True)
class GroupStat:
    group: str
    mean: float
    count: int
    min: float
    max: float


OVERALL_GROUP = "ALL"


def aggregate(
    scores: Mapping[str, float],
    items: Iterable[Item],
    group_by: str = "county",
) -> list[GroupStat]:
    """Per-group score statistics plus a global row (group name ``ALL``)."""
    if group_by not in ("county", "province"):
        raise RatingError(f"group_by must be 'county' or 'province', got {group_by!r}")
    by_id = {item.id: item for item in items}
    buckets: dict[str, list[float]] = {}
    for item_id, score in scores.items():
        item = by_id.get(item_id)
        if item is None:
            raise RatingError(f"scored item {item_id!r} is not in the item table")
        group = getattr(item, group_by)
        if not group:
            raise RatingError(f"item {item_id!r} has no {group_by}")
        buckets.setdefault(group, []).append(score)
    if not buckets:
        raise RatingError("no scores to aggregate")

    stats = [
        GroupStat(
            group=group,
            mean=sum(values) / len(values),
            count=len(values),
            min=min(values),
            max=max(values),
        )
        for group, values in sorted(buckets.items())
    ]
    everything = list(scores.values())
    stats.append(
        GroupStat(
            group=OVERALL_GROUP,
            mean=sum(everything) / len(everything),
            count=len(everything),
            min=min(everything),
            max=max(everything),
        )
    )
    return stats
