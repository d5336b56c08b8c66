"""Interpolation-insertion ranking over a pairwise judge.

New items are placed into an existing best-first ranking by bisection:
each comparison against the element at the middle of the open bracket
halves the set of candidate positions, so an insertion into a ranking of
n items needs at most ceil(log2(n+1)) <= ceil(log2 n) + 1 distinct pair
adjudications.  Outcomes are memoized per insertion, and the two
comparisons that end up bracketing the chosen slot double as the
neighbor confirmations of the final position (emitted as cached
records).  A top-up pass afterwards tops every item's appearance count
up to a minimum by pairing the least-compared item with its nearest
not-yet-played rank neighbor.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .corpus import Cohort, Item
from .judge import JudgeKind, Outcome, VotePolicy, Winner, vote

logger = logging.getLogger(__name__)


class RankerError(ValueError):
    """Raised for invalid ranking inputs or replay mismatches."""


class Phase(enum.Enum):
    SEED = "seed"
    INSERT = "insert"
    NEIGHBOR_CHECK = "neighbor_check"
    TOP_UP = "top_up"


@dataclass(frozen=True)
class ComparisonRecord:
    """One adjudicated pair in the append-only comparison log.

    ``cached`` records re-state an already-adjudicated outcome (the
    neighbor confirmations of an insertion slot) and carry no votes.
    """

    seq: int
    left_id: str
    right_id: str
    votes: tuple[Outcome, ...]
    final_winner: str
    phase: Phase
    cached: bool = False

    def __post_init__(self) -> None:
        if self.final_winner not in (self.left_id, self.right_id):
            raise RankerError(
                f"final_winner {self.final_winner!r} is neither side of "
                f"({self.left_id!r}, {self.right_id!r})"
            )

    @property
    def loser(self) -> str:
        return self.right_id if self.final_winner == self.left_id else self.left_id

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "left_id": self.left_id,
            "right_id": self.right_id,
            "votes": [v.to_json() for v in self.votes],
            "final_winner": self.final_winner,
            "phase": self.phase.value,
            "cached": self.cached,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ComparisonRecord":
        return cls(
            seq=int(data["seq"]),
            left_id=data["left_id"],
            right_id=data["right_id"],
            votes=tuple(Outcome.from_json(v) for v in data["votes"]),
            final_winner=data["final_winner"],
            phase=Phase(data["phase"]),
            cached=bool(data.get("cached", False)),
        )


@dataclass
class BudgetLedger:
    """Comparison accounting: per-item appearances and call totals."""

    appearances: dict[str, int]
    total_adjudications: int
    total_base_calls: int

    @classmethod
    def from_records(
        cls,
        records: Iterable[ComparisonRecord],
        item_ids: Iterable[str] = (),
    ) -> "BudgetLedger":
        appearances = {item_id: 0 for item_id in item_ids}
        adjudications = 0
        base_calls = 0
        for record in records:
            if record.cached:
                continue
            adjudications += 1
            base_calls += len(record.votes)
            for side in (record.left_id, record.right_id):
                appearances[side] = appearances.get(side, 0) + 1
        return cls(
            appearances=appearances,
            total_adjudications=adjudications,
            total_base_calls=base_calls,
        )

    def min_appearances(self) -> int:
        return min(self.appearances.values()) if self.appearances else 0


class RecordSink(Protocol):
    def append(self, record: ComparisonRecord) -> None: ...


class JsonlLogWriter:
    """Append-only JSONL writer, flushed per record so aborts keep the log."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = self.path.open("a", encoding="utf-8")

    def append(self, record: ComparisonRecord) -> None:
        line = json.dumps(record.to_json(), ensure_ascii=False)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_comparison_log(path: str | Path) -> list[ComparisonRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(ComparisonRecord.from_json(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise RankerError(f"{path}: line {lineno}: bad record: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# Adjudicators: one final verdict per pair


@dataclass(frozen=True)
class Adjudication:
    left_id: str
    right_id: str
    votes: tuple[Outcome, ...]
    winner_id: str


class Adjudicator(Protocol):
    def adjudicate(self, a: Item, b: Item) -> Adjudication: ...


class VotingAdjudicator:
    """Randomizes side assignment, then majority-votes a base judge.

    Side assignment is drawn from a dedicated seeded stream so that, for a
    fixed seed, reruns place the same item of each pair on the left.
    """

    def __init__(self, judge, policy: VotePolicy = VotePolicy(), rng_seed: int = 0):
        self.judge = judge
        self.policy = policy
        self._rng = random.Random(("side-assignment", rng_seed).__repr__())

    def adjudicate(self, a: Item, b: Item) -> Adjudication:
        if a.id == b.id:
            raise RankerError(f"cannot compare item {a.id!r} to itself")
        left, right = (b, a) if self._rng.random() < 0.5 else (a, b)
        final, votes = vote(left, right, self.judge, self.policy)
        winner_id = left.id if final.winner is Winner.LEFT else right.id
        return Adjudication(
            left_id=left.id,
            right_id=right.id,
            votes=tuple(votes),
            winner_id=winner_id,
        )


class ReplayAdjudicator:
    """Answers adjudications from a stored comparison log, in order per pair.

    Makes the full pipeline runnable offline: every (pair -> winner) is
    looked up instead of judged, so a rerun reproduces the original ranking
    bit for bit.
    """

    def __init__(self, records: Iterable[ComparisonRecord]):
        self._queues: dict[frozenset, list[ComparisonRecord]] = {}
        for record in records:
            if record.cached:
                continue
            key = frozenset((record.left_id, record.right_id))
            self._queues.setdefault(key, []).append(record)
        self._positions: dict[frozenset, int] = {}

    def adjudicate(self, a: Item, b: Item) -> Adjudication:
        key = frozenset((a.id, b.id))
        queue = self._queues.get(key, [])
        position = self._positions.get(key, 0)
        if position >= len(queue):
            raise RankerError(
                f"replay log has no (further) adjudication for pair "
                f"({a.id!r}, {b.id!r})"
            )
        self._positions[key] = position + 1
        record = queue[position]
        return Adjudication(
            left_id=record.left_id,
            right_id=record.right_id,
            votes=record.votes,
            winner_id=record.final_winner,
        )


# ---------------------------------------------------------------------------
# Core insertion


@dataclass
class RankerConfig:
    """Knobs for a whole-cohort ranking run."""

    seed_size: int = 10
    explicit_seed_order: tuple[str, ...] | None = None
    shuffle_insertions: bool = False
    rng_seed: int = 0
    top_up: bool = True
    top_up_threshold: int = 20


@dataclass
class RankResult:
    ranking: tuple[str, ...]
    records: list[ComparisonRecord]
    ledger: BudgetLedger


def comparison_bound(n: int) -> int:
    """Stated per-insertion budget for a ranking of n items."""
    return (0 if n <= 1 else math.ceil(math.log2(n))) + 1


class _Session:
    """Mutable state shared by the seeding/insertion/top-up stages."""

    def __init__(
        self,
        adjudicator: Adjudicator,
        sink: RecordSink | None = None,
        seq_start: int = 0,
    ):
        self.adjudicator = adjudicator
        self.sink = sink
        self.records: list[ComparisonRecord] = []
        self.played: set[frozenset] = set()
        self.appearances: dict[str, int] = {}
        self._seq = seq_start

    def _emit(self, record: ComparisonRecord) -> None:
        self.records.append(record)
        if self.sink is not None:
            self.sink.append(record)

    def adjudicate(self, a: Item, b: Item, phase: Phase) -> str:
        result = self.adjudicator.adjudicate(a, b)
        record = ComparisonRecord(
            seq=self._seq,
            left_id=result.left_id,
            right_id=result.right_id,
            votes=result.votes,
            final_winner=result.winner_id,
            phase=phase,
            cached=False,
        )
        self._seq += 1
        self._emit(record)
        self.played.add(frozenset((a.id, b.id)))
        for side in (a.id, b.id):
            self.appearances[side] = self.appearances.get(side, 0) + 1
        return result.winner_id

    def emit_cached(self, item: Item, opponent: Item, winner_id: str) -> None:
        record = ComparisonRecord(
            seq=self._seq,
            left_id=item.id,
            right_id=opponent.id,
            votes=(),
            final_winner=winner_id,
            phase=Phase.NEIGHBOR_CHECK,
            cached=True,
        )
        self._seq += 1
        self._emit(record)

    def insert(self, ranking: list[Item], item: Item, phase: Phase) -> list[Item]:
        """Bisect the new item into the best-first ranking.

        Comparison outcomes are memoized across the insertion; the final
        slot's upper/lower neighbor outcomes are always already known and
        are re-emitted as cached neighbor-check records.
        """
        if any(existing.id == item.id for existing in ranking):
            raise RankerError(f"item {item.id!r} is already ranked")
        if not ranking:
            raise RankerError("cannot insert into an empty ranking")

        memo: dict[str, str] = {}
        n = len(ranking)
        budget = comparison_bound(n)
        fresh = 0
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            opponent = ranking[mid]
            winner_id = memo.get(opponent.id)
            if winner_id is None:
                winner_id = self.adjudicate(item, opponent, phase)
                memo[opponent.id] = winner_id
                fresh += 1
            if winner_id == item.id:
                hi = mid
            else:
                lo = mid + 1
        position = lo
        assert fresh <= budget, f"insertion used {fresh} > {budget} adjudications"

        # confirm against both neighbors of the slot; the bracket-setting
        # comparisons guarantee these are memo hits
        for neighbor in (
            ranking[position - 1] if position > 0 else None,
            ranking[position] if position < n else None,
        ):
            if neighbor is not None:
                assert neighbor.id in memo, "slot neighbor was never adjudicated"
                self.emit_cached(item, neighbor, memo[neighbor.id])

        updated = list(ranking)
        updated.insert(position, item)
        return updated


def binary_insert(
    ranking: Sequence[Item],
    item: Item,
    adjudicator: Adjudicator,
    *,
    phase: Phase = Phase.INSERT,
    sink: RecordSink | None = None,
    seq_start: int = 0,
) -> tuple[list[Item], list[ComparisonRecord]]:
    """Insert one item into a best-first ranking; returns (ranking, records)."""
    session = _Session(adjudicator, sink=sink, seq_start=seq_start)
    updated = session.insert(list(ranking), item, phase)
    return updated, session.records


def seed_ranking(
    first_items: Sequence[Item],
    adjudicator: Adjudicator,
    *,
    explicit_order: Sequence[str] | None = None,
    sink: RecordSink | None = None,
    seq_start: int = 0,
) -> tuple[list[Item], list[ComparisonRecord]]:
    """Build the initial ranking for the first few items.

    With an explicit order the ranking is taken verbatim (no judge calls);
    otherwise items are bisected in one by one starting from a singleton.
    """
    if not first_items:
        raise RankerError("seed requires at least one item")
    by_id = {item.id: item for item in first_items}
    if explicit_order is not None:
        unknown = [i for i in explicit_order if i not in by_id]
        if unknown or len(explicit_order) != len(first_items):
            raise RankerError(
                f"explicit seed order must be a permutation of the seed items "
                f"(unknown: {unknown})"
            )
        return [by_id[i] for i in explicit_order], []

    session = _Session(adjudicator, sink=sink, seq_start=seq_start)
    ranking = [first_items[0]]
    for item in first_items[1:]:
        ranking = session.insert(ranking, item, Phase.SEED)
    return ranking, session.records


def rank_cohort(
    cohort: Cohort,
    adjudicator: Adjudicator,
    config: RankerConfig = RankerConfig(),
    *,
    sink: RecordSink | None = None,
    progress: Callable[[str], None] | None = None,
) -> RankResult:
    """Rank a whole cohort: seed, insert the rest, then top up budgets.

    Items enter in manifest order (optionally shuffled by ``rng_seed``).
    The top-up pass repeatedly pairs the least-compared item with its
    nearest rank neighbor it has not yet played, until every item has at
    least ``top_up_threshold`` appearances or has played every neighbor.
    """
    if len(cohort) < 2:
        raise RankerError(f"ranking needs at least 2 items, got {len(cohort)}")

    order = list(cohort.items)
    if config.shuffle_insertions:
        random.Random(("insertion-order", config.rng_seed).__repr__()).shuffle(order)

    session = _Session(adjudicator, sink=sink)
    for item in order:
        session.appearances.setdefault(item.id, 0)

    seed_count = min(config.seed_size, len(order))
    seed_items = order[:seed_count]
    if config.explicit_seed_order is not None:
        unknown = [i for i in config.explicit_seed_order if i not in {it.id for it in seed_items}]
        if unknown or len(config.explicit_seed_order) != seed_count:
            raise RankerError(
                f"explicit seed order must cover exactly the first "
                f"{seed_count} items (unknown: {unknown})"
            )
        by_id = {item.id: item for item in seed_items}
        ranking = [by_id[i] for i in config.explicit_seed_order]
    else:
        ranking = [seed_items[0]]
        for item in seed_items[1:]:
            ranking = session.insert(ranking, item, Phase.SEED)
    if progress:
        progress(f"seeded {len(ranking)}/{len(order)} items")

    for index, item in enumerate(order[seed_count:], start=seed_count + 1):
        ranking = session.insert(ranking, item, Phase.INSERT)
        if progress:
            progress(f"inserted {index}/{len(order)} id={item.id}")

    if config.top_up:
        _top_up(session, ranking, config.top_up_threshold, progress)

    ranking_ids = tuple(item.id for item in ranking)
    if sorted(ranking_ids) != sorted(cohort.ids()):
        raise RankerError("ranking is not a permutation of the cohort")
    ledger = BudgetLedger.from_records(session.records, cohort.ids())
    return RankResult(ranking=ranking_ids, records=session.records, ledger=ledger)


def _top_up(
    session: _Session,
    ranking: list[Item],
    threshold: int,
    progress: Callable[[str], None] | None,
) -> None:
    """Drive every item's appearance count up to the threshold if possible."""
    position = {item.id: i for i, item in enumerate(ranking)}
    exhausted: set[str] = set()
    done = 0
    while True:
        candidates = [
            item
            for item in ranking
            if session.appearances[item.id] < threshold and item.id not in exhausted
        ]
        if not candidates:
            break
        target = min(
            candidates, key=lambda it: (session.appearances[it.id], position[it.id])
        )
        opponent = _nearest_unplayed(session, ranking, position[target.id])
        if opponent is None:
            exhausted.add(target.id)
            continue
        session.adjudicate(target, opponent, Phase.TOP_UP)
        done += 1
        if progress and done % 500 == 0:
            progress(f"top-up adjudications: {done}")
    if progress and done:
        progress(f"top-up complete after {done} adjudications")


def _nearest_unplayed(
    session: _Session, ranking: list[Item], pos: int
) -> Item | None:
    item = ranking[pos]
    n = len(ranking)
    for distance in range(1, n):
        for neighbor_pos in (pos - distance, pos + distance):
            if 0 <= neighbor_pos < n:
                other = ranking[neighbor_pos]
                if frozenset((item.id, other.id)) not in session.played:
                    return other
    return None


# ---------------------------------------------------------------------------
# Output helpers


def write_ranking_csv(ranking: Sequence[str], path: str | Path) -> None:
    lines = ["rank,item_id"]
    lines += [f"{i},{item_id}" for i, item_id in enumerate(ranking, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ranking_csv(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "rank,item_id":
        raise RankerError(f"{path}: expected header 'rank,item_id'")
    ranking = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            _rank, item_id = line.split(",", 1)
        except ValueError:
            raise RankerError(f"{path}: line {lineno}: malformed row {line!r}") from None
        ranking.append(item_id.strip())
    return ranking


def write_ledger_csv(ledger: BudgetLedger, path: str | Path) -> None:
    lines = ["item_id,appearances"]
    lines += [f"{item_id},{count}" for item_id, count in sorted(ledger.appearances.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
