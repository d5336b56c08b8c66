"""Pairwise livability judging.

Provides the judge abstraction used by the ranker: simulated noisy oracles
driven by hidden latent scores, weighted-criteria prompt construction for a
multimodal chat endpoint, verdict parsing, majority voting, and the remote
judge itself (two-stage: per-image description, then text-assisted pairwise
comparison over a side-by-side composite).
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import logging
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

from .composer import ComposeConfig, compose_to_png_bytes
from .corpus import Item

logger = logging.getLogger(__name__)


class JudgeError(Exception):
    """Base class for judging failures."""


class MissingLatentError(JudgeError):
    """A simulated judge was given an item without a latent score."""


class UnparseableVerdictError(JudgeError):
    """No final A/B verdict could be extracted from the model response."""


class RemoteJudgeError(JudgeError):
    """Transport-level failure talking to the remote endpoint."""


class UndecidedError(JudgeError):
    """Majority voting exhausted its budget without reaching agreement."""


class Winner(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    def flipped(self) -> "Winner":
        return Winner.RIGHT if self is Winner.LEFT else Winner.LEFT


class JudgeKind(enum.Enum):
    SIMULATED = "simulated"
    REMOTE = "remote"
    REPLAY = "replay"


@dataclass(frozen=True)
class Outcome:
    """One forced-choice verdict on a (left, right) pair."""

    winner: Winner
    raw_text: str | None = None
    judge_kind: JudgeKind = JudgeKind.SIMULATED

    def to_json(self) -> dict:
        return {
            "winner": self.winner.value,
            "raw_text": self.raw_text,
            "judge_kind": self.judge_kind.value,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Outcome":
        return cls(
            winner=Winner(data["winner"]),
            raw_text=data.get("raw_text"),
            judge_kind=JudgeKind(data.get("judge_kind", "simulated")),
        )


# ---------------------------------------------------------------------------
# Evaluation criteria


@dataclass(frozen=True)
class Criterion:
    description: str
    weight: int  # percent


# Default weighted rubric: four major dimensions at 20% and two minor at 10%.
DEFAULT_CRITERIA: tuple[Criterion, ...] = (
    Criterion(
        "Housing stock: the village is dominated by row houses of two or more "
        "stories at moderate heights, with clean, uniform facades, a harmonious "
        "color scheme, and modern architectural styling and decoration.",
        20,
    ),
    Criterion(
        "Natural setting: development follows the natural topography, with "
        "buildings placed along terrain contours, clear streams and ponds with "
        "visible riparian vegetation, and large patches of flourishing farmland "
        "blending into the surrounding greenery.",
        20,
    ),
    Criterion(
        "Roads: village roads are clean, undamaged and vividly surfaced with no "
        "loose soil, traffic signs are clearly visible and legible, main routes "
        "are passable by vehicles, and lanes connecting residential areas are "
        "hardened.",
        20,
    ),
    Criterion(
        "Building condition: a higher share of newly constructed dwellings with "
        "undamaged wall surfaces indicates better quality; villages of mostly "
        "older structures are not automatically inferior and are judged by the "
        "degree of wear the buildings show.",
        20,
    ),
    Criterion(
        "Upkeep and aesthetics: well-maintained architecture with freshly "
        "painted walls and tastefully decorated facades.",
        10,
    ),
    Criterion(
        "Layout: thoughtfully organized building arrangement with clear "
        "structural patterns and orderly orientations.",
        10,
    ),
)


@dataclass(frozen=True)
class CriteriaConfig:
    """Ordered, weighted evaluation criteria used to build prompts."""

    criteria: tuple[Criterion, ...] = DEFAULT_CRITERIA
    language: str = "en"

    def __post_init__(self) -> None:
        if not self.criteria:
            raise JudgeError("criteria list must not be empty")
        total = sum(c.weight for c in self.criteria)
        if total != 100:
            raise JudgeError(f"criterion weights must sum to 100, got {total}")

    @classmethod
    def from_json_file(cls, path: str | Path) -> "CriteriaConfig":
        """Load a criteria override file: {"language": ..., "criteria": [{"description", "weight"}...]}."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        criteria = tuple(
            Criterion(description=c["description"], weight=int(c["weight"]))
            for c in data["criteria"]
        )
        return cls(criteria=criteria, language=data.get("language", "en"))


# ---------------------------------------------------------------------------
# Simulated judges


class NoiseKind(enum.Enum):
    DETERMINISTIC = "deterministic"
    BRADLEY_TERRY = "bradley-terry"
    THURSTONE = "thurstone"


@dataclass(frozen=True)
class NoiseModel:
    """How a simulated judge corrupts the latent ordering.

    ``deterministic`` always picks the higher latent score (ties broken by
    lexicographically smaller id, and reported).  ``bradley-terry`` picks the
    left item with probability 1/(1+exp(-sensitivity*(sa-sb))).  ``thurstone``
    adds independent Gaussian noise of std 1/sensitivity to each latent and
    compares.  Higher sensitivity means a sharper, more reliable judge.
    """

    kind: NoiseKind = NoiseKind.BRADLEY_TERRY
    sensitivity: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind is not NoiseKind.DETERMINISTIC and self.sensitivity <= 0:
            raise JudgeError("sensitivity must be positive")


def _call_rng(seed: int, id_a: str, id_b: str, call_index: int) -> random.Random:
    """Stable per-call RNG derived from (seed, unordered pair, call index)."""
    lo, hi = sorted((id_a, id_b))
    key = f"{seed}|{lo}|{hi}|{call_index}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def simulated_compare(
    item_a: Item,
    item_b: Item,
    noise: NoiseModel,
    call_index: int = 0,
) -> Outcome:
    """Compare two items using their latent scores under the noise model.

    ``item_a`` sits on the left.  Reproducible: the randomness is a pure
    function of (rng_seed, pair ids, call_index), so concurrent callers and
    re-runs see identical verdicts.
    """
    sa, sb = item_a.latent_score, item_b.latent_score
    if sa is None or sb is None:
        missing = item_a.id if sa is None else item_b.id
        raise MissingLatentError(f"item {missing!r} has no latent score")

    if noise.kind is NoiseKind.DETERMINISTIC:
        if sa == sb:
            logger.warning(
                "latent tie between %r and %r; breaking by id order",
                item_a.id,
                item_b.id,
            )
            winner = Winner.LEFT if item_a.id < item_b.id else Winner.RIGHT
        else:
            winner = Winner.LEFT if sa > sb else Winner.RIGHT
        return Outcome(winner=winner, judge_kind=JudgeKind.SIMULATED)

    rng = _call_rng(noise.rng_seed, item_a.id, item_b.id, call_index)
    # keep the random stream independent of which item is on which side
    flip = item_a.id > item_b.id
    lo_score, hi_score = (sb, sa) if flip else (sa, sb)

    if noise.kind is NoiseKind.BRADLEY_TERRY:
        p_lo = 1.0 / (1.0 + math.exp(-noise.sensitivity * (lo_score - hi_score)))
        lo_wins = rng.random() < p_lo
    else:  # Thurstone
        std = 1.0 / noise.sensitivity
        lo_wins = lo_score + rng.gauss(0.0, std) > hi_score + rng.gauss(0.0, std)

    a_wins = lo_wins ^ flip
    return Outcome(
        winner=Winner.LEFT if a_wins else Winner.RIGHT,
        judge_kind=JudgeKind.SIMULATED,
    )


class SimulatedJudge:
    """Stateful simulated judge tracking per-pair call indices.

    Safe for concurrent use: each call's randomness depends only on the
    (seed, pair, how many times this pair was asked before), never on global
    call order.
    """

    def __init__(self, noise: NoiseModel):
        self.noise = noise
        self._counts: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def compare(self, left: Item, right: Item) -> Outcome:
        key = tuple(sorted((left.id, right.id)))
        with self._lock:
            index = self._counts.get(key, 0)
            self._counts[key] = index + 1
        return simulated_compare(left, right, self.noise, call_index=index)


# ---------------------------------------------------------------------------
# Prompts and verdict parsing

_VERDICT_INSTRUCTION = (
    'End your response with a single line of exactly "Final verdict: A" if '
    'Village A is more livable, or "Final verdict: B" if Village B is more '
    "livable. You must choose one; a tie is not allowed."
)


def _criteria_block(cfg: CriteriaConfig) -> str:
    lines = [
        f"{i}. ({c.weight}% weight) {c.description}"
        for i, c in enumerate(cfg.criteria, start=1)
    ]
    return "\n".join(lines)


def build_describe_prompt(cfg: CriteriaConfig = CriteriaConfig()) -> str:
    """Instruction for describing a single village image, criterion by criterion."""
    return (
        "You are shown one aerial image of a rural village. Write a factual, "
        "concrete description of what is visible, covering each of the "
        "following aspects of livability. Do not score or rank; describe only "
        "what can be seen.\n\n"
        f"{_criteria_block(cfg)}\n\n"
        "Answer with one short paragraph per numbered aspect."
    )


def build_compare_prompt(
    desc_a: str,
    desc_b: str,
    cfg: CriteriaConfig = CriteriaConfig(),
) -> str:
    """Instruction for the pairwise comparison over a side-by-side composite.

    The left image is labeled Village A and the right Village B; the provided
    per-image descriptions anchor the labels so the model cannot confuse
    sides.  The weighted criteria are laid out as explicit reasoning steps
    before a forced A/B verdict.
    """
    if not desc_a.strip() or not desc_b.strip():
        raise JudgeError("both village descriptions must be non-empty")
    return (
        "You are shown one composite image containing two aerial photographs "
        "of rural villages placed side by side with a wide blank gap between "
        "them.\n\n"
        f"Village A is the image on the LEFT. Description of Village A: {desc_a}\n"
        f"Village B is the image on the RIGHT. Description of Village B: {desc_b}\n\n"
        "Decide which village is more livable. Reason step by step through "
        "the following weighted criteria, comparing Village A and Village B "
        "on each before moving to the next:\n\n"
        f"{_criteria_block(cfg)}\n\n"
        "Weigh the per-criterion comparisons by the percentages given.\n"
        f"{_VERDICT_INSTRUCTION}"
    )


def parse_verdict(model_text: str) -> Outcome:
    """Extract the final A/B verdict from a model response.

    Takes the last standalone ``A`` or ``B`` token, which tolerates
    surrounding prose as long as the response ends with the instructed
    verdict line.
    """
    matches = re.findall(r"(?<![A-Za-z0-9])([AB])(?![A-Za-z0-9])", model_text)
    if not matches:
        raise UnparseableVerdictError(
            f"no A/B verdict found in response: {model_text[:120]!r}"
        )
    winner = Winner.LEFT if matches[-1] == "A" else Winner.RIGHT
    return Outcome(winner=winner, raw_text=model_text, judge_kind=JudgeKind.REMOTE)


# ---------------------------------------------------------------------------
# Majority voting


@dataclass(frozen=True)
class VotePolicy:
    """Repeat each adjudication until enough identical verdicts accumulate."""

    min_votes: int = 2
    max_votes: int = 3
    required_agreement: int = 2

    def __post_init__(self) -> None:
        if self.min_votes < 1 or self.min_votes > self.max_votes:
            raise JudgeError("need 1 <= min_votes <= max_votes")
        if self.required_agreement > self.max_votes:
            raise JudgeError("required_agreement cannot exceed max_votes")


def vote(
    item_a: Item,
    item_b: Item,
    base_judge,
    policy: VotePolicy = VotePolicy(),
) -> tuple[Outcome, list[Outcome]]:
    """Adjudicate one pair by majority vote over repeated base-judge calls.

    Runs ``min_votes`` calls, then keeps calling (up to ``max_votes``) until
    one side has ``required_agreement`` identical verdicts.  Unparseable
    responses consume a call without contributing a vote; if agreement is
    never reached, raises :class:`UndecidedError`.
    """
    votes: list[Outcome] = []
    tally: dict[Winner, int] = {Winner.LEFT: 0, Winner.RIGHT: 0}
    calls = 0

    def agreed() -> Outcome | None:
        for side, count in tally.items():
            if count >= policy.required_agreement:
                for v in votes:
                    if v.winner is side:
                        return v
        return None

    while calls < policy.max_votes:
        winner = agreed()
        if winner is not None and calls >= policy.min_votes:
            return winner, votes
        calls += 1
        try:
            outcome = base_judge.compare(item_a, item_b)
        except UnparseableVerdictError as exc:
            logger.warning(
                "vote %d on (%s, %s) unparseable: %s",
                calls,
                item_a.id,
                item_b.id,
                exc,
            )
            continue
        votes.append(outcome)
        tally[outcome.winner] += 1

    winner = agreed()
    if winner is not None:
        return winner, votes
    raise UndecidedError(
        f"no {policy.required_agreement}-way agreement on ({item_a.id}, "
        f"{item_b.id}) within {policy.max_votes} votes"
    )


# ---------------------------------------------------------------------------
# Remote judge


@dataclass(frozen=True)
class RemoteJudgeConfig:
    """Connection and sampling settings for the chat-completion endpoint."""

    endpoint_url: str
    model_name: str
    temperature: float = 0.2
    max_tokens: int = 1024
    timeout: float = 60.0
    max_retries: int = 3
    rate_limit: float | None = None  # requests per second
    retry_backoff: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise JudgeError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens < 1:
            raise JudgeError("max_tokens must be >= 1")


class ChatEndpoint:
    """Minimal chat-completion HTTP client with retries and rate limiting.

    Speaks the common JSON shape: ``{model, temperature, max_tokens,
    messages}`` where a message's content may mix text and image parts
    (base64 data URLs or plain URLs).
    """

    def __init__(self, cfg: RemoteJudgeConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self._session = session or requests.Session()
        self._lock = threading.Lock()
        self._next_allowed = 0.0

    def _throttle(self) -> None:
        if self.cfg.rate_limit is None:
            return
        interval = 1.0 / self.cfg.rate_limit
        with self._lock:
            now = time.monotonic()
            wait = self._next_allowed - now
            self._next_allowed = max(now, self._next_allowed) + interval
        if wait > 0:
            time.sleep(wait)

    def complete(self, prompt: str, image: bytes | str | None = None) -> str:
        """POST one user message (text plus optional image); return the reply text."""
        content: list[dict] = [{"type": "text", "text": prompt}]
        if isinstance(image, bytes):
            encoded = base64.b64encode(image).decode("ascii")
            url = f"data:image/png;base64,{encoded}"
            content.append({"type": "image_url", "image_url": {"url": url}})
        elif isinstance(image, str):
            content.append({"type": "image_url", "image_url": {"url": image}})
        payload = {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "messages": [{"role": "user", "content": content}],
        }

        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.retry_backoff * 2 ** (attempt - 1))
            self._throttle()
            try:
                response = self._session.post(
                    self.cfg.endpoint_url, json=payload, timeout=self.cfg.timeout
                )
                response.raise_for_status()
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                logger.warning(
                    "endpoint call failed (attempt %d/%d): %s",
                    attempt + 1,
                    self.cfg.max_retries + 1,
                    exc,
                )
        raise RemoteJudgeError(
            f"endpoint failed after {self.cfg.max_retries + 1} attempts: {last_error}"
        )


def remote_compare(
    item_a: Item,
    item_b: Item,
    desc_a: str,
    desc_b: str,
    cfg: RemoteJudgeConfig,
    crit: CriteriaConfig = CriteriaConfig(),
    *,
    compose_cfg: ComposeConfig = ComposeConfig(),
    endpoint: ChatEndpoint | None = None,
) -> Outcome:
    """Adjudicate one pair via the remote endpoint; left item is Village A.

    Builds the side-by-side composite, sends it with the comparison prompt,
    and parses the forced verdict.  Unparseable replies are retried up to
    ``cfg.max_retries`` times before surfacing.
    """
    endpoint = endpoint or ChatEndpoint(cfg)
    composite = compose_to_png_bytes(item_a.image_ref, item_b.image_ref, compose_cfg)
    prompt = build_compare_prompt(desc_a, desc_b, crit)

    last_error: UnparseableVerdictError | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            text = endpoint.complete(prompt, composite)
        except RemoteJudgeError as exc:
            raise RemoteJudgeError(
                f"pair ({item_a.id}, {item_b.id}): {exc}"
            ) from exc
        try:
            return parse_verdict(text)
        except UnparseableVerdictError as exc:
            last_error = exc
            logger.warning(
                "unparseable verdict for pair (%s, %s), retry %d/%d",
                item_a.id,
                item_b.id,
                attempt + 1,
                cfg.max_retries,
            )
    raise UnparseableVerdictError(
        f"pair ({item_a.id}, {item_b.id}): {last_error}"
    )


def describe_item(
    item: Item,
    cfg: RemoteJudgeConfig,
    crit: CriteriaConfig = CriteriaConfig(),
    *,
    endpoint: ChatEndpoint | None = None,
) -> str:
    """Generate the single-image livability description used to label sides."""
    endpoint = endpoint or ChatEndpoint(cfg)
    ref = item.image_ref
    image: bytes | str
    if ref.startswith(("http://", "https://")):
        image = ref
    else:
        image = Path(ref).read_bytes()
    return endpoint.complete(build_describe_prompt(crit), image)


class DescriptionCache:
    """JSONL store of ``{"item_id": ..., "description": ...}`` records.

    Descriptions are generated once per item and reused across every
    comparison the item takes part in.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._cache: dict[str, str] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        record = json.loads(line)
                        self._cache[record["item_id"]] = record["description"]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._cache

    def get(self, item_id: str) -> str | None:
        return self._cache.get(item_id)

    def put(self, item_id: str, description: str) -> None:
        self._cache[item_id] = description
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {"item_id": item_id, "description": description},
                    ensure_ascii=False,
                )
                + "\n"
            )
        logger.debug("cached description for %s", item_id)

    def __len__(self) -> int:
        return len(self._cache)


class RemoteJudge:
    """Pairwise judge backed by a remote multimodal chat endpoint.

    Composes the two item images side by side, labels them Village A/B with
    their cached descriptions, and asks for a forced verdict.  Missing
    descriptions are generated on demand and persisted.
    """

    def __init__(
        self,
        cfg: RemoteJudgeConfig,
        descriptions: DescriptionCache,
        crit: CriteriaConfig = CriteriaConfig(),
        compose_cfg: ComposeConfig = ComposeConfig(),
        *,
        endpoint: ChatEndpoint | None = None,
    ):
        self.cfg = cfg
        self.crit = crit
        self.compose_cfg = compose_cfg
        self.descriptions = descriptions
        self.endpoint = endpoint or ChatEndpoint(cfg)
        self._desc_lock = threading.Lock()

    def description_for(self, item: Item) -> str:
        cached = self.descriptions.get(item.id)
        if cached is not None:
            return cached
        text = describe_item(item, self.cfg, self.crit, endpoint=self.endpoint)
        with self._desc_lock:
            again = self.descriptions.get(item.id)
            if again is not None:
                return again
            self.descriptions.put(item.id, text)
        return text

    def compare(self, left: Item, right: Item) -> Outcome:
        return remote_compare(
            left,
            right,
            self.description_for(left),
            self.description_for(right),
            self.cfg,
            self.crit,
            compose_cfg=self.compose_cfg,
            endpoint=self.endpoint,
        )
