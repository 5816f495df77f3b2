"""Hierarchical zero-shot classification over a pluggable completion client.

Three rounds of prompting narrow the taxonomy: families are ranked first,
the genera under the accepted families next, then the species under the
accepted genera. Responses are validated by normalized edit distance
against the candidate list and rejected when fewer than half the items
match; rejected rounds are retried and, once retries are exhausted, the
most frequent training species are returned flagged as a fallback. Every
response is priced into a usage ledger.

All protocol logic runs against an abstract client, so the whole flow is
testable offline with fixture transcripts; an OpenRouter-style HTTP
transport is provided for live runs.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import LabelSpace, ObservationRecord, TaxonomyTree
from .errors import (
    ExhaustedRetries,
    IoFailure,
    RejectedResponse,
    TransportFailure,
)

SIMILARITY_THRESHOLD = 0.9

# per-million-token prices (input, output) in USD
DEFAULT_RATES = {
    "google/gemini-2.0-flash-001": (0.10, 0.40),
    "openai/gpt-4.1-mini-2025-04-14": (0.40, 1.60),
    "google/gemini-2.5-flash-preview-04-17": (0.15, 0.60),
    "mistralai/mistral-medium-3": (0.40, 2.00),
}

API_KEY_ENV = "OPENROUTER_API_KEY"

PROMPT_TEMPLATE = (
    "Accurately identify and assign the correct {class_type} label to each image of\n"
    "fungi, protozoa, or chromista utilizing all provided image views and associated\n"
    "metadata (location, substrate, season) to ensure precision, especially for\n"
    "fine-grained distinctions. Choose the top twenty most relevant labels ranked in\n"
    "order from the available class labels, a confidence on the Likert scale between\n"
    "1-5 on not-confident to confident and provide short reasoning (in under 50\n"
    "words) for your selection.\n"
)

RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {
        "candidates": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "confidence": {"type": "integer", "minimum": 1, "maximum": 5},
                    "reason": {"type": "string"},
                },
                "required": ["name", "confidence", "reason"],
                "additionalProperties": False,
            },
        }
    },
    "required": ["candidates"],
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# String matching
# ---------------------------------------------------------------------------

def _fold(s: str) -> str:
    return s.strip().casefold()

def levenshtein(a: str, b: str, cutoff: int | None = None) -> int:
    """Edit distance; with a cutoff, returns cutoff + 1 as soon as it is exceeded."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        if cutoff is not None and min(current) > cutoff:
            return cutoff + 1
        previous = current
    return previous[-1]


def normalized_similarity(a: str, b: str) -> float:
    """1 - edit_distance / max(len), after trimming and case folding.

    Two empty strings are identical (similarity 1.0).
    """
    a, b = _fold(a), _fold(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


# ---------------------------------------------------------------------------
# Protocol types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankedCandidate:
    name: str
    confidence: int
    reason: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("candidate name must be non-empty")
        if not 1 <= self.confidence <= 5:
            raise ValueError(f"confidence {self.confidence} outside the 1-5 Likert range")


@dataclass(frozen=True)
class RoundRequest:
    class_type: str  # family | genus | species
    candidate_list: tuple[str, ...]
    image_refs: tuple[str, ...]
    metadata_summary: str

    def __post_init__(self):
        if self.class_type not in ("family", "genus", "species"):
            raise ValueError(f"unknown class_type {self.class_type!r}")
        if not self.candidate_list:
            raise ValueError("candidate_list must be non-empty")
        if len(set(self.candidate_list)) != len(self.candidate_list):
            raise ValueError("candidate_list must be deduplicated")


@dataclass
class RoundResponse:
    candidates: tuple[RankedCandidate, ...]
    raw_text: str
    tokens_in: int
    tokens_out: int
    cost: float

    def __post_init__(self):
        if self.tokens_in < 0 or self.tokens_out < 0:
            raise ValueError("token counts must be nonnegative")


@dataclass
class ModelUsage:
    requests: int = 0
    tokens_in: int = 0
    tokens_out: int = 0
    cost: float = 0.0


@dataclass
class UsageLedger:
    per_model: dict[str, ModelUsage] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def total_tokens(self) -> int:
        return sum(u.tokens_in + u.tokens_out for u in self.per_model.values())

    def total_requests(self) -> int:
        return sum(u.requests for u in self.per_model.values())

    def total_cost(self) -> float:
        return sum(u.cost for u in self.per_model.values())


def record_usage(ledger: UsageLedger, resp: RoundResponse, model: str) -> UsageLedger:
    """Accumulate one response into the per-model totals (thread-safe)."""
    with ledger._lock:
        usage = ledger.per_model.setdefault(model, ModelUsage())
        usage.requests += 1
        usage.tokens_in += resp.tokens_in
        usage.tokens_out += resp.tokens_out
        usage.cost += resp.cost
    return ledger


def write_ledger_csv(ledger: UsageLedger, path: str | Path) -> None:
    """Per-model totals: tokens in millions, requests in thousands, cost in USD."""
    import csv

    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "total_tokens_m", "total_requests_k", "total_cost_usd"])
            for model in sorted(ledger.per_model):
                usage = ledger.per_model[model]
                writer.writerow(
                    [
                        model,
                        f"{(usage.tokens_in + usage.tokens_out) / 1e6:.2f}",
                        f"{usage.requests / 1e3:.2f}",
                        f"{usage.cost:.2f}",
                    ]
                )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class ObservationQuery:
    """One observation's image attachments and prompt metadata."""

    observation_id: str
    image_refs: tuple[str, ...]
    location: str | None = None
    substrate: str | None = None
    season: str | None = None

    def metadata_summary(self) -> str:
        return (
            f"location={self.location or 'unknown'}; "
            f"substrate={self.substrate or 'unknown'}; "
            f"season={self.season or 'unknown'}"
        )


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2


@dataclass(frozen=True)
class ProtocolConfig:
    top_n: int = 10  # species kept as the final result
    min_confidence: int = 2  # Likert cutoff for feeding an item forward
    max_accepted: int = 20  # cap on items feeding the next round
    runs: int = 1  # protocol repetitions aggregated by rank sum


@dataclass
class ZeroShotResult:
    observation_id: str
    species: list[str]
    fallback: bool
    accepted: dict[str, list[str]]
    responses: list[RoundResponse]


# ---------------------------------------------------------------------------
# Prompting and validation
# ---------------------------------------------------------------------------

def build_prompt(req: RoundRequest) -> str:
    """Instruction template plus the candidate list as a YAML sequence (byte-stable)."""
    listing = "\n".join(f"- {name}" for name in req.candidate_list)
    return (
        PROMPT_TEMPLATE.format(class_type=req.class_type)
        + "\nMetadata: "
        + req.metadata_summary
        + "\n\nCandidates:\n"
        + listing
        + "\n"
    )


def request_digest(prompt: str, image_refs: tuple[str, ...], attempt: int = 0) -> str:
    """Stable key for fixture transcripts: prompt, attachments, retry attempt."""
    h = hashlib.sha256()
    h.update(prompt.encode("utf-8"))
    h.update(b"\x00")
    h.update("\x1f".join(image_refs).encode("utf-8"))
    h.update(b"\x00")
    h.update(str(attempt).encode("ascii"))
    return h.hexdigest()


def parse_candidates(raw_text: str) -> tuple[RankedCandidate, ...]:
    """Parse a structured completion; malformed entries are dropped."""
    try:
        obj = json.loads(raw_text)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return ()
    items = obj.get("candidates") if isinstance(obj, dict) else obj
    if not isinstance(items, list):
        return ()
    out = []
    for item in items:
        if not isinstance(item, dict):
            continue
        name = item.get("name")
        confidence = item.get("confidence")
        if not isinstance(name, str) or not name.strip():
            continue
        if not isinstance(confidence, int) or not 1 <= confidence <= 5:
            continue
        out.append(RankedCandidate(name=name, confidence=confidence, reason=str(item.get("reason", ""))))
    return tuple(out)


def validate_response(resp: RoundResponse, candidates: list[str] | tuple[str, ...]) -> list[RankedCandidate]:
    """Match each returned name to its best candidate; reject below half valid.

    A returned item is valid when its best normalized similarity reaches
    0.9; accepted output carries the canonical candidate spelling, keeps
    rank order, and drops invalid entries. Raises RejectedResponse when
    fewer than ceil(total / 2) items are valid.
    """
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    returned = resp.candidates
    if not returned:
        raise RejectedResponse("response contained no parseable candidates")
    exact = {}
    for ref in candidates:
        exact.setdefault(_fold(ref), ref)
    matched: list[RankedCandidate] = []
    valid = 0
    for item in returned:
        folded = _fold(item.name)
        best = exact.get(folded)
        if best is None:
            best_sim = -1.0
            for ref in candidates:
                folded_ref = _fold(ref)
                longest = max(len(folded), len(folded_ref))
                if longest == 0:
                    continue
                # largest edit distance still reaching the threshold; the
                # epsilon guards against 0.1 * longest rounding just below
                # an integer
                budget = math.floor((1.0 - SIMILARITY_THRESHOLD) * longest + 1e-9)
                distance = levenshtein(folded, folded_ref, cutoff=budget)
                if distance > budget:
                    continue  # capped: the true distance cannot qualify
                sim = 1.0 - distance / longest
                if sim > best_sim:
                    best_sim, best = sim, ref
            if best is None or best_sim < SIMILARITY_THRESHOLD:
                continue
        valid += 1
        matched.append(RankedCandidate(name=best, confidence=item.confidence, reason=item.reason))
    if valid < math.ceil(len(returned) / 2):
        raise RejectedResponse(f"{valid} of {len(returned)} items matched the candidate list")
    return matched


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------

class CompletionClient:
    """Anything that can turn a round request into a RoundResponse."""

    model: str = "unknown"

    def complete(self, request: RoundRequest, prompt: str, attempt: int = 0) -> RoundResponse:
        raise NotImplementedError


def _cost_for(model: str, tokens_in: int, tokens_out: int, rates: dict | None) -> float:
    table = rates if rates is not None else DEFAULT_RATES
    rate_in, rate_out = table.get(model, (0.0, 0.0))
    return tokens_in / 1e6 * rate_in + tokens_out / 1e6 * rate_out


def _approx_tokens(text: str) -> int:
    # transcript replays have no tokenizer; 4 chars/token is the usual estimate
    return max(1, len(text) // 4)


class ScriptedClient(CompletionClient):
    """Calls a plain function for the raw completion text; for tests and demos."""

    def __init__(self, script, model: str = "scripted", rates: dict | None = None):
        self.script = script
        self.model = model
        self.rates = rates if rates is not None else {}

    def complete(self, request: RoundRequest, prompt: str, attempt: int = 0) -> RoundResponse:
        raw = self.script(request, attempt)
        tokens_in, tokens_out = _approx_tokens(prompt), _approx_tokens(raw)
        return RoundResponse(
            candidates=parse_candidates(raw),
            raw_text=raw,
            tokens_in=tokens_in,
            tokens_out=tokens_out,
            cost=_cost_for(self.model, tokens_in, tokens_out, self.rates),
        )


class FixtureTransport(CompletionClient):
    """Replays canned responses keyed by request digest (byte-exact)."""

    def __init__(self, path: str | Path, model: str = "fixture", rates: dict | None = None):
        self.model = model
        self.rates = rates if rates is not None else {}
        self.entries: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                self.entries[obj["digest"]] = obj["response"]

    def complete(self, request: RoundRequest, prompt: str, attempt: int = 0) -> RoundResponse:
        digest = request_digest(prompt, request.image_refs, attempt)
        if digest not in self.entries:
            raise TransportFailure(f"fixture has no entry for digest {digest}")
        raw = self.entries[digest]
        tokens_in, tokens_out = _approx_tokens(prompt), _approx_tokens(raw)
        return RoundResponse(
            candidates=parse_candidates(raw),
            raw_text=raw,
            tokens_in=tokens_in,
            tokens_out=tokens_out,
            cost=_cost_for(self.model, tokens_in, tokens_out, self.rates),
        )


def dump_fixture(entries: dict[str, str], path: str | Path) -> None:
    """Write a fixture transcript: one (digest, response) JSON object per line."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for digest in sorted(entries):
                fh.write(json.dumps({"digest": digest, "response": entries[digest]}) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


class RecordingClient(CompletionClient):
    """Wraps a live client and captures a fixture transcript of every call."""

    def __init__(self, inner: CompletionClient):
        self.inner = inner
        self.model = inner.model
        self.entries: dict[str, str] = {}

    def complete(self, request: RoundRequest, prompt: str, attempt: int = 0) -> RoundResponse:
        resp = self.inner.complete(request, prompt, attempt)
        self.entries[request_digest(prompt, request.image_refs, attempt)] = resp.raw_text
        return resp

    def save(self, path: str | Path) -> None:
        dump_fixture(self.entries, path)


class HttpTransport(CompletionClient):
    """OpenRouter-compatible chat-completions transport with structured output.

    The API key is read from the environment (OPENROUTER_API_KEY by default)
    and never logged. Image refs that look like URLs are attached as
    image_url parts; existing local files are inlined as base64 data URLs.
    """

    def __init__(
        self,
        model: str,
        base_url: str = "https://openrouter.ai/api/v1/chat/completions",
        api_key_env: str = API_KEY_ENV,
        rates: dict | None = None,
        temperature: float = 0.2,
        timeout: float = 120.0,
    ):
        self.model = model
        self.base_url = base_url
        self.api_key_env = api_key_env
        self.rates = rates
        self.temperature = temperature
        self.timeout = timeout

    def build_payload(self, request: RoundRequest, prompt: str) -> dict:
        content: list[dict] = [{"type": "text", "text": prompt}]
        for ref in request.image_refs:
            if ref.startswith(("http://", "https://", "data:")):
                content.append({"type": "image_url", "image_url": {"url": ref}})
            elif os.path.isfile(ref):
                import base64

                encoded = base64.b64encode(Path(ref).read_bytes()).decode("ascii")
                content.append(
                    {"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{encoded}"}}
                )
        return {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": content}],
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": "ranked_candidates", "strict": True, "schema": RESPONSE_SCHEMA},
            },
        }

    def complete(self, request: RoundRequest, prompt: str, attempt: int = 0) -> RoundResponse:
        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise TransportFailure(f"environment variable {self.api_key_env} is not set")
        try:
            http_resp = requests.post(
                self.base_url,
                headers={"Authorization": f"Bearer {api_key}"},
                json=self.build_payload(request, prompt),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportFailure(f"request failed: {exc}") from exc
        if http_resp.status_code != 200:
            raise TransportFailure(f"HTTP {http_resp.status_code}: {http_resp.text[:200]}")
        body = http_resp.json()
        try:
            raw = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportFailure(f"malformed completion body: {exc}") from exc
        usage = body.get("usage", {})
        tokens_in = int(usage.get("prompt_tokens", _approx_tokens(prompt)))
        tokens_out = int(usage.get("completion_tokens", _approx_tokens(raw)))
        return RoundResponse(
            candidates=parse_candidates(raw),
            raw_text=raw,
            tokens_in=tokens_in,
            tokens_out=tokens_out,
            cost=_cost_for(self.model, tokens_in, tokens_out, self.rates),
        )


# ---------------------------------------------------------------------------
# The three-round protocol
# ---------------------------------------------------------------------------

def species_frequencies(tree: TaxonomyTree, labels: LabelSpace) -> dict[str, int]:
    """Training image count per species, via its class index."""
    return {sp: int(labels.counts[cls]) for sp, cls in tree.class_of_species.items()}


def most_frequent_species(tree: TaxonomyTree, species_counts: dict[str, int] | None, n: int) -> list[str]:
    counts = species_counts or {}
    ordered = sorted(tree.all_species, key=lambda sp: (-counts.get(sp, 0), sp))
    return ordered[:n]


def _run_round(
    class_type: str,
    candidates: list[str],
    obs: ObservationQuery,
    client: CompletionClient,
    policy: RetryPolicy,
    config: ProtocolConfig,
    ledger: UsageLedger | None,
    responses: list[RoundResponse],
) -> list[str]:
    req = RoundRequest(
        class_type=class_type,
        candidate_list=tuple(candidates),
        image_refs=obs.image_refs,
        metadata_summary=obs.metadata_summary(),
    )
    prompt = build_prompt(req)
    failure = "no attempts made"
    for attempt in range(policy.max_retries + 1):
        resp = client.complete(req, prompt, attempt)
        responses.append(resp)
        if ledger is not None:
            record_usage(ledger, resp, client.model)
        try:
            validated = validate_response(resp, candidates)
        except RejectedResponse as exc:
            failure = str(exc)
            continue
        accepted: list[str] = []
        for item in validated:
            if item.confidence >= config.min_confidence and item.name not in accepted:
                accepted.append(item.name)
            if len(accepted) >= config.max_accepted:
                break
        if accepted:
            return accepted
        failure = "no accepted item met the confidence cutoff"
    raise ExhaustedRetries(f"{class_type} round: {failure}")


def _single_pass(
    obs: ObservationQuery,
    tree: TaxonomyTree,
    client: CompletionClient,
    policy: RetryPolicy,
    config: ProtocolConfig,
    ledger: UsageLedger | None,
    responses: list[RoundResponse],
) -> tuple[list[str], dict[str, list[str]]]:
    accepted: dict[str, list[str]] = {}
    families = _run_round(
        "family", sorted(tree.families), obs, client, policy, config, ledger, responses
    )
    accepted["family"] = families
    genus_pool = sorted(set().union(*(tree.genera_of[f] for f in families)))
    genera = _run_round("genus", genus_pool, obs, client, policy, config, ledger, responses)
    accepted["genus"] = genera
    species_pool = sorted(set().union(*(tree.species_of[g] for g in genera)))
    ranked = _run_round("species", species_pool, obs, client, policy, config, ledger, responses)
    accepted["species"] = ranked
    return ranked[: config.top_n], accepted


def aggregate_ranked_lists(lists: list[list[str]], n: int) -> list[str]:
    """Rank-sum voting: lower summed rank wins; absent items pay max rank + 1."""
    if not lists:
        return []
    penalty = max(len(lst) for lst in lists) + 1
    names = sorted({name for lst in lists for name in lst})
    scores = {name: 0 for name in names}
    for lst in lists:
        position = {name: i + 1 for i, name in enumerate(lst)}
        for name in names:
            scores[name] += position.get(name, penalty)
    return sorted(names, key=lambda name: (scores[name], name))[:n]


def classify_observation(
    obs: ObservationQuery,
    tree: TaxonomyTree,
    client: CompletionClient,
    policy: RetryPolicy = RetryPolicy(),
    config: ProtocolConfig = ProtocolConfig(),
    species_counts: dict[str, int] | None = None,
    ledger: UsageLedger | None = None,
) -> ZeroShotResult:
    """Family, genus, species rounds for one observation; top-10 species out.

    Every emitted species exists in the taxonomy (responses are
    canonicalized against the candidate lists). When every retry of a round
    is rejected, the observation falls back to the most frequent training
    species and the result is flagged.
    """
    responses: list[RoundResponse] = []
    passes: list[tuple[list[str], dict[str, list[str]]]] = []
    for _ in range(max(1, config.runs)):
        try:
            passes.append(
                _single_pass(obs, tree, client, policy, config, ledger, responses)
            )
        except ExhaustedRetries:
            continue
    if not passes:
        species = most_frequent_species(tree, species_counts, config.top_n)
        return ZeroShotResult(
            observation_id=obs.observation_id,
            species=species,
            fallback=True,
            accepted={},
            responses=responses,
        )
    if len(passes) == 1:
        species, accepted = passes[0]
    else:
        species = aggregate_ranked_lists([p[0] for p in passes], config.top_n)
        accepted = passes[0][1]
    return ZeroShotResult(
        observation_id=obs.observation_id,
        species=species,
        fallback=False,
        accepted=accepted,
        responses=responses,
    )


def group_test_observations(
    records: list[ObservationRecord], extras: list[dict] | None = None
) -> list[ObservationQuery]:
    """Group test-split records into queries, keyed on observation_id.

    ``extras`` aligns with ``records`` and may carry location, substrate,
    season, and image attachments (tolerated extra metadata keys).
    """
    queries: dict[str, dict] = {}
    order: list[str] = []
    for i, rec in enumerate(records):
        if rec.split != "test":
            continue
        extra = extras[i] if extras is not None else {}
        entry = queries.get(rec.observation_id)
        if entry is None:
            entry = {"refs": [], "location": None, "substrate": None, "season": None}
            queries[rec.observation_id] = entry
            order.append(rec.observation_id)
        entry["refs"].append(extra.get("image") or f"{rec.observation_id}#{len(entry['refs'])}")
        for key in ("location", "substrate", "season"):
            if entry[key] is None and extra.get(key):
                entry[key] = str(extra[key])
    return [
        ObservationQuery(
            observation_id=obs_id,
            image_refs=tuple(queries[obs_id]["refs"]),
            location=queries[obs_id]["location"],
            substrate=queries[obs_id]["substrate"],
            season=queries[obs_id]["season"],
        )
        for obs_id in order
    ]


def run_zeroshot(
    observations: list[ObservationQuery],
    tree: TaxonomyTree,
    client: CompletionClient,
    policy: RetryPolicy = RetryPolicy(),
    config: ProtocolConfig = ProtocolConfig(),
    species_counts: dict[str, int] | None = None,
    max_in_flight: int = 4,
) -> tuple[list[ZeroShotResult], UsageLedger]:
    """Classify many observations with a bounded number in flight."""
    ledger = UsageLedger()

    def job(obs: ObservationQuery) -> ZeroShotResult:
        return classify_observation(obs, tree, client, policy, config, species_counts, ledger)

    if max_in_flight <= 1 or len(observations) <= 1:
        results = [job(obs) for obs in observations]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(job, observations))
    return results, ledger


def write_zeroshot_submission(
    results: list[ZeroShotResult],
    path: str | Path,
    n: int = 10,
    fill: list[str] | None = None,
) -> None:
    """Submission CSV of ranked species; short rows are padded from ``fill``."""
    import csv

    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["observation_id"] + [f"rank{i + 1}" for i in range(n)] + ["fallback"])
            for res in results:
                ranked = list(res.species[:n])
                if fill:
                    for name in fill:
                        if len(ranked) >= n:
                            break
                        if name not in ranked:
                            ranked.append(name)
                ranked += [""] * (n - len(ranked))
                writer.writerow([res.observation_id] + ranked + [int(res.fallback)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
