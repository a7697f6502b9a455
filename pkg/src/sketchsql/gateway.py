"""Clients for the model services behind the pipeline.

Three logical roles share one request/response shape: the sketch provider
(``/generate``), the aligner (``/score``), and the completer
(``/complete``, optionally adapted onto a chat-style messages API).  A
sentence-encoder client (``/encode``) backs semantic value matching.
Each HTTP client retries transient failures with exponential backoff,
bounds concurrent in-flight requests, and attaches a bearer token when
one is configured.

For offline runs and tests, :class:`StubScript` supplies deterministic
scripted responses keyed by request fingerprint, with in-process stub
clients for every role.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from dataclasses import dataclass

import requests

from .errors import (
    CompleterUnavailableError,
    EncoderUnavailableError,
    ProtocolError,
    ProviderUnavailableError,
    StubScriptError,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_MAX_IN_FLIGHT = 4
DEFAULT_RETRIES = 2
DEFAULT_BACKOFF = 0.5

DEFAULT_TEMPERATURE = 0.0
DEFAULT_TOP_P = 1.0
DEFAULT_FREQUENCY_PENALTY = 0.0


@dataclass
class EndpointConfig:
    base_url: str
    timeout: float = DEFAULT_TIMEOUT
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    auth_token: str | None = None
    retries: int = DEFAULT_RETRIES
    backoff: float = DEFAULT_BACKOFF
    chat_adapter: bool = False

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("endpoint timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")


@dataclass
class CallRecord:
    role: str
    url: str
    request: dict
    response: object
    attempts: int
    elapsed: float


class CallLog:
    """Thread-safe record of outbound calls, for tracing."""

    def __init__(self):
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


class _TransientHttpError(Exception):
    pass


class _HttpEndpoint:
    """One service endpoint: retry/backoff, in-flight bound, auth, logging."""

    def __init__(self, config: EndpointConfig, role: str, unavailable_error,
                 call_log: CallLog | None = None):
        self.config = config
        self.role = role
        self.unavailable_error = unavailable_error
        self.call_log = call_log
        self._semaphore = threading.BoundedSemaphore(config.max_in_flight)
        self._session = requests.Session()

    def post(self, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        headers = {}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        delay = self.config.backoff
        started = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(1, self.config.retries + 2):
            try:
                data = self._post_once(url, payload, headers)
                self._record(url, payload, data, attempt, started)
                return data
            except (requests.RequestException, _TransientHttpError) as exc:
                last_error = exc
                log.debug("%s request attempt %d failed: %s", self.role, attempt, exc)
                if attempt <= self.config.retries:
                    time.sleep(delay)
                    delay *= 2
        message = (f"{self.role} endpoint {url} unavailable after "
                   f"{self.config.retries + 1} attempts: {last_error}")
        self._record(url, payload, f"<error: {last_error}>",
                     self.config.retries + 1, started)
        raise self.unavailable_error(message) from last_error

    def _post_once(self, url: str, payload: dict, headers: dict) -> dict:
        with self._semaphore:
            response = self._session.post(url, json=payload, headers=headers,
                                          timeout=self.config.timeout)
        if response.status_code >= 500:
            raise _TransientHttpError(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            # Client errors will not improve on retry.
            raise self.unavailable_error(
                f"{self.role} endpoint {url} rejected the request: "
                f"HTTP {response.status_code}")
        try:
            data = response.json()
        except ValueError as exc:
            raise ProtocolError(
                f"{self.role} endpoint {url} returned non-JSON body") from exc
        if not isinstance(data, dict):
            raise ProtocolError(
                f"{self.role} endpoint {url} returned {type(data).__name__}, "
                f"expected an object")
        return data

    def _record(self, url, payload, response, attempts, started) -> None:
        if self.call_log is not None:
            self.call_log.append(CallRecord(self.role, url, payload, response,
                                            attempts, time.monotonic() - started))


# --------------------------------------------------------------------------
# Role clients

def _validate_scores(sequences: list, scores) -> list[float]:
    if not isinstance(scores, list) or len(scores) != len(sequences):
        got = len(scores) if isinstance(scores, list) else type(scores).__name__
        raise ProtocolError(
            f"aligner returned {got} score(s) for {len(sequences)} sequence(s)")
    out = []
    for value in scores:
        if not isinstance(value, (int, float)) or isinstance(value, bool) \
                or not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise ProtocolError(f"aligner score {value!r} is not a real in [0,1]")
        out.append(float(value))
    return out


class SketchProviderClient:
    """Client for the sketch-generation service (``POST /generate``)."""

    def __init__(self, config: EndpointConfig, call_log: CallLog | None = None):
        self._endpoint = _HttpEndpoint(config, "sketch provider",
                                       ProviderUnavailableError, call_log)

    def generate(self, task_input: str, k: int) -> list[str]:
        data = self._endpoint.post("/generate",
                                   {"input": task_input, "num_hypotheses": k})
        hypotheses = data.get("hypotheses")
        if not isinstance(hypotheses, list) or \
                not all(isinstance(h, str) for h in hypotheses):
            raise ProtocolError("sketch provider response lacks a 'hypotheses' "
                                "list of strings")
        return hypotheses[:k]


class AlignerClient:
    """Client for the sketch-ranking service (``POST /score``)."""

    def __init__(self, config: EndpointConfig, call_log: CallLog | None = None):
        self._endpoint = _HttpEndpoint(config, "aligner",
                                       ProviderUnavailableError, call_log)

    def score(self, sequences: list[str]) -> list[float]:
        data = self._endpoint.post("/score", {"sequences": list(sequences)})
        return _validate_scores(sequences, data.get("scores"))


class CompleterClient:
    """Client for the SQL-completion service.

    The native contract is ``POST /complete`` with prompt and sampling
    parameters; ``chat_adapter`` maps the same call onto a chat-style
    ``POST /chat/completions`` with a single user message.
    """

    def __init__(self, config: EndpointConfig, call_log: CallLog | None = None):
        self.config = config
        self._endpoint = _HttpEndpoint(config, "completer",
                                       CompleterUnavailableError, call_log)

    def complete(self, prompt: str,
                 temperature: float = DEFAULT_TEMPERATURE,
                 top_p: float = DEFAULT_TOP_P,
                 frequency_penalty: float = DEFAULT_FREQUENCY_PENALTY) -> str:
        if self.config.chat_adapter:
            payload = {
                "messages": [{"role": "user", "content": prompt}],
                "temperature": temperature,
                "top_p": top_p,
                "frequency_penalty": frequency_penalty,
            }
            data = self._endpoint.post("/chat/completions", payload)
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                raise ProtocolError("chat completion response lacks "
                                    "choices[0].message.content") from None
        else:
            payload = {
                "prompt": prompt,
                "temperature": temperature,
                "top_p": top_p,
                "frequency_penalty": frequency_penalty,
            }
            data = self._endpoint.post("/complete", payload)
            text = data.get("text")
        if not isinstance(text, str):
            raise ProtocolError("completer response lacks a 'text' string")
        return text


class EncoderClient:
    """Client for the sentence-encoder service (``POST /encode``)."""

    def __init__(self, config: EndpointConfig, call_log: CallLog | None = None):
        self._endpoint = _HttpEndpoint(config, "sentence encoder",
                                       EncoderUnavailableError, call_log)

    def encode(self, texts: list[str]) -> list[list[float]]:
        data = self._endpoint.post("/encode", {"texts": list(texts)})
        vectors = data.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProtocolError("encoder response lacks one vector per text")
        return vectors


# --------------------------------------------------------------------------
# Deterministic stubs

class StubScript:
    """Scripted responses for offline runs.

    The script file is a JSON object with one section per role
    (``generate``, ``score``, ``complete``, ``encode``).  Each section
    maps a request fingerprint to a list of responses, consumed in order,
    repeating the last entry once exhausted; the fingerprint ``"*"``
    matches any request without an exact entry.  Fingerprints are the
    task input (generate), the single aligner input sequence (score), the
    prompt (complete), or the text to encode (encode).
    """

    ROLES = ("generate", "score", "complete", "encode")

    def __init__(self, sections: dict):
        if not isinstance(sections, dict):
            raise StubScriptError("stub script must be a JSON object")
        unknown = set(sections) - set(self.ROLES)
        if unknown:
            raise StubScriptError(
                f"unknown stub script section(s): {', '.join(sorted(unknown))}")
        self._sections = {}
        for role, table in sections.items():
            if not isinstance(table, dict):
                raise StubScriptError(f"stub section {role!r} must be an object")
            self._sections[role] = {fp: list(resp) if isinstance(resp, list)
                                    else [resp]
                                    for fp, resp in table.items()}
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path) -> "StubScript":
        try:
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as exc:
            raise StubScriptError(f"cannot read stub script: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise StubScriptError(f"stub script is not valid JSON: {exc}") from exc
        return cls(data)

    def take(self, role: str, fingerprint: str):
        with self._lock:
            section = self._sections.get(role)
            if section is None:
                raise StubScriptError(f"stub script has no {role!r} section")
            queue = section.get(fingerprint)
            if queue is None:
                queue = section.get("*")
            if queue is None:
                preview = fingerprint if len(fingerprint) <= 120 \
                    else fingerprint[:117] + "..."
                raise StubScriptError(
                    f"stub script section {role!r} has no entry for {preview!r}")
            if len(queue) > 1:
                return queue.pop(0)
            return queue[0]


class StubSketchProvider:
    def __init__(self, script: StubScript):
        self._script = script

    def generate(self, task_input: str, k: int) -> list[str]:
        response = self._script.take("generate", task_input)
        if not isinstance(response, list) or \
                not all(isinstance(h, str) for h in response):
            raise StubScriptError("generate stub entries must be lists of strings")
        return response[:k]


class StubAligner:
    def __init__(self, script: StubScript):
        self._script = script

    def score(self, sequences: list[str]) -> list[float]:
        scores = [self._script.take("score", seq) for seq in sequences]
        return _validate_scores(sequences, [float(s) for s in scores])


class StubCompleter:
    def __init__(self, script: StubScript):
        self._script = script

    def complete(self, prompt: str, temperature: float = DEFAULT_TEMPERATURE,
                 top_p: float = DEFAULT_TOP_P,
                 frequency_penalty: float = DEFAULT_FREQUENCY_PENALTY) -> str:
        response = self._script.take("complete", prompt)
        if not isinstance(response, str):
            raise StubScriptError("complete stub entries must be strings")
        return response


class StubSentenceEncoder:
    """Stub encoder mapping each text to a scripted vector.

    Accepts either a loaded :class:`StubScript` (its ``encode`` section)
    or a plain ``{text: vector}`` mapping.
    """

    def __init__(self, source):
        if isinstance(source, StubScript):
            self._script = source
        else:
            self._script = StubScript(
                {"encode": {text: [vec] for text, vec in source.items()}})

    def encode(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            try:
                vector = self._script.take("encode", text)
            except StubScriptError as exc:
                raise EncoderUnavailableError(str(exc)) from exc
            out.append([float(x) for x in vector])
        return out


def clients_from_script(script: StubScript) -> dict:
    """Build the full stub client set from one script."""
    return {
        "sketch": StubSketchProvider(script),
        "aligner": StubAligner(script),
        "completer": StubCompleter(script),
        "encoder": StubSentenceEncoder(script),
    }


# --------------------------------------------------------------------------
# Role-level helpers with request validation

def request_candidates(endpoint, task_input: str, k: int) -> list[str]:
    """Top-k sketch-part hypotheses for ``task_input``, best first.

    The service may legitimately return fewer than ``k``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not task_input:
        raise ValueError("task input must be non-empty")
    return endpoint.generate(task_input, k)[:k]


def request_alignment_scores(endpoint, sequences: list[str]) -> list[float]:
    """One [0,1] alignment score per input sequence, in input order."""
    if not sequences:
        raise ValueError("sequences must be non-empty")
    return _validate_scores(sequences, list(endpoint.score(sequences)))


def request_completion(endpoint, prompt: str,
                       temperature: float = DEFAULT_TEMPERATURE,
                       top_p: float = DEFAULT_TOP_P,
                       frequency_penalty: float = DEFAULT_FREQUENCY_PENALTY) -> str:
    if not prompt:
        raise ValueError("prompt must be non-empty")
    return endpoint.complete(prompt, temperature=temperature, top_p=top_p,
                             frequency_penalty=frequency_penalty)
