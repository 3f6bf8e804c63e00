"""Frozen proposal-model boundary: decoding parameters and adapters.

The model never learns; the only cross-round channel is the prompt. The
scripted adapter makes end-to-end repair-loop tests reproducible without a
network; the remote adapter speaks a minimal JSON protocol.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import ModelProposalError, TransportError
from .prompting import ComposedPrompt, FEEDBACK_MARKER
from .util import http_post_json, json_digest, token_count

log = logging.getLogger(__name__)

CREDENTIAL_ENV_VAR = "ARCS_API_TOKEN"


@dataclass(frozen=True)
class DecodingParams:
    """Sampling configuration carried to the proposal model."""

    temperature: float = 0.7
    top_p: float = 0.95
    max_output_tokens: int = 512
    seed: int = 42

    def to_jsonable(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_output_tokens": self.max_output_tokens,
            "seed": self.seed,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "DecodingParams":
        return cls(
            temperature=float(data["temperature"]),
            top_p=float(data["top_p"]),
            max_output_tokens=int(data["max_output_tokens"]),
            seed=int(data["seed"]),
        )


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int

    def to_jsonable(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens}


class ProposalModel(ABC):
    """A frozen text-proposal backbone."""

    model_id: str

    @abstractmethod
    def propose(self, prompt: ComposedPrompt, params: DecodingParams) -> tuple[str, Usage]:
        """Return (candidate text, token usage) for one call."""

    def reset(self) -> None:
        """Clear per-run call state; adapters without state ignore this."""


@dataclass(frozen=True)
class ScriptEntry:
    """One trigger/response pair of a scripted model.

    An entry matches a call when every stated condition holds: ``feedback``
    constrains presence/absence of the feedback marker in the prompt,
    ``needles`` must all appear, ``absent`` must not appear, and ``ordinal``
    pins the 0-based call number within a run.
    """

    response: str
    feedback: bool | None = None
    needles: tuple[str, ...] = ()
    absent: tuple[str, ...] = ()
    ordinal: int | None = None

    def matches(self, prompt_text: str, ordinal: int) -> bool:
        if self.feedback is not None and (FEEDBACK_MARKER in prompt_text) != self.feedback:
            return False
        if any(needle not in prompt_text for needle in self.needles):
            return False
        if any(marker in prompt_text for marker in self.absent):
            return False
        if self.ordinal is not None and self.ordinal != ordinal:
            return False
        return True

    def to_jsonable(self) -> dict:
        record: dict = {"response": self.response}
        if self.feedback is not None:
            record["feedback"] = self.feedback
        if self.needles:
            record["needles"] = list(self.needles)
        if self.absent:
            record["absent"] = list(self.absent)
        if self.ordinal is not None:
            record["ordinal"] = self.ordinal
        return record

    @classmethod
    def from_jsonable(cls, data: dict) -> "ScriptEntry":
        return cls(
            response=data["response"],
            feedback=data.get("feedback"),
            needles=tuple(data.get("needles", ())),
            absent=tuple(data.get("absent", ())),
            ordinal=data.get("ordinal"),
        )


class ScriptedModel(ProposalModel):
    """Deterministic model driven by an ordered trigger/response script.

    Each call scans entries in order and answers with the first match, so a
    whole run's proposals are a pure function of (prompt digest, call
    ordinal, seed). No matching entry is a hard model failure for that call.
    """

    def __init__(self, entries: list[ScriptEntry] | list[dict], model_id: str = "scripted"):
        self.model_id = model_id
        self.entries = tuple(
            entry if isinstance(entry, ScriptEntry) else ScriptEntry.from_jsonable(entry)
            for entry in entries
        )
        self._ordinal = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedModel":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("entries", []), model_id=data.get("model_id", "scripted"))

    @property
    def script_digest(self) -> str:
        return json_digest(
            {"model_id": self.model_id, "entries": [entry.to_jsonable() for entry in self.entries]}
        )

    def reset(self) -> None:
        self._ordinal = 0

    def propose(self, prompt: ComposedPrompt, params: DecodingParams) -> tuple[str, Usage]:
        ordinal = self._ordinal
        self._ordinal += 1
        for entry in self.entries:
            if entry.matches(prompt.text, ordinal):
                usage = Usage(
                    input_tokens=prompt.total_tokens,
                    output_tokens=token_count(entry.response),
                )
                return entry.response, usage
        raise ModelProposalError(f"no script entry matches call ordinal {ordinal}")


class RemoteModel(ProposalModel):
    """Adapter for a remote completion endpoint.

    One request carries {prompt, temperature, top_p, max_tokens, seed} and
    the reply must contain {"text": ..., "usage": {...}}. The credential is
    read from the environment and never appears in logs. Transport failures
    are retried with fixed backoff, then surface as a hard model failure.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str = "remote",
        transport: Callable[..., dict] | None = None,
        timeout: float = 60.0,
        retries: int = 2,
        backoff_seconds: float = 0.5,
    ):
        if not endpoint:
            raise ValueError("endpoint required")
        self.endpoint = endpoint
        self.model_id = model_id
        self._transport = transport or http_post_json
        self._timeout = timeout
        self._retries = retries
        self._backoff = backoff_seconds

    def propose(self, prompt: ComposedPrompt, params: DecodingParams) -> tuple[str, Usage]:
        payload = {
            "prompt": prompt.text,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_output_tokens,
            "seed": params.seed,
        }
        token = os.environ.get(CREDENTIAL_ENV_VAR)
        last_error: TransportError | None = None
        for attempt in range(self._retries + 1):
            try:
                reply = self._transport(self.endpoint, payload, self._timeout, token=token)
                break
            except TransportError as exc:
                last_error = exc
                if attempt < self._retries:
                    log.warning("transport failure (attempt %d), retrying", attempt + 1)
                    time.sleep(self._backoff)
        else:
            raise ModelProposalError(
                f"transport failure after {self._retries} retries"
            ) from last_error
        text = reply.get("text", "")
        usage_reply = reply.get("usage") or {}
        usage = Usage(
            input_tokens=int(usage_reply.get("input_tokens", prompt.total_tokens)),
            output_tokens=int(usage_reply.get("output_tokens", token_count(text))),
        )
        if not text:
            log.warning("model returned an empty response; candidate will fail all tests")
        return text, usage


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)(?:\n)?```", re.DOTALL)
_OPEN_FENCE_RE = re.compile(r"```[^\n]*\n(.*)\Z", re.DOTALL)


def extract_code(candidate_text: str) -> str:
    """First fenced code block if present, else the raw text unchanged."""
    match = _FENCE_RE.search(candidate_text)
    if match:
        return match.group(1)
    match = _OPEN_FENCE_RE.search(candidate_text)
    if match:
        return match.group(1)
    return candidate_text
