"""Sentence refinement at inference time.

Two interchangeable backends: a deterministic rule-based cleaner that needs
no network, and a client for an external chat-completion-style text
reconstructor. With the fallback flag on, any failure of the external call
degrades to the rule-based result instead of raising.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import requests

DEFAULT_PROMPT_TEMPLATE = (
    "As a text reconstructor, correct grammatical errors, repetitive words, "
    "and punctuation in the following sentence while preserving its original "
    "meaning with minimal changes: {sentence}"
)

API_KEY_ENV = "EEG2TEXT_REFINE_API_KEY"

_PUNCT = ".,;:!?'\"()"
_PUNCT_RUN = re.compile(r"([.,;:!?'\"()])\1+")
_SPACE_BEFORE_PUNCT = re.compile(r"\s+([.,;:!?)])")

RULE_BASED = "rule_based"
EXTERNAL = "external"
EXTERNAL_FALLBACK = "external_fallback"


class RefineError(Exception):
    """External refinement failed and fallback was disabled."""


class RefineTimeoutError(RefineError):
    pass


class RefineTransportError(RefineError):
    pass


class RefineResponseError(RefineError):
    """The endpoint answered with an unusable payload."""


@dataclass(frozen=True)
class RefinePolicy:
    kind: str = RULE_BASED  # rule_based | external
    endpoint: str = ""
    model: str = ""
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    timeout: float = 10.0
    fallback: bool = True

    def __post_init__(self):
        if self.kind not in (RULE_BASED, EXTERNAL):
            raise ValueError(f"unknown refine kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.prompt_template.count("{sentence}") != 1:
            raise ValueError("prompt template must contain {sentence} exactly once")


@dataclass(frozen=True)
class RefineResult:
    text: str
    source: str  # rule_based | external | external_fallback


def detach_punctuation(text: str) -> list[str]:
    """Case-preserving split: whitespace tokens with leading/trailing
    punctuation detached as separate tokens, punctuation runs collapsed."""
    out: list[str] = []
    for chunk in text.split():
        chunk = _PUNCT_RUN.sub(r"\1", chunk)
        lead: list[str] = []
        trail: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def refine_rule_based(sentence: str) -> str:
    """Deterministic cleanup: collapse immediate repeats (case-insensitive,
    covering both word and punctuation tokens), tighten whitespace and the
    spacing before punctuation, capitalize the first letter, close with a
    terminal mark. Idempotent: the duplicate collapse runs on the detached
    token view, which re-tokenizing the output reproduces.
    """
    tokens = detach_punctuation(sentence)
    kept: list[str] = []
    for tok in tokens:
        if kept and tok.lower() == kept[-1].lower():
            continue
        kept.append(tok)
    text = " ".join(kept)
    text = _SPACE_BEFORE_PUNCT.sub(r"\1", text)
    for i, ch in enumerate(text):
        if ch.isalpha():
            text = text[:i] + ch.upper() + text[i + 1 :]
            break
    if text and text[-1] not in ".!?":
        text += "."
    return text


def refine(sentence: str, policy: RefinePolicy) -> RefineResult:
    if policy.kind == RULE_BASED:
        return RefineResult(text=refine_rule_based(sentence), source=RULE_BASED)
    return refine_external(sentence, policy)


def _extract_reply(payload) -> str:
    """First text field of the first choice."""
    try:
        choice = payload["choices"][0]
    except (KeyError, IndexError, TypeError):
        raise RefineResponseError("response carries no choices") from None
    if isinstance(choice, dict):
        message = choice.get("message")
        if isinstance(message, dict) and isinstance(message.get("content"), str):
            return message["content"]
        if isinstance(choice.get("text"), str):
            return choice["text"]
    raise RefineResponseError("first choice has no text field")


def refine_external(sentence: str, policy: RefinePolicy) -> RefineResult:
    """POST the filled prompt to the configured endpoint.

    Wire format: JSON body {model, messages:[{role: "user", content}]};
    reply text is taken from the first choice. The API key env var, when
    set, travels as a bearer token and is never logged.
    """
    if policy.kind != EXTERNAL:
        raise ValueError("refine_external needs an external policy")
    body = {
        "model": policy.model,
        "messages": [
            {"role": "user", "content": policy.prompt_template.format(sentence=sentence)}
        ],
    }
    headers = {"content-type": "application/json"}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["authorization"] = f"Bearer {api_key}"
    try:
        response = requests.post(
            policy.endpoint, json=body, headers=headers, timeout=policy.timeout
        )
        response.raise_for_status()
        text = _extract_reply(response.json())
    except requests.Timeout as exc:
        if policy.fallback:
            return RefineResult(text=refine_rule_based(sentence), source=EXTERNAL_FALLBACK)
        raise RefineTimeoutError(f"refine endpoint timed out after {policy.timeout}s") from exc
    except (requests.RequestException, ValueError) as exc:
        # ValueError covers undecodable JSON bodies
        if policy.fallback:
            return RefineResult(text=refine_rule_based(sentence), source=EXTERNAL_FALLBACK)
        raise RefineTransportError(f"refine endpoint failed: {exc}") from exc
    except RefineResponseError:
        if policy.fallback:
            return RefineResult(text=refine_rule_based(sentence), source=EXTERNAL_FALLBACK)
        raise
    return RefineResult(text=text, source=EXTERNAL)
