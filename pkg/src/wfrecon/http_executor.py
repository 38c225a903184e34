"""Chain executor against a chat-completions compatible HTTP endpoint.

Each step sends one request. The system message is rendered from the
primitive's role, thought pattern and tool names; the user message is the
task for the first step and the previous step's reply afterwards. Tools are
only named in the prompt, never invoked.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Sequence

import httpx

from .config import DEFAULTS, ConfigError
from .execution import ExecutionResult, InfrastructureError
from .primitives import Primitive, PrimitiveSpace

log = logging.getLogger(__name__)

SYSTEM_TEMPLATE = (
    "You are acting as: {role}.\n"
    "Work in this style: {pattern}.\n"
    "Tools you may describe using: {tools}.\n"
    "Reply with your complete output for the next stage."
)

_RETRYABLE_STATUS = {429}
_AUTH_STATUS = {401, 403}


def render_system_message(p: Primitive) -> str:
    tools = ", ".join(sorted(p.tools)) if p.tools else "none"
    return SYSTEM_TEMPLATE.format(role=p.role, pattern=p.pattern, tools=tools)


@dataclass(frozen=True)
class HttpEndpoint:
    url: str
    api_key: str | None = None
    api_key_env: str | None = None
    timeout: float = DEFAULTS["http"]["timeout"]
    retries: int = DEFAULTS["http"]["retries"]
    temperature: float = DEFAULTS["http"]["temperature"]

    def resolved_key(self) -> str | None:
        if self.api_key:
            return self.api_key
        if self.api_key_env:
            return os.environ.get(self.api_key_env) or None
        return None

    @classmethod
    def from_config(cls, data: dict) -> "HttpEndpoint":
        if not isinstance(data, dict) or not data.get("url"):
            raise ConfigError("http executor config needs a 'url'")
        known = {"url", "api_key", "api_key_env", "timeout", "retries", "temperature"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown http config keys: {sorted(extra)}")
        return cls(**data)


class HttpExecutor:
    """Sequential chain runner; safe to call from several threads."""

    def __init__(self, endpoint: HttpEndpoint, space: PrimitiveSpace,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.space = space
        headers = {"Content-Type": "application/json"}
        key = endpoint.resolved_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=endpoint.timeout, headers=headers)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, payload: dict) -> httpx.Response:
        last_exc: Exception | None = None
        for attempt in range(self.endpoint.retries + 1):
            try:
                resp = self._client.post(self.endpoint.url, json=payload)
            except httpx.TransportError as exc:
                last_exc = exc
                log.warning("request to %s failed (attempt %d): %s", self.endpoint.url, attempt + 1, exc)
                continue
            if resp.status_code in _RETRYABLE_STATUS and attempt < self.endpoint.retries:
                continue
            return resp
        raise InfrastructureError(f"endpoint {self.endpoint.url} unreachable: {last_exc}")

    def __call__(self, workflow: Sequence[str], task: str) -> ExecutionResult:
        text = task
        tokens = 0
        for j, pid in enumerate(workflow):
            p = self.space[pid]
            payload = {
                "model": p.model,
                "messages": [
                    {"role": "system", "content": render_system_message(p)},
                    {"role": "user", "content": text},
                ],
                "temperature": self.endpoint.temperature,
            }
            resp = self._post(payload)
            if resp.status_code in _AUTH_STATUS:
                raise InfrastructureError(f"authentication rejected by {self.endpoint.url} ({resp.status_code})")
            if not resp.is_success:
                return ExecutionResult("", failed_at=j + 1, tokens=tokens + p.cost)
            try:
                body = resp.json()
            except ValueError as exc:
                raise InfrastructureError(f"non-JSON reply from {self.endpoint.url}") from exc
            content = _completion_text(body)
            tokens += _usage_tokens(body, p.cost)
            if not content:
                return ExecutionResult("", failed_at=j + 1, tokens=tokens)
            text = content
        return ExecutionResult(text, None, tokens)


def _completion_text(body) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        return ""
    return content if isinstance(content, str) else ""


def _usage_tokens(body, fallback: int) -> int:
    usage = body.get("usage") if isinstance(body, dict) else None
    if isinstance(usage, dict):
        total = usage.get("total_tokens")
        if isinstance(total, int) and not isinstance(total, bool) and total >= 0:
            return total
    return fallback


def http_execute(endpoint: HttpEndpoint, space: PrimitiveSpace, workflow: Sequence[str],
                 task: str) -> ExecutionResult:
    """One-shot convenience wrapper around :class:`HttpExecutor`."""
    with HttpExecutor(endpoint, space) as ex:
        return ex(workflow, task)
