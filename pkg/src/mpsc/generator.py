"""Candidate acquisition from an OpenAI-compatible chat-completions endpoint.

Each perspective has a fixed prompt template shipped as an editable package
data file (the specification prompt carries its two demonstration blocks
inline; swap the file to change them). Responses are fence-stripped and
stored verbatim otherwise; duplicates are kept on purpose, since every
downstream measure leans on output multiplicity. Test-case completions are
split on assertion boundaries, so one completion can yield several test
vertices.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from importlib import resources

import httpx

from .core import CandidateVertex, Perspective, Problem

logger = logging.getLogger(__name__)

__all__ = [
    "GenerationConfig",
    "require_api_key",
    "render_prompt",
    "sample_candidates",
    "strip_code_fences",
    "split_assertions",
    "AuthFailure",
    "RateLimited",
    "MalformedResponse",
    "API_KEY_ENV",
]

API_KEY_ENV = "MPSC_API_KEY"


class AuthFailure(RuntimeError):
    pass


class RateLimited(RuntimeError):
    pass


class MalformedResponse(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    endpoint_url: str
    model: str
    temperature: float = 0.8
    top_p: float = 0.95
    n_solutions: int = 200
    n_specifications: int = 100
    n_testcases: int = 500
    request_logprobs: bool = True
    completions_per_request: int = 20
    max_retries: int = 3
    backoff_base_s: float = 0.5
    timeout_s: float = 120.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if min(self.n_solutions, self.n_specifications, self.n_testcases) < 0:
            raise ValueError("per-perspective counts must be nonnegative")

    def count_for(self, perspective: Perspective) -> int:
        return {
            Perspective.SOLUTION: self.n_solutions,
            Perspective.SPECIFICATION: self.n_specifications,
            Perspective.TESTCASE: self.n_testcases,
        }[perspective]


_TEMPLATE_FILES = {
    Perspective.SOLUTION: "solution.txt",
    Perspective.SPECIFICATION: "specification.txt",
    Perspective.TESTCASE: "testcase.txt",
}


def _template(perspective: Perspective) -> str:
    name = _TEMPLATE_FILES[perspective]
    return (
        resources.files("mpsc").joinpath("templates", name).read_text(encoding="utf-8")
    )


def render_prompt(problem: Problem, perspective: Perspective) -> str:
    """Fill the perspective's template with the problem prompt and entry point.

    Plain token replacement, not str.format: docstrings routinely contain
    braces.
    """
    if not isinstance(perspective, Perspective):
        raise ValueError(f"unknown perspective {perspective!r}")
    text = _template(perspective)
    text = text.replace("{docstrings}", problem.prompt.rstrip("\n"))
    text = text.replace("{entry_point}", problem.entry_point)
    return text.rstrip("\n") if perspective is Perspective.TESTCASE else text


_FENCE_RE = re.compile(r"```[a-zA-Z]*[ \t]*\n(.*?)(?:```|\Z)", re.DOTALL)


def strip_code_fences(text: str) -> str:
    """Unwrap the first markdown code fence, if any; otherwise pass through."""
    if "```" not in text:
        return text
    match = _FENCE_RE.search(text)
    return match.group(1).rstrip() if match else text


def split_assertions(text: str) -> list[str]:
    """Split a test-case completion into one assertion statement per line.

    The prompt ends on an ``assert`` cue, so the completion may start
    mid-statement; the cue is re-attached before splitting.
    """
    body = strip_code_fences(text)
    stripped = body.lstrip()
    if stripped and not stripped.startswith("assert"):
        body = "assert " + stripped
    return [
        line.strip() for line in body.splitlines() if line.strip().startswith("assert")
    ]


def require_api_key() -> str:
    key = os.environ.get(API_KEY_ENV, "").strip()
    if not key:
        raise AuthFailure(
            f"no API key: export {API_KEY_ENV}=<key> for the generation endpoint"
        )
    return key


def _post_with_retries(
    client: httpx.Client, url: str, payload: dict, config: GenerationConfig
) -> dict:
    last_error = "no attempt made"
    for attempt in range(config.max_retries + 1):
        try:
            response = client.post(url, json=payload, timeout=config.timeout_s)
        except httpx.HTTPError as exc:
            last_error = f"transport error: {exc}"
        else:
            if response.status_code in (401, 403):
                raise AuthFailure(
                    f"endpoint rejected the API key ({response.status_code}); "
                    f"check {API_KEY_ENV}"
                )
            if response.status_code == 200:
                try:
                    return response.json()
                except json.JSONDecodeError as exc:
                    raise MalformedResponse(f"non-JSON body: {exc}") from exc
            if response.status_code not in (429,) and response.status_code < 500:
                raise MalformedResponse(
                    f"unexpected status {response.status_code}: {response.text[:200]}"
                )
            last_error = f"status {response.status_code}"
        if attempt < config.max_retries:
            delay = config.backoff_base_s * (2**attempt)
            logger.info("retrying after %s (sleep %.2fs)", last_error, delay)
            if delay > 0:
                time.sleep(delay)
    raise RateLimited(
        f"gave up after {config.max_retries + 1} attempts; last failure: {last_error}"
    )


def _mean_logprob(choice: dict) -> float | None:
    content = (choice.get("logprobs") or {}).get("content")
    if not content:
        return None
    values = [t.get("logprob") for t in content if t.get("logprob") is not None]
    if not values:
        return None
    return sum(values) / len(values)


def _completions(
    problem: Problem,
    perspective: Perspective,
    n: int,
    config: GenerationConfig,
    client: httpx.Client,
) -> list[tuple[str, float | None]]:
    url = config.endpoint_url.rstrip("/") + "/chat/completions"
    prompt = render_prompt(problem, perspective)
    out: list[tuple[str, float | None]] = []
    while len(out) < n:
        batch = min(config.completions_per_request, n - len(out))
        payload = {
            "model": config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
            "top_p": config.top_p,
            "n": batch,
        }
        if config.request_logprobs:
            payload["logprobs"] = True
        body = _post_with_retries(client, url, payload, config)
        choices = body.get("choices")
        if not isinstance(choices, list) or not choices:
            raise MalformedResponse(f"response without choices: {str(body)[:200]}")
        for choice in choices:
            message = choice.get("message") or {}
            text = message.get("content")
            if not isinstance(text, str):
                raise MalformedResponse("choice without message content")
            out.append((text, _mean_logprob(choice)))
    return out[:n]


def sample_candidates(
    problem: Problem,
    config: GenerationConfig,
    client: httpx.Client | None = None,
) -> list[CandidateVertex]:
    """Sample all three perspectives for one problem.

    Vertex ids follow the same ``{task_id}/{perspective}/{ordinal}`` scheme
    the loader assigns, so a written-and-reloaded candidate file reproduces
    them exactly. No deduplication happens here by design.
    """
    require_api_key()  # fail fast with an actionable message
    owns_client = client is None
    if owns_client:
        client = httpx.Client(
            headers={"Authorization": f"Bearer {require_api_key()}"}
        )
    try:
        vertices: list[CandidateVertex] = []
        for perspective in Perspective:
            want = config.count_for(perspective)
            if want == 0:
                continue
            ordinal = 0
            if perspective is Perspective.TESTCASE:
                # Each completion is asked for 10 assertions; keep requesting
                # until enough assertions accumulate.
                assertions: list[tuple[str, float | None]] = []
                budget = want
                while len(assertions) < want and budget > 0:
                    for text, logprob in _completions(
                        problem, perspective, 1, config, client
                    ):
                        for assertion in split_assertions(text):
                            assertions.append((assertion, logprob))
                    budget -= 1
                pieces = assertions[:want]
            else:
                pieces = [
                    (strip_code_fences(text), logprob)
                    for text, logprob in _completions(
                        problem, perspective, want, config, client
                    )
                ]
            for text, logprob in pieces:
                vertices.append(
                    CandidateVertex(
                        vertex_id=f"{problem.task_id}/{perspective.value}/{ordinal}",
                        task_id=problem.task_id,
                        perspective=perspective,
                        source_text=text,
                        logprob=logprob,
                    )
                )
                ordinal += 1
        return vertices
    finally:
        if owns_client and client is not None:
            client.close()
