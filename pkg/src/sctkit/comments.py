"""Comment generation for code snippets and normalisation of commented code.

A provider returns the function with natural-language comments added. Remote
providers speak the chat-completion protocol; every response is cached on disk
under the SHA-256 of the exact source bytes, and the ``fixture`` provider
serves only from that cache.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple, Optional

import requests

from .errors import (
    CacheMiss,
    MalformedResponse,
    ProviderUnavailable,
    UnterminatedCommentBlock,
)
from .syntax import tokenize

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo-0301"
DEFAULT_SYSTEM_PROMPT = (
    "You are a code assistant. Add a one-line // comment above each statement "
    "of the given C function. Return only code."
)
API_KEY_ENV = "SCT_API_KEY"

Origin = Literal["remote", "cache", "fixture"]


@dataclass
class CommentProviderConfig:
    kind: Literal["remote_chat", "fixture"] = "fixture"
    endpoint: Optional[str] = None
    model_id: str = DEFAULT_MODEL
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    temperature: float = 0.0
    max_retries: int = 3
    cache_dir: Path = Path(".sct-cache")
    max_in_flight: int = 4
    timeout: float = 60.0
    backoff: float = 1.0

    def __post_init__(self) -> None:
        self.cache_dir = Path(self.cache_dir)
        if self.kind not in ("remote_chat", "fixture"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise ValueError("max_retries must be >= 0 and max_in_flight >= 1")

    def validate(self) -> None:
        """Check that a remote provider has an endpoint and a credential."""
        if self.kind == "remote_chat":
            if not self.endpoint:
                raise ValueError("remote_chat provider requires an endpoint")
            if not os.environ.get(API_KEY_ENV):
                raise ValueError(f"remote_chat provider requires ${API_KEY_ENV}")


class GeneratedComments(NamedTuple):
    text: str
    origin: Origin


@dataclass
class CommentedSource:
    text: str
    comment_rows: dict[int, str] = field(default_factory=dict)
    origin: Origin = "fixture"

    @property
    def lines(self) -> list[str]:
        return self.text.split("\n") if self.text else []

    def code_text(self) -> str:
        """The text with every comment line removed."""
        return "\n".join(
            line for row, line in enumerate(self.lines) if row not in self.comment_rows
        )


class CommentCache:
    """On-disk cache laid out as ``<root>/<hh>/<sha256>.txt``."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    @staticmethod
    def key(source: str) -> str:
        return hashlib.sha256(source.encode("utf-8")).hexdigest()

    def path(self, source: str) -> Path:
        h = self.key(source)
        return self.root / h[:2] / f"{h}.txt"

    def get(self, source: str) -> Optional[str]:
        p = self.path(source)
        try:
            return p.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None

    def put(self, source: str, text: str) -> Path:
        p = self.path(source)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=".tmp-", suffix=".txt")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp, p)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return p


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)(?:```|\Z)", re.DOTALL)


def extract_code(content: str) -> str:
    """Pull the code out of a chat response, unwrapping a markdown fence if present."""
    m = _FENCE_RE.search(content)
    code = m.group(1) if m else content
    if not code.strip():
        raise MalformedResponse("response contains no code")
    return code


class CommentClient:
    """Comment provider bound to one config; safe to share between threads.

    Remote requests are capped at ``cfg.max_in_flight`` concurrent calls.
    """

    def __init__(self, cfg: CommentProviderConfig, session: Optional[requests.Session] = None):
        cfg.validate()
        self.cfg = cfg
        self.cache = CommentCache(cfg.cache_dir)
        self._session = session
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._local = threading.local()
        self.requests_sent = 0

    @property
    def session(self) -> requests.Session:
        if self._session is not None:
            return self._session
        s = getattr(self._local, "session", None)
        if s is None:
            s = self._local.session = requests.Session()
        return s

    def generate(self, source: str) -> GeneratedComments:
        if not source.strip():
            raise ValueError("source is empty")
        cached = self.cache.get(source)
        if cached is not None:
            origin: Origin = "fixture" if self.cfg.kind == "fixture" else "cache"
            return GeneratedComments(extract_code(cached), origin)
        if self.cfg.kind == "fixture":
            raise CacheMiss(f"no cached comments for {self.cache.key(source)}")
        content = self._request(source)
        code = extract_code(content)
        self.cache.put(source, content)
        return GeneratedComments(code, "remote")

    def _request(self, source: str) -> str:
        cfg = self.cfg
        payload = {
            "model": cfg.model_id,
            "messages": [
                {"role": "system", "content": cfg.system_prompt},
                {"role": "user", "content": source},
            ],
            "temperature": cfg.temperature,
        }
        headers = {"Authorization": f"Bearer {os.environ.get(API_KEY_ENV, '')}"}
        last_error: object = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(self._delay(attempt, last_error))
            try:
                with self._slots:
                    self.requests_sent += 1
                    resp = self.session.post(
                        cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout
                    )
            except requests.RequestException as e:
                last_error = e
                logger.warning("comment request failed (attempt %d): %s", attempt + 1, e)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = resp
                logger.warning("comment request got HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ProviderUnavailable(f"HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise MalformedResponse(f"unexpected response shape: {e}") from None
            if not isinstance(content, str):
                raise MalformedResponse("message content is not text")
            return content
        detail = (
            f"HTTP {last_error.status_code}"
            if isinstance(last_error, requests.Response)
            else str(last_error)
        )
        raise ProviderUnavailable(f"gave up after {cfg.max_retries + 1} attempts: {detail}")

    def _delay(self, attempt: int, last_error: object) -> float:
        delay = self.cfg.backoff * 2 ** (attempt - 1)
        if isinstance(last_error, requests.Response):
            retry_after = last_error.headers.get("Retry-After")
            if retry_after and retry_after.isdigit():
                delay = max(delay, float(retry_after))
        return delay


def generate_comments(source: str, cfg: CommentProviderConfig) -> GeneratedComments:
    return CommentClient(cfg).generate(source)


# -- normalisation --------------------------------------------------------

def _clean_comment(text: str) -> str:
    prev = None
    while text != prev:
        prev = text
        text = text.replace("'''", "").strip().strip("*/").strip()
    return text


def normalize(raw: str, origin: Origin = "fixture") -> CommentedSource:
    """Normalise commented code into whole-line ``//`` comments.

    Blank lines are removed; ``'''`` blocks and ``/* */`` blocks become one
    ``//`` line per text line; comments sharing a line with code are hoisted
    onto their own line just above that code. Comment lines are indented like
    the code line that follows them.

    Raises:
        UnterminatedCommentBlock: a ``'''`` or ``/*`` block never closes.
    """
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    out: list[str] = []
    comment_rows: dict[int, str] = {}
    code: list[str] = []
    comments: list[str] = []
    current: list[str] = []
    state = "code"
    block_start = 0

    def end_line() -> None:
        for c in comments:
            c = _clean_comment(c)
            if c:
                comment_rows[len(out)] = c
                out.append(f"// {c}")
        line = "".join(code).rstrip()
        if line.strip():
            out.append(line)
        code.clear()
        comments.clear()

    def close_comment() -> None:
        comments.append("".join(current))
        current.clear()

    def resume_code() -> None:
        # keep neighbouring tokens apart once the comment is gone
        if code and not code[-1][-1:].isspace():
            code.append(" ")

    i, n = 0, len(text)
    line_no = 0
    while i < n:
        ch = text[i]
        if ch == "\n":
            if state == "line":
                close_comment()
                state = "code"
            elif state in ("block", "triple"):
                close_comment()
            elif state in ("string", "char"):
                state = "code"
            end_line()
            line_no += 1
            i += 1
            continue
        if state == "code":
            if text.startswith("'''", i):
                state, block_start = "triple", line_no
                i += 3
            elif text.startswith("//", i):
                state = "line"
                i += 2
            elif text.startswith("/*", i):
                state, block_start = "block", line_no
                i += 2
            else:
                if ch == '"':
                    state = "string"
                elif ch == "'":
                    state = "char"
                code.append(ch)
                i += 1
        elif state in ("string", "char"):
            code.append(ch)
            if ch == "\\" and i + 1 < n and text[i + 1] != "\n":
                code.append(text[i + 1])
                i += 2
                continue
            if (ch == '"' and state == "string") or (ch == "'" and state == "char"):
                state = "code"
            i += 1
        elif state == "line":
            current.append(ch)
            i += 1
        elif state == "block":
            if text.startswith("*/", i):
                close_comment()
                state = "code"
                resume_code()
                i += 2
            else:
                current.append(ch)
                i += 1
        else:  # triple
            if text.startswith("'''", i):
                close_comment()
                state = "code"
                resume_code()
                i += 3
            else:
                current.append(ch)
                i += 1
    if state in ("block", "triple"):
        opener = "'''" if state == "triple" else "/*"
        raise UnterminatedCommentBlock(f"{opener} block opened on line {block_start + 1} never closes")
    if state == "line":
        close_comment()
    end_line()
    # comment lines take the indentation of the code line they precede
    indent = ""
    for row in range(len(out) - 1, -1, -1):
        if row in comment_rows:
            out[row] = indent + out[row]
        else:
            indent = out[row][: len(out[row]) - len(out[row].lstrip())]
    return CommentedSource("\n".join(out), comment_rows, origin)


def strip_comments(source: str) -> str:
    """Remove every comment and blank line from C source."""
    return normalize(source).code_text()


def check_code_unchanged(source: str, commented: CommentedSource) -> None:
    """Raise :class:`MalformedResponse` if the provider altered the code tokens."""
    before = tokenize(source)
    after = tokenize(commented.code_text())
    if before != after:
        for k, (a, b) in enumerate(zip(before, after)):
            if a != b:
                break
        else:
            k = min(len(before), len(after))
        raise MalformedResponse(f"provider changed the code near token {k}")


def comment_source(source: str, client: CommentClient) -> CommentedSource:
    """Fetch comments for ``source`` and normalise them.

    If the provider rewrote the code itself, the response is discarded and the
    original code comes back with no comments.
    """
    generated = client.generate(source)
    try:
        commented = normalize(generated.text, origin=generated.origin)
        check_code_unchanged(source, commented)
    except (MalformedResponse, UnterminatedCommentBlock) as e:
        logger.warning("discarding comments for %s: %s", CommentCache.key(source)[:12], e)
        return CommentedSource(strip_comments(source), {}, generated.origin)
    return commented
