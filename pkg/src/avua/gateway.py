"""Text completion and embedding access.

Three interchangeable completion backends share one ``complete(bundle)``
contract: :class:`RemoteBackend` (HTTP), :class:`ReplayBackend` /
:class:`RecordingBackend` (digest-keyed session files) and
:class:`ScriptedBackend` (pattern-matched fixture responses). The
:class:`Gateway` wraps a backend and an embedder and appends every completion
to a per-episode :class:`Transcript`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol

import httpx
import numpy as np

from avua.errors import DigestMiss, EmptyText, IoFailure, NoScriptMatch, TransportError

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 1024
EMBED_DIM = 256
LENIENT_FALLBACK = "Thought: I cannot determine more.\nFinal Answer: unknown"


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class PromptBundle:
    """A rendered prompt.

    ``tag`` names the catalog template the prompt was rendered from and
    ``fragments`` any sub-templates spliced into it. Neither participates in
    the digest; they exist so transcripts can be audited per component.
    """

    user_text: str
    system_text: str = ""
    decoding: DecodingParams = field(default_factory=DecodingParams)
    tag: str = ""
    fragments: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        object.__setattr__(self, "fragments", tuple(self.fragments))

    @property
    def rendered(self) -> str:
        return f"{self.system_text}\n\n{self.user_text}" if self.system_text else self.user_text

    def digest(self) -> str:
        canonical = json.dumps(
            {
                "system": self.system_text,
                "user": self.user_text,
                "decoding": {
                    "temperature": self.decoding.temperature,
                    "max_tokens": self.decoding.max_tokens,
                    "stop": list(self.decoding.stop_sequences),
                },
            },
            sort_keys=True,
            ensure_ascii=False,
            separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def complete(self, bundle: PromptBundle) -> str: ...


# ---------------------------------------------------------------------------
# Scripted backend


@dataclass
class ScriptEntry:
    matcher: str
    response: str
    matcher_kind: str = "substring"
    max_uses: int | None = None
    tag: str | None = None

    def __post_init__(self) -> None:
        if self.matcher_kind not in ("substring", "regex"):
            raise ValueError(f"unknown matcher_kind {self.matcher_kind!r}")
        if self.max_uses is not None and self.max_uses < 1:
            raise ValueError("max_uses must be a positive integer")
        self._pattern = re.compile(self.matcher, re.DOTALL) if self.matcher_kind == "regex" else None

    def matches(self, bundle: PromptBundle) -> bool:
        if self.tag is not None and self.tag != bundle.tag:
            return False
        text = bundle.rendered
        if self._pattern is not None:
            return self._pattern.search(text) is not None
        return self.matcher in text

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "matcher": self.matcher,
            "matcher_kind": self.matcher_kind,
            "response": self.response,
            "max_uses": self.max_uses,
        }
        if self.tag is not None:
            out["tag"] = self.tag
        return out


def load_script(path: str | Path) -> list[ScriptEntry]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read script {path}: {exc}") from exc
    if not isinstance(data, list):
        raise IoFailure(f"script {path} must be a JSON array")
    return [
        ScriptEntry(
            matcher=item["matcher"],
            response=item["response"],
            matcher_kind=item.get("matcher_kind", "substring"),
            max_uses=item.get("max_uses"),
            tag=item.get("tag"),
        )
        for item in data
    ]


class ScriptedBackend:
    """Serve fixture responses by matching patterns against the rendered prompt.

    Entries are tried in order and the first match with uses remaining wins,
    so a run of entries sharing one matcher with ``max_uses=1`` plays back as
    a sequence.
    """

    def __init__(self, entries: Iterable[ScriptEntry], strict: bool = True,
                 fallback: str = LENIENT_FALLBACK) -> None:
        self.entries = list(entries)
        self.strict = strict
        self.fallback = fallback
        self._uses = [0] * len(self.entries)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> "ScriptedBackend":
        return cls(load_script(path), **kwargs)

    def complete(self, bundle: PromptBundle) -> str:
        with self._lock:
            for i, entry in enumerate(self.entries):
                if entry.max_uses is not None and self._uses[i] >= entry.max_uses:
                    continue
                if entry.matches(bundle):
                    self._uses[i] += 1
                    return entry.response
        if self.strict:
            head = bundle.user_text[:120].replace("\n", " ")
            raise NoScriptMatch(f"no script entry for [{bundle.tag or 'untagged'}] prompt: {head!r}")
        return self.fallback

    def unused_entries(self) -> list[ScriptEntry]:
        return [e for e, n in zip(self.entries, self._uses) if n == 0]


# ---------------------------------------------------------------------------
# Remote HTTP backend


class RemoteBackend:
    """POST ``{system, user, temperature, max_tokens, stop}``; expect ``{text}``."""

    def __init__(self, url: str, timeout: float = 60.0, client: httpx.Client | None = None) -> None:
        self.url = url
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, bundle: PromptBundle) -> str:
        body = {
            "system": bundle.system_text,
            "user": bundle.user_text,
            "temperature": bundle.decoding.temperature,
            "max_tokens": bundle.decoding.max_tokens,
            "stop": list(bundle.decoding.stop_sequences),
        }
        try:
            resp = self._client.post(self.url, json=body)
            resp.raise_for_status()
            text = resp.json()["text"]
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"completion request to {self.url} failed: {exc}") from exc
        if not isinstance(text, str):
            raise TransportError("completion response 'text' is not a string")
        return text


# ---------------------------------------------------------------------------
# Record / replay


class RecordingBackend:
    """Pass-through to a live backend, appending ``{digest, response}`` lines."""

    def __init__(self, inner: Backend, session_path: str | Path) -> None:
        self.inner = inner
        self.session_path = Path(session_path)
        self._lock = threading.Lock()

    def complete(self, bundle: PromptBundle) -> str:
        response = self.inner.complete(bundle)
        line = json.dumps({"digest": bundle.digest(), "response": response}, ensure_ascii=False)
        with self._lock:
            try:
                self.session_path.parent.mkdir(parents=True, exist_ok=True)
                with self.session_path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            except OSError as exc:
                raise IoFailure(f"cannot append to session {self.session_path}: {exc}") from exc
        return response


class ReplayBackend:
    """Serve responses by prompt digest. Call order does not matter."""

    def __init__(self, session_path: str | Path) -> None:
        self.session_path = Path(session_path)
        self._responses: dict[str, str] = {}
        try:
            lines = self.session_path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read session {self.session_path}: {exc}") from exc
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                self._responses[rec["digest"]] = rec["response"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IoFailure(f"{self.session_path}:{n}: malformed session line") from exc

    def complete(self, bundle: PromptBundle) -> str:
        digest = bundle.digest()
        try:
            return self._responses[digest]
        except KeyError:
            raise DigestMiss(f"digest {digest[:12]} not in session {self.session_path}") from None


def record_and_replay(session_path: str | Path, mode: str, live: Backend | None = None) -> Backend:
    if mode == "record":
        if live is None:
            raise ValueError("record mode needs a live backend to wrap")
        return RecordingBackend(live, session_path)
    if mode == "replay":
        return ReplayBackend(session_path)
    raise ValueError(f"mode must be 'record' or 'replay', not {mode!r}")


# ---------------------------------------------------------------------------
# Embeddings

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashingEmbedder:
    """Signed feature hashing over a bag of lowercase alphanumeric tokens.

    Token order is irrelevant (bag semantics). Each token hashes, with the
    seed, to one bucket and a sign; the count vector is L2-normalised.
    """

    def __init__(self, dim: int = EMBED_DIM, seed: int = 0) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed

    def bucket(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(f"{self.seed}:{token}".encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(h, "little")
        return value % self.dim, (1.0 if (value >> 63) & 1 else -1.0)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        tokens = tokenize(text) or [text.strip()]
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            idx, sign = self.bucket(tok)
            vec[idx] += sign
        norm = float(np.sqrt(np.dot(vec, vec)))
        if norm == 0.0:
            # every token cancelled out; fall back to an unsigned count
            for tok in tokens:
                vec[self.bucket(tok)[0]] += 1.0
            norm = float(np.sqrt(np.dot(vec, vec)))
        return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; exactly 1.0 for identical non-zero vectors."""
    denom = float(np.sqrt(float(np.dot(a, a)) * float(np.dot(b, b))))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b)) / denom


# ---------------------------------------------------------------------------
# Gateway + transcript


@dataclass
class TranscriptEntry:
    seq: int
    tag: str
    fragments: list[str]
    digest: str
    system: str
    user: str
    response: str


class Transcript:
    """Per-episode, single-writer log of completions."""

    def __init__(self) -> None:
        self.entries: list[TranscriptEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, bundle: PromptBundle, response: str) -> None:
        self.entries.append(TranscriptEntry(
            seq=len(self.entries) + 1,
            tag=bundle.tag,
            fragments=list(bundle.fragments),
            digest=bundle.digest(),
            system=bundle.system_text,
            user=bundle.user_text,
            response=response,
        ))

    def count(self, tag: str) -> int:
        return sum(1 for e in self.entries if e.tag == tag or tag in e.fragments)

    def dumps(self) -> str:
        return "".join(json.dumps(asdict(e), ensure_ascii=False, sort_keys=True) + "\n" for e in self.entries)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")


class Gateway:
    def __init__(self, backend: Backend, embedder: HashingEmbedder | None = None) -> None:
        self.backend = backend
        self.embedder = embedder or HashingEmbedder()

    def complete(self, bundle: PromptBundle, transcript: Transcript | None = None) -> str:
        response = self.backend.complete(bundle)
        if transcript is not None:
            transcript.append(bundle, response)
        return response

    def embed(self, text: str) -> np.ndarray:
        return self.embedder.embed(text)
