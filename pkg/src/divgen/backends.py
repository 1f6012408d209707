"""Completion backends: a local mock LM and an OpenAI-compatible HTTP client.

Both speak the same request/response contract so the generation pipeline is
backend-agnostic. The mock backend drives the sampling transforms locally in
the documented order (temperature, bias, top-p, sample); the HTTP backend
delegates those knobs to the server and adds retry/backoff handling.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from divgen import mocklm
from divgen.sampling import (
    MAX_BIAS_ENTRIES,
    BiasMap,
    SamplingParams,
    apply_bias,
    apply_temperature,
    apply_top_p,
    sample_token,
)

__all__ = [
    "CompletionRequest",
    "CompletionResponse",
    "BackendError",
    "WhitespaceTokenizer",
    "DynamicWhitespaceTokenizer",
    "VocabFileTokenizer",
    "MockCompletionBackend",
    "OpenAICompletionBackend",
    "truncate_at_stop",
    "strip_completion",
    "request_record",
]

logger = logging.getLogger(__name__)

DEFAULT_STOP_SEQUENCES = ['"\n', '"']


@dataclass
class CompletionRequest:
    prompt: str
    n_completions: int = 20
    params: SamplingParams = field(default_factory=SamplingParams)
    logit_bias: BiasMap = field(default_factory=dict)
    stop_sequences: list[str] = field(default_factory=lambda: list(DEFAULT_STOP_SEQUENCES))

    def __post_init__(self) -> None:
        if self.n_completions < 1:
            raise ValueError("n_completions must be >= 1")
        if len(self.logit_bias) > MAX_BIAS_ENTRIES:
            raise ValueError(f"logit_bias holds {len(self.logit_bias)} entries, max {MAX_BIAS_ENTRIES}")


@dataclass
class CompletionResponse:
    texts: list[str]
    prompt_tokens: int
    completion_tokens: int
    backend_id: str


class BackendError(RuntimeError):
    """Completion call failed after any applicable retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class Tokenizer(Protocol):
    def encode(self, text: str) -> list[int]: ...

    def decode(self, token_ids: Sequence[int]) -> str: ...


def truncate_at_stop(text: str, stop_sequences: Sequence[str]) -> str:
    """Cut a text at the first occurrence of any stop sequence."""
    cut = len(text)
    for stop in stop_sequences:
        idx = text.find(stop)
        if idx != -1:
            cut = min(cut, idx)
    return text[:cut]


def strip_completion(text: str) -> str:
    """Trim whitespace and a dangling opening quote from a raw completion."""
    text = text.strip()
    if text.startswith('"'):
        text = text[1:].lstrip()
    return text


class WhitespaceTokenizer:
    """Closed-vocabulary whitespace tokenizer; unknown words map to the unk id."""

    def __init__(self, vocabulary: Sequence[str], token_to_id: Mapping[str, int]):
        self.vocabulary = list(vocabulary)
        self.token_to_id = dict(token_to_id)
        self.unk_id = self.token_to_id[mocklm.UNK]

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(tok, self.unk_id) for tok in text.split()]

    def decode(self, token_ids: Sequence[int]) -> str:
        return " ".join(self.vocabulary[t] for t in token_ids)

    @property
    def reserved_ids(self) -> set[int]:
        return {self.token_to_id[t] for t in (mocklm.UNK, mocklm.BOS, mocklm.EOS)}


class DynamicWhitespaceTokenizer:
    """Open-vocabulary fallback: lowercase whitespace tokens, ids first-seen.

    Ids are only stable within one process, so bias maps keyed this way must
    never be sent to a remote backend.
    """

    def __init__(self) -> None:
        self.vocabulary: list[str] = [mocklm.UNK]
        self.token_to_id: dict[str, int] = {mocklm.UNK: 0}

    def encode(self, text: str) -> list[int]:
        ids = []
        for tok in text.lower().split():
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.vocabulary)
                self.vocabulary.append(tok)
            ids.append(self.token_to_id[tok])
        return ids

    def decode(self, token_ids: Sequence[int]) -> str:
        return " ".join(self.vocabulary[t] for t in token_ids)

    @property
    def reserved_ids(self) -> set[int]:
        return {0}


class VocabFileTokenizer:
    """Greedy longest-match tokenizer over a piece vocabulary file.

    The file is JSON mapping piece string to token id, as exported from the
    target backend's tokenizer. Unmatched characters map to the reserved
    unknown id, which is excluded from biasing.
    """

    UNK_ID = -1

    def __init__(self, vocab_path: str):
        with open(vocab_path, encoding="utf-8") as fh:
            self.piece_to_id: dict[str, int] = {p: int(i) for p, i in json.load(fh).items()}
        self.id_to_piece = {i: p for p, i in self.piece_to_id.items()}
        self.max_piece_len = max(len(p) for p in self.piece_to_id)

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        pos = 0
        while pos < len(text):
            for end in range(min(len(text), pos + self.max_piece_len), pos, -1):
                piece = text[pos:end]
                if piece in self.piece_to_id:
                    ids.append(self.piece_to_id[piece])
                    pos = end
                    break
            else:
                ids.append(self.UNK_ID)
                pos += 1
        return ids

    def decode(self, token_ids: Sequence[int]) -> str:
        return "".join(self.id_to_piece.get(t, "") for t in token_ids)

    @property
    def reserved_ids(self) -> set[int]:
        return {self.UNK_ID}


class MockCompletionBackend:
    """Generates completions from a label-conditioned n-gram model.

    The target label is recovered from the prompt's final Elements: or
    Characteristics: line, the way a hosted model would read the instruction.
    Sampling is fully deterministic given the request's rng seed.
    """

    def __init__(self, model: mocklm.NGramModel, phrase_to_label: Mapping[str, str]):
        self.model = model
        self.phrase_to_label = dict(phrase_to_label)
        self.tokenizer = WhitespaceTokenizer(model.vocabulary, model.token_to_id)
        self.backend_id = "mock-ngram"
        self._bos = model.token_to_id[mocklm.BOS]
        self._eos = model.token_to_id[mocklm.EOS]
        self._masked = np.array(sorted(self.tokenizer.reserved_ids - {self._eos}))

    @property
    def unbiasable_token_ids(self) -> set[int]:
        return self.tokenizer.reserved_ids

    def label_from_prompt(self, prompt: str) -> str:
        phrase = None
        for line in prompt.splitlines():
            line = line.strip()
            for prefix in ("Elements:", "Characteristics:"):
                if line.startswith(prefix):
                    phrase = line[len(prefix):].strip()
        if phrase is None or phrase not in self.phrase_to_label:
            raise BackendError(f"prompt names no known label phrase (got {phrase!r})")
        return self.phrase_to_label[phrase]

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        label = self.label_from_prompt(request.prompt)
        params = request.params
        rng = np.random.default_rng(params.rng_seed)
        texts: list[str] = []
        completion_tokens = 0
        for _ in range(request.n_completions):
            token_ids, n_generated = self._generate_one(label, params, request.logit_bias, rng)
            completion_tokens += n_generated
            raw = self.model.decode(token_ids)
            raw = truncate_at_stop(raw, request.stop_sequences)
            texts.append(strip_completion(raw))
        return CompletionResponse(
            texts=texts,
            prompt_tokens=len(self.tokenizer.encode(request.prompt)),
            completion_tokens=completion_tokens,
            backend_id=self.backend_id,
        )

    def _generate_one(
        self,
        label: str,
        params: SamplingParams,
        logit_bias: BiasMap,
        rng: np.random.Generator,
    ) -> tuple[list[int], int]:
        context: list[int] = [self._bos] * max(0, self.model.order - 1)
        out: list[int] = []
        local_counts: dict[int, int] = {}
        for _ in range(params.max_tokens):
            dist = mocklm.next_distribution(self.model, context, label)
            if self._masked.size:
                dist[self._masked] = 0.0
                dist = dist / dist.sum()
            dist = apply_temperature(dist, params.temperature)
            bias = dict(logit_bias)
            if params.frequency_penalty:
                for tok, count in local_counts.items():
                    bias[tok] = bias.get(tok, 0.0) - params.frequency_penalty * count
            if bias:
                dist = apply_bias(dist, bias)
            if params.top_p < 1.0:
                dist = apply_top_p(dist, params.top_p)
            tok = sample_token(dist, rng)
            if tok == self._eos:
                break
            out.append(tok)
            local_counts[tok] = local_counts.get(tok, 0) + 1
            context.append(tok)
        return out, len(out)

    def tokenize_for_ledger(self, text: str) -> list[int]:
        return self.tokenizer.encode(text)


class OpenAICompletionBackend:
    """Client for an OpenAI-compatible completions endpoint.

    Temperature, top-p, frequency penalty, and logit bias are delegated to
    the server. Network failures and 429/5xx responses are retried with
    exponential backoff; other client errors surface immediately. Request
    bodies serialize deterministically so logs can be replayed byte-for-byte.
    """

    def __init__(
        self,
        model: str = "text-davinci-002",
        base_url: str | None = None,
        api_key: str | None = None,
        session=None,
        tokenizer: Tokenizer | None = None,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.model = model
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL") or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("OPENAI_API_KEY", "")
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.sleeper = sleeper
        self.backend_id = f"openai:{model}"
        self.send_bias = tokenizer is not None
        if tokenizer is None:
            logger.warning(
                "no tokenizer vocabulary configured for %s: ledger falls back to "
                "whitespace tokens and logit-bias suppression cannot be sent remotely",
                self.backend_id,
            )
            tokenizer = DynamicWhitespaceTokenizer()
        self.tokenizer = tokenizer

    @property
    def unbiasable_token_ids(self) -> set[int]:
        return set(self.tokenizer.reserved_ids)

    def request_body(self, request: CompletionRequest) -> bytes:
        body: dict = {
            "model": self.model,
            "prompt": request.prompt,
            "n": request.n_completions,
            "max_tokens": request.params.max_tokens,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "frequency_penalty": request.params.frequency_penalty,
        }
        if request.logit_bias and self.send_bias:
            body["logit_bias"] = {str(t): w for t, w in sorted(request.logit_bias.items())}
        if request.stop_sequences:
            body["stop"] = request.stop_sequences
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import requests

        url = f"{self.base_url}/completions"
        payload = self.request_body(request)
        headers = {
            "Content-Type": "application/json",
            "Authorization": f"Bearer {self.api_key}",
        }
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleeper(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self.session.post(url, data=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = BackendError(f"HTTP {resp.status_code}", status=resp.status_code)
                retry_after = resp.headers.get("Retry-After")
                if retry_after:
                    try:
                        self.sleeper(float(retry_after))
                    except ValueError:
                        pass
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text}", status=resp.status_code)
            data = resp.json()
            texts = [strip_completion(choice.get("text", "")) for choice in data.get("choices", [])]
            usage = data.get("usage", {})
            return CompletionResponse(
                texts=texts[: request.n_completions],
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                backend_id=self.backend_id,
            )
        raise BackendError(f"completion failed after {self.max_attempts} attempts: {last_error}")

    def tokenize_for_ledger(self, text: str) -> list[int]:
        return self.tokenizer.encode(text)


def request_record(index: int, request: CompletionRequest, response: CompletionResponse) -> dict:
    """One replayable line-delimited JSON record per API call."""
    return {
        "index": index,
        "backend": response.backend_id,
        "request": {
            "prompt": request.prompt,
            "n": request.n_completions,
            "max_tokens": request.params.max_tokens,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "frequency_penalty": request.params.frequency_penalty,
            "rng_seed": request.params.rng_seed,
            "logit_bias": {str(t): w for t, w in sorted(request.logit_bias.items())},
            "stop": request.stop_sequences,
        },
        "response": {
            "texts": response.texts,
            "prompt_tokens": response.prompt_tokens,
            "completion_tokens": response.completion_tokens,
        },
    }
