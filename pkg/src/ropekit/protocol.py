"""Fitness-evaluator wire protocol, client, and built-in surrogate.

External evaluators speak newline-delimited JSON over a subprocess's
standard streams or a TCP socket.  One request line carries the extension
problem, the factor vector, and a corpus reference; one response line
carries mean fitness and per-sample values.  Frames are UTF-8, LF
terminated, at most 64 MiB, with floats printed to 17 significant digits.

The surrogate evaluator is a deterministic stand-in with a known global
minimum, used for self-contained search tests and the ``--surrogate`` CLI
path.
"""

from __future__ import annotations

import itertools
import json
import socket
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import jsonutil
from .core import RopeConfig, theoretical_critical_dimension
from .errors import (
    DisconnectedError,
    EvaluatorFailure,
    LengthMismatchError,
    MalformedFrameError,
)
from .search import Candidate, candidate_index_range, validate_candidate
from .rescale import ntk_anchored_fill

MAX_FRAME_BYTES = 64 * 1024 * 1024

NEEDLE_PPL = "NEEDLE_PPL"
FULL_PPL = "FULL_PPL"
_MODES = (NEEDLE_PPL, FULL_PPL)

_REQUEST_KEYS = (
    "request_id",
    "theta_base",
    "head_dim",
    "pretrained_len",
    "target_len",
    "lambdas",
    "corpus_ref",
    "mode",
)


@dataclass(frozen=True)
class EvalRequest:
    request_id: str
    config: RopeConfig
    lambdas: np.ndarray
    corpus_ref: str | list[dict]
    mode: str = NEEDLE_PPL

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        object.__setattr__(self, "lambdas", lam)
        if lam.shape != (self.config.n_cosine_dims,):
            raise LengthMismatchError(
                f"expected {self.config.n_cosine_dims} lambdas, got shape {lam.shape}"
            )
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class EvalResponse:
    request_id: str
    fitness: float | None
    per_sample: tuple[float, ...] = ()
    error: str | None = None


def encode_request(req: EvalRequest) -> bytes:
    doc = {
        "request_id": req.request_id,
        "theta_base": float(req.config.theta_base),
        "head_dim": req.config.head_dim,
        "pretrained_len": req.config.pretrained_len,
        "target_len": req.config.target_len,
        "lambdas": req.lambdas,
        "corpus_ref": req.corpus_ref,
        "mode": req.mode,
    }
    frame = (jsonutil.dumps(doc) + "\n").encode("utf-8")
    if len(frame) > MAX_FRAME_BYTES:
        raise MalformedFrameError("request frame exceeds 64 MiB", offset=MAX_FRAME_BYTES)
    return frame


def _parse_frame(data: bytes) -> dict:
    if len(data) > MAX_FRAME_BYTES:
        raise MalformedFrameError("frame exceeds 64 MiB", offset=MAX_FRAME_BYTES)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFrameError(f"invalid UTF-8: {exc.reason}", offset=exc.start) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFrameError(f"invalid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise MalformedFrameError("frame is not a JSON object")
    return doc


def decode_request(data: bytes) -> EvalRequest:
    """Parse a request frame; unknown keys are ignored for forward compatibility."""
    doc = _parse_frame(data)
    missing = [key for key in _REQUEST_KEYS if key not in doc]
    if missing:
        raise MalformedFrameError(f"request frame missing keys {missing}")
    try:
        config = RopeConfig(
            theta_base=float(doc["theta_base"]),
            head_dim=int(doc["head_dim"]),
            pretrained_len=int(doc["pretrained_len"]),
            target_len=int(doc["target_len"]),
        )
        return EvalRequest(
            request_id=str(doc["request_id"]),
            config=config,
            lambdas=np.asarray(doc["lambdas"], dtype=np.float64),
            corpus_ref=doc["corpus_ref"],
            mode=str(doc["mode"]),
        )
    except (ValueError, TypeError) as exc:
        raise MalformedFrameError(f"invalid request payload: {exc}") from exc


def encode_response(resp: EvalResponse) -> bytes:
    doc = {
        "request_id": resp.request_id,
        "fitness": None if resp.fitness is None else float(resp.fitness),
        "per_sample": list(resp.per_sample),
        "error": resp.error,
    }
    frame = (jsonutil.dumps(doc) + "\n").encode("utf-8")
    if len(frame) > MAX_FRAME_BYTES:
        raise MalformedFrameError("response frame exceeds 64 MiB", offset=MAX_FRAME_BYTES)
    return frame


def decode_response(data: bytes) -> EvalResponse:
    """Parse a response frame; unknown keys are ignored."""
    doc = _parse_frame(data)
    if "request_id" not in doc:
        raise MalformedFrameError("response frame missing request_id")
    fitness = doc.get("fitness")
    per_sample = doc.get("per_sample") or []
    try:
        return EvalResponse(
            request_id=str(doc["request_id"]),
            fitness=None if fitness is None else float(fitness),
            per_sample=tuple(float(v) for v in per_sample),
            error=doc.get("error"),
        )
    except (ValueError, TypeError) as exc:
        raise MalformedFrameError(f"invalid response payload: {exc}") from exc


# ---------------------------------------------------------------------------
# Surrogate evaluator


@dataclass(frozen=True)
class SurrogateSpec:
    """Deterministic fitness landscape with a known minimum.

    Fitness is squared distance to ``hidden_target`` plus a quadratic
    penalty for factors that dip below the extension ratio at or beyond the
    theoretical critical index, so out-of-range vectors always rank worse.
    """

    hidden_target: np.ndarray
    ood_penalty_weight: float = 10.0
    d_rcd_cos: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(
            self, "hidden_target", np.asarray(self.hidden_target, dtype=np.float64)
        )
        if self.ood_penalty_weight <= 0:
            raise ValueError("ood_penalty_weight must be positive")


def surrogate_evaluate(lambdas: np.ndarray, config: RopeConfig, spec: SurrogateSpec) -> float:
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.shape != spec.hidden_target.shape:
        raise LengthMismatchError(
            f"lambdas shape {lam.shape} != target shape {spec.hidden_target.shape}"
        )
    s_min = config.extension_ratio
    tcd = theoretical_critical_dimension(config).cosine_index
    distance = float(np.sum((lam - spec.hidden_target) ** 2))
    shortfall = np.maximum(0.0, s_min - lam[tcd:])
    penalty = float(spec.ood_penalty_weight * np.sum(shortfall**2))
    return distance + penalty


class SurrogateEvaluator:
    """Callable adapter over :func:`surrogate_evaluate` for the search loop."""

    def __init__(self, spec: SurrogateSpec):
        self.spec = spec

    def __call__(self, lambdas: np.ndarray, config: RopeConfig) -> float:
        return surrogate_evaluate(lambdas, config, self.spec)


def default_surrogate_spec(config: RopeConfig) -> SurrogateSpec:
    """A reproducible in-range target derived from the config alone.

    The split index is the middle of the candidate range and the tail ramps
    linearly across ``[1.25 s, 1.75 s]``; the result always validates as a
    feasible candidate.
    """
    indices = candidate_index_range(config)
    d_rcd = indices[len(indices) // 2]
    s_min = config.extension_ratio
    n_tail = config.n_cosine_dims - d_rcd
    if n_tail > 0:
        tail = np.linspace(1.25 * s_min, 1.75 * s_min, n_tail)
        anchor = float(tail[0])
    else:
        tail = np.empty(0)
        anchor = 1.5 * s_min
    head = ntk_anchored_fill(config, d_rcd, anchor)
    target = np.concatenate([head, tail])
    spec = SurrogateSpec(hidden_target=target, d_rcd_cos=d_rcd)
    problems = validate_candidate(Candidate(d_rcd_cos=d_rcd, lambdas=target), config)
    if problems:
        raise ValueError(f"internal: surrogate target infeasible: {problems}")
    return spec


# ---------------------------------------------------------------------------
# Transports and client


class SubprocessTransport:
    """Newline-delimited frames over a child process's standard streams."""

    def __init__(self, argv: Sequence[str]):
        self._proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
        )
        self._stdin: IO[bytes] = self._proc.stdin
        self._stdout: IO[bytes] = self._proc.stdout

    def send_line(self, frame: bytes) -> None:
        try:
            self._stdin.write(frame)
            self._stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise DisconnectedError("evaluator process closed its stdin") from exc

    def read_line(self) -> bytes:
        return self._stdout.readline()

    def close(self) -> None:
        for stream in (self._stdin, self._stdout):
            try:
                stream.close()
            except OSError:
                pass
        if self._proc.poll() is None:
            self._proc.terminate()
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class TcpTransport:
    """Newline-delimited frames over a TCP connection."""

    def __init__(self, host: str, port: int, connect_timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(None)
        self._reader = self._sock.makefile("rb")
        self._lock = threading.Lock()

    def send_line(self, frame: bytes) -> None:
        with self._lock:
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise DisconnectedError("evaluator socket closed") from exc

    def read_line(self) -> bytes:
        return self._reader.readline()

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()


class EvaluatorClient:
    """Demultiplexing client: many in-flight requests over one connection.

    A single reader thread parses inbound frames and files them by
    ``request_id``; requests block until their response lands or the
    deadline passes.  Frames for unknown ids are kept for late waiters; a
    malformed inbound frame is a fatal protocol violation and fails every
    pending request.
    """

    def __init__(self, transport):
        self._transport = transport
        self._lock = threading.Condition()
        self._responses: dict[str, EvalResponse] = {}
        self._fault: Exception | None = None
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                line = self._transport.read_line()
            except Exception as exc:  # noqa: BLE001 - reader must never die silently
                self._set_fault(DisconnectedError(f"read failed: {exc}"))
                return
            if not line:
                self._set_fault(DisconnectedError("evaluator closed the stream"))
                return
            if line.strip() == b"":
                continue
            try:
                resp = decode_response(line)
            except MalformedFrameError as exc:
                self._set_fault(exc)
                return
            with self._lock:
                self._responses[resp.request_id] = resp
                self._lock.notify_all()

    def _set_fault(self, exc: Exception) -> None:
        with self._lock:
            if not self._closed and self._fault is None:
                self._fault = exc
            self._lock.notify_all()

    def request(self, req: EvalRequest, timeout: float | None = None) -> EvalResponse:
        """Send one request and wait for its matching response."""
        self._transport.send_line(encode_request(req))
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            while req.request_id not in self._responses:
                if self._fault is not None:
                    raise self._fault
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError(
                        f"no response for request {req.request_id!r} within {timeout}s"
                    )
                self._lock.wait(timeout=remaining)
            return self._responses.pop(req.request_id)

    def close(self) -> None:
        with self._lock:
            self._closed = True
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def remote_evaluate(endpoint, req: EvalRequest, timeout: float | None = None) -> EvalResponse:
    """One-shot request against a transport, client, or ``host:port`` string."""
    if isinstance(endpoint, EvaluatorClient):
        return endpoint.request(req, timeout=timeout)
    if isinstance(endpoint, str):
        host, _, port = endpoint.rpartition(":")
        transport = TcpTransport(host, int(port))
    elif isinstance(endpoint, (list, tuple)):
        transport = SubprocessTransport(endpoint)
    else:
        transport = endpoint
    with EvaluatorClient(transport) as client:
        return client.request(req, timeout=timeout)


class RemoteEvaluator:
    """Adapter exposing a protocol client as a search fitness function.

    Request ids are drawn from a private counter; responses are matched by
    id, so concurrent fitness calls from one search iteration are safe.
    """

    def __init__(
        self,
        client: EvaluatorClient,
        corpus_ref: str | list[dict],
        mode: str = NEEDLE_PPL,
        timeout: float | None = 600.0,
    ):
        self._client = client
        self._corpus_ref = corpus_ref
        self._mode = mode
        self._timeout = timeout
        self._counter = itertools.count()
        self._counter_lock = threading.Lock()

    def __call__(self, lambdas: np.ndarray, config: RopeConfig) -> float:
        with self._counter_lock:
            request_id = f"eval-{next(self._counter):08d}"
        req = EvalRequest(
            request_id=request_id,
            config=config,
            lambdas=lambdas,
            corpus_ref=self._corpus_ref,
            mode=self._mode,
        )
        try:
            resp = self._client.request(req, timeout=self._timeout)
        except (TimeoutError, DisconnectedError, MalformedFrameError) as exc:
            raise EvaluatorFailure(f"remote evaluation failed: {exc}") from exc
        if resp.error:
            raise EvaluatorFailure(f"evaluator error: {resp.error}")
        if resp.fitness is None:
            raise EvaluatorFailure("evaluator returned no fitness and no error")
        return resp.fitness
