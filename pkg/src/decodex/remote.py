"""Remote backend client and server for the NDJSON logit protocol.

Wire format, one JSON document per line over any byte stream (stdio pipe or
TCP socket):

  server -> client  {"type": "hello", "vocab_size": N, "layers": L,
                     "hidden_dim": D, "max_ctx": M}
  client -> server  {"type": "step", "prefix": [ids],
                     "need_hidden": bool, "need_layers": [ints]}
  server -> client  {"type": "logits", "values": [...],
                     "hidden": optional, "layer_logits": optional map}

The hello is parsed tolerantly: `layers`, `hidden_dim`, `max_ctx`, `eos`,
`bos`, `tokens`, and `version` are all optional with conservative defaults
(no layer logits, no hidden states, unlimited context, eos = bos =
vocab_size - 1, synthesized surfaces). A `supports_layers: false` flag
forces the layer count to zero. The request schema has no field for
per-position context hidden states, so those are a declared capability gap
rather than a transport error.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from typing import Any, BinaryIO, Sequence

import numpy as np

from .lm import (
    Backend,
    BackendCapabilities,
    BackendError,
    CapabilityError,
    ContextLimitError,
    NO_NEEDS,
    StepNeeds,
    StepOutput,
    TransportError,
    Vocabulary,
)

PROTOCOL_VERSION = 1


class ProtocolError(BackendError):
    """The peer sent a message that violates the NDJSON logit protocol."""


def _parse_hello(doc: Any) -> tuple[Vocabulary, BackendCapabilities, int | None]:
    if not isinstance(doc, dict) or doc.get("type") != "hello":
        raise ProtocolError(f"expected hello message, got {doc!r}")
    version = doc.get("version", PROTOCOL_VERSION)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(
            f"protocol version mismatch: peer speaks {version!r},"
            f" this client speaks {PROTOCOL_VERSION}"
        )
    try:
        vocab_size = int(doc["vocab_size"])
    except (KeyError, TypeError, ValueError):
        raise ProtocolError("hello lacks a usable vocab_size") from None
    if vocab_size < 2:
        raise ProtocolError(f"vocab_size {vocab_size} too small")
    layers = int(doc.get("layers", 0) or 0)
    if doc.get("supports_layers") is False:
        layers = 0
    hidden_dim = int(doc.get("hidden_dim", 0) or 0)
    max_ctx = doc.get("max_ctx")
    max_ctx = int(max_ctx) if max_ctx else None
    eos = int(doc.get("eos", vocab_size - 1))
    bos = int(doc.get("bos", vocab_size - 1))
    tokens = doc.get("tokens")
    if tokens is None:
        tokens = tuple(f"t{i}" for i in range(vocab_size))
    else:
        tokens = tuple(str(t) for t in tokens)
        if len(tokens) != vocab_size:
            raise ProtocolError("hello tokens do not match vocab_size")
    vocab = Vocabulary(tokens=tokens, eos=eos, bos=bos)
    caps = BackendCapabilities(
        supports_hidden=hidden_dim > 0,
        supports_layers=layers > 0,
        layer_count=layers,
        hidden_dim=hidden_dim,
    )
    return vocab, caps, max_ctx


def _vector(raw: Any, length: int, what: str) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise ProtocolError(f"{what} is not a numeric vector") from None
    if arr.shape != (length,):
        raise ProtocolError(
            f"{what} has shape {arr.shape}, expected ({length},)"
        )
    return arr


class RemoteLm:
    """Backend proxy over one NDJSON connection.

    Requests are serialized with a lock, so a single RemoteLm is safe to
    share across sweep workers; each request/response pair is atomic with
    respect to other callers on the same connection.
    """

    def __init__(self, reader: BinaryIO, writer: BinaryIO, close=None) -> None:
        self._reader = reader
        self._writer = writer
        self._close = close
        self._lock = threading.Lock()
        try:
            line = self._reader.readline()
        except (OSError, socket.timeout) as exc:
            raise TransportError(f"handshake timeout or I/O failure: {exc}") from exc
        if not line:
            raise TransportError("peer closed the connection before hello")
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"hello is not valid JSON: {exc}") from exc
        self._vocab, self._caps, self.max_ctx = _parse_hello(doc)

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def embeddings(self) -> None:
        return None

    @property
    def capabilities(self) -> BackendCapabilities:
        return self._caps

    def step(self, prefix: Sequence[int], needs: StepNeeds = NO_NEEDS) -> StepOutput:
        prefix = [int(t) for t in prefix]
        if self.max_ctx is not None and len(prefix) > self.max_ctx:
            raise ContextLimitError(
                f"prefix length {len(prefix)} exceeds remote context {self.max_ctx}"
            )
        if needs.context_hiddens:
            raise CapabilityError(
                "remote protocol has no context-hidden-states request"
            )
        if needs.hidden and not self._caps.supports_hidden:
            raise CapabilityError("remote backend exposes no hidden states")
        if needs.layers:
            if not self._caps.supports_layers:
                raise CapabilityError("remote backend exposes no layer logits")
            for idx in needs.layers:
                if not 0 <= idx < self._caps.layer_count:
                    raise CapabilityError(
                        f"layer {idx} out of range [0, {self._caps.layer_count})"
                    )
        request = {
            "type": "step",
            "prefix": prefix,
            "need_hidden": bool(needs.hidden),
            "need_layers": list(needs.layers) if needs.layers else [],
        }
        with self._lock:
            try:
                self._writer.write(json.dumps(request).encode() + b"\n")
                self._writer.flush()
                line = self._reader.readline()
            except (OSError, socket.timeout) as exc:
                raise TransportError(f"remote step failed: {exc}") from exc
        if not line:
            raise TransportError("peer closed the connection mid-session")
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"response is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("type") != "logits":
            raise ProtocolError(f"expected logits message, got {doc!r}")
        values = _vector(doc.get("values"), self._vocab.size, "logits vector")
        hidden = None
        if needs.hidden:
            if doc.get("hidden") is None:
                raise ProtocolError("hidden requested but missing from response")
            hidden = _vector(doc["hidden"], self._caps.hidden_dim, "hidden vector")
        layer_logits = None
        if needs.layers:
            raw = doc.get("layer_logits")
            if not isinstance(raw, dict):
                raise ProtocolError("layer_logits requested but missing")
            layer_logits = {}
            for idx in needs.layers:
                if str(idx) not in raw:
                    raise ProtocolError(f"layer {idx} missing from response")
                layer_logits[idx] = _vector(
                    raw[str(idx)], self._vocab.size, f"layer {idx} logits"
                )
        return StepOutput(
            logits=values, final_hidden=hidden, layer_logits=layer_logits
        )

    def close(self) -> None:
        if self._close is not None:
            self._close()


def remote_lm_session(endpoint: str, timeout: float = 5.0) -> RemoteLm:
    """Connect to a `tcp://host:port` endpoint and complete the handshake."""
    if not endpoint.startswith("tcp://"):
        raise TransportError(f"unsupported endpoint: {endpoint!r}")
    hostport = endpoint[len("tcp://") :]
    host, sep, port_s = hostport.rpartition(":")
    if not sep or not host:
        raise TransportError(f"endpoint needs host and port: {endpoint!r}")
    try:
        port = int(port_s)
    except ValueError:
        raise TransportError(f"bad port in endpoint: {endpoint!r}") from None
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
    sock.settimeout(timeout)
    reader = sock.makefile("rb")
    writer = sock.makefile("wb")

    def close() -> None:
        reader.close()
        writer.close()
        sock.close()

    try:
        return RemoteLm(reader, writer, close=close)
    except BackendError:
        close()
        raise


# ---------------------------------------------------------------------------
# Server side


def hello_document(backend: Backend) -> dict[str, Any]:
    caps = backend.capabilities
    return {
        "type": "hello",
        "version": PROTOCOL_VERSION,
        "vocab_size": backend.vocab.size,
        "layers": caps.layer_count,
        "hidden_dim": caps.hidden_dim,
        "max_ctx": getattr(backend, "max_ctx", None),
        "eos": backend.vocab.eos,
        "bos": backend.vocab.bos,
        "tokens": list(backend.vocab.tokens),
    }


def serve_connection(backend: Backend, reader: BinaryIO, writer: BinaryIO) -> None:
    """Serve one client until it disconnects; hello first, then step loop."""
    writer.write(json.dumps(hello_document(backend)).encode() + b"\n")
    writer.flush()
    while True:
        line = reader.readline()
        if not line:
            return
        doc = json.loads(line)
        if not isinstance(doc, dict) or doc.get("type") != "step":
            return
        needs = StepNeeds(
            hidden=bool(doc.get("need_hidden")),
            layers=tuple(doc.get("need_layers") or ()),
        )
        out = backend.step([int(t) for t in doc["prefix"]], needs)
        # Zero probabilities are -inf logits; Python's json emits/accepts
        # -Infinity, so they survive the round trip bit-exactly.
        response: dict[str, Any] = {
            "type": "logits",
            "values": [float(v) for v in out.logits],
        }
        if out.final_hidden is not None:
            response["hidden"] = [float(v) for v in out.final_hidden]
        if out.layer_logits is not None:
            response["layer_logits"] = {
                str(idx): [float(v) for v in vec]
                for idx, vec in out.layer_logits.items()
            }
        writer.write(json.dumps(response).encode() + b"\n")
        writer.flush()


class BackendServer(socketserver.ThreadingTCPServer):
    """Loopback TCP server exposing one backend over the NDJSON protocol."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        served = backend

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                try:
                    serve_connection(served, self.rfile, self.wfile)
                except (OSError, ValueError, BackendError):
                    return

        super().__init__((host, port), Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread
