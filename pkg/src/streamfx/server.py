"""Network front end for streaming sessions.

One listener speaks two transports carrying identical JSON messages:

* raw TCP: each message is a big-endian 4-byte length prefix followed by one
  UTF-8 JSON object;
* WebSocket at path ``/stream``: one JSON object per text frame, no prefix.

Message types: ``init{window?, steps?, cfg_scale?, effect_label?,
reference_b64?}``, ``chunk{index, frames_b64, shape}``,
``condition{reference_b64?, effect_label?}`` and a bare ``stats{}`` request
from the client; ``result{index, frames_b64, chunk_ms}``, ``stats{...}`` and
``error{code, message}`` from the server. Frame payloads are raw
little-endian float32 tensors, base64-encoded. Each connection owns at most
one session; messages are processed strictly in arrival order, so the last
``condition`` before a ``chunk`` is the one that chunk sees.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import socket
import struct
import threading

import numpy as np

from .distill import CFG_SCALE, SHIFTED_SCHEDULE, uniform_schedule
from .engine import StreamSession
from .metrics import summarize_chunk_times
from .model import DenoiserConfig

__all__ = ["ProtocolError", "encode_frames", "decode_frames", "dumps_message",
           "loads_message", "validate_message", "schedule_for",
           "SessionHandler", "StreamServer", "read_frame", "write_frame",
           "MAX_FRAME_BYTES", "CLIENT_TYPES", "SERVER_TYPES"]

MAX_FRAME_BYTES = 1 << 26
CLIENT_TYPES = ("init", "chunk", "condition", "stats")
SERVER_TYPES = ("result", "stats", "error")
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class ProtocolError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---- payload codec -------------------------------------------------------------


def encode_frames(arr: np.ndarray) -> str:
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return base64.b64encode(data).decode("ascii")


def decode_frames(b64: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(b64.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError):
        raise ProtocolError("bad-payload", "frames_b64 is not valid base64")
    n = int(np.prod(shape)) if len(shape) else 1
    if len(raw) != 4 * n:
        raise ProtocolError("bad-payload",
                            f"payload holds {len(raw) // 4} floats, "
                            f"shape {tuple(shape)} needs {n}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def dumps_message(msg: dict) -> bytes:
    """Canonical wire bytes: sorted keys, no whitespace."""
    return json.dumps(msg, sort_keys=True, separators=(",", ":")).encode("utf-8")


def loads_message(payload: bytes) -> dict:
    try:
        msg = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError("bad-json", f"unparseable message: {e}")
    if not isinstance(msg, dict):
        raise ProtocolError("bad-json", "message must be a JSON object")
    return msg


def _require(msg: dict, field: str, kinds, where: str):
    if field not in msg:
        raise ProtocolError("bad-field", f"{where} requires {field!r}")
    value = msg[field]
    # bools are ints in Python but not on this wire
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise ProtocolError("bad-field", f"{where}.{field} has wrong type")
    return value


def _optional(msg: dict, field: str, kinds, where: str):
    return _require(msg, field, kinds, where) if field in msg else None


def validate_message(msg: dict) -> dict:
    """Shape-check one parsed message (either direction); returns it."""
    kind = msg.get("type")
    if not isinstance(kind, str):
        raise ProtocolError("bad-type", "missing message type")
    if kind == "init":
        w = _optional(msg, "window", int, "init")
        if w is not None and w < 1:
            raise ProtocolError("bad-field", "init.window must be >= 1")
        s = _optional(msg, "steps", int, "init")
        if s is not None and not 1 <= s <= 1000:
            raise ProtocolError("bad-field", "init.steps must be in [1, 1000]")
        g = _optional(msg, "cfg_scale", (int, float), "init")
        if g is not None and g < 0:
            raise ProtocolError("bad-field", "init.cfg_scale must be >= 0")
        _optional(msg, "effect_label", int, "init")
        _optional(msg, "reference_b64", str, "init")
    elif kind == "chunk":
        idx = _require(msg, "index", int, "chunk")
        if idx < 0:
            raise ProtocolError("bad-field", "chunk.index must be >= 0")
        _require(msg, "frames_b64", str, "chunk")
        shape = _require(msg, "shape", list, "chunk")
        if len(shape) != 4 or not all(isinstance(d, int) and d > 0 for d in shape):
            raise ProtocolError("bad-field",
                                "chunk.shape must be 4 positive ints")
    elif kind == "condition":
        _optional(msg, "reference_b64", str, "condition")
        _optional(msg, "effect_label", int, "condition")
    elif kind == "result":
        _require(msg, "index", int, "result")
        _require(msg, "frames_b64", str, "result")
        _require(msg, "chunk_ms", (int, float), "result")
    elif kind == "stats":
        pass  # summary payload is free-form; bare {} is the client request
    elif kind == "error":
        _require(msg, "code", str, "error")
        _require(msg, "message", str, "error")
    else:
        raise ProtocolError("bad-type", f"unknown message type {kind!r}")
    return msg


def schedule_for(steps: int):
    """4 steps is the pinned shifted schedule; anything else is uniform."""
    if steps == 4:
        return SHIFTED_SCHEDULE
    return uniform_schedule(steps)


# ---- per-connection state machine ----------------------------------------------


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


class SessionHandler:
    """Transport-independent message processor for one connection."""

    def __init__(self, params, cfg: DenoiserConfig):
        self.params = params
        self.cfg = cfg
        self.session: StreamSession | None = None

    def handle(self, msg: dict) -> list[dict]:
        try:
            validate_message(msg)
            kind = msg["type"]
            if kind not in CLIENT_TYPES:
                raise ProtocolError("bad-type",
                                    f"{kind!r} is a server-side message")
            return getattr(self, "_do_" + kind)(msg)
        except ProtocolError as e:
            return [_error(e.code, str(e))]
        except Exception as e:  # contract: a bad message never kills the server
            return [_error("internal", f"{type(e).__name__}: {e}")]

    def _frame_shape(self):
        cfg = self.cfg
        return (cfg.height, cfg.width, cfg.channels)

    def _decode_reference(self, msg: dict) -> np.ndarray | None:
        if "reference_b64" not in msg:
            return None
        return decode_frames(msg["reference_b64"], self._frame_shape())

    def _do_init(self, msg: dict) -> list[dict]:
        if self.session is not None:
            raise ProtocolError("bad-state", "session already initialized")
        cfg = self.cfg
        window = msg.get("window", cfg.window)
        if window > cfg.window:
            raise ProtocolError("bad-field",
                                f"window {window} exceeds model capacity "
                                f"{cfg.window}")
        steps = msg.get("steps", 4)
        guidance = float(msg.get("cfg_scale", CFG_SCALE))
        effect = msg.get("effect_label", 0)
        if not 0 <= effect < cfg.n_effects:
            raise ProtocolError("bad-field",
                                f"effect_label must be in [0, {cfg.n_effects})")
        ref = self._decode_reference(msg)
        if ref is None:
            ref = np.zeros(self._frame_shape(), dtype=np.float32)
        self.session = StreamSession(self.params, cfg, ref, effect,
                                     schedule=schedule_for(steps),
                                     guidance=guidance, window=window)
        return [{"type": "stats", "event": "ready", "window": window,
                 "steps": steps, "cfg_scale": guidance, "effect_label": effect,
                 "chunk_frames": cfg.chunk_frames, "height": cfg.height,
                 "width": cfg.width, "channels": cfg.channels, "chunks": 0}]

    def _session_or_raise(self) -> StreamSession:
        if self.session is None:
            raise ProtocolError("bad-state", "init must come first")
        return self.session

    def _do_chunk(self, msg: dict) -> list[dict]:
        session = self._session_or_raise()
        cfg = self.cfg
        want = (cfg.chunk_frames, cfg.height, cfg.width, cfg.channels)
        if tuple(msg["shape"]) != want:
            raise ProtocolError("bad-field",
                                f"chunk.shape {msg['shape']} != {list(want)}")
        if msg["index"] != session.chunk_index:
            raise ProtocolError("bad-index",
                                f"expected chunk {session.chunk_index}, "
                                f"got {msg['index']}")
        frames = decode_frames(msg["frames_b64"], want)
        out = session.push_chunk(frames)
        return [{"type": "result", "index": msg["index"],
                 "frames_b64": encode_frames(out),
                 "chunk_ms": session.chunk_times[-1] * 1000.0}]

    def _do_condition(self, msg: dict) -> list[dict]:
        session = self._session_or_raise()
        ref = self._decode_reference(msg)
        if "effect_label" in msg:
            effect = msg["effect_label"]
            if not 0 <= effect < self.cfg.n_effects:
                raise ProtocolError(
                    "bad-field",
                    f"effect_label must be in [0, {self.cfg.n_effects})")
            session.set_effect(effect)
        if ref is not None:
            session.set_reference(ref)
        return []

    def _do_stats(self, msg: dict) -> list[dict]:
        session = self._session_or_raise()
        out = {"type": "stats", "chunks": session.chunk_index,
               "effect_label": session.effect_id}
        if session.chunk_times:
            summary = summarize_chunk_times(session.chunk_times,
                                            self.cfg.chunk_frames, warmup=0)
            out.update(chunk_ms_mean=summary["chunk_ms_mean"],
                       chunk_ms_p95=summary["chunk_ms_p95"],
                       fps=summary["fps"])
        return [out]


# ---- binary transport ----------------------------------------------------------


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        part = sock.recv(n - len(buf))
        if not part:
            return None
        buf += part
    return buf


def read_frame(sock: socket.socket) -> bytes | None:
    """One length-prefixed payload; None on clean EOF."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack(">I", head)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError("bad-frame", f"frame of {length} bytes exceeds cap")
    body = _recv_exact(sock, length)
    if body is None:
        return None
    return body


def write_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack(">I", len(payload)) + payload)


# ---- websocket transport (RFC 6455, text frames only) --------------------------


def ws_accept_value(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _ws_read_message(sock: socket.socket) -> tuple[int, bytes] | None:
    """Returns (opcode, payload) of one complete message; None on EOF."""
    opcode, parts = None, []
    while True:
        head = _recv_exact(sock, 2)
        if head is None:
            return None
        fin = bool(head[0] & 0x80)
        op = head[0] & 0x0F
        masked = bool(head[1] & 0x80)
        length = head[1] & 0x7F
        if length == 126:
            ext = _recv_exact(sock, 2)
            if ext is None:
                return None
            (length,) = struct.unpack(">H", ext)
        elif length == 127:
            ext = _recv_exact(sock, 8)
            if ext is None:
                return None
            (length,) = struct.unpack(">Q", ext)
        if length > MAX_FRAME_BYTES:
            raise ProtocolError("bad-frame", "websocket frame exceeds cap")
        if not masked:
            # clients must mask; treat as a framing violation
            raise ProtocolError("bad-frame", "client frame is unmasked")
        mask = _recv_exact(sock, 4)
        if mask is None:
            return None
        body = _recv_exact(sock, length) if length else b""
        if body is None:
            return None
        data = bytes(b ^ mask[i % 4] for i, b in enumerate(body))
        if op != 0:  # first (or only) frame of a message
            opcode, parts = op, [data]
        else:
            parts.append(data)
        if fin:
            return opcode, b"".join(parts)


def _ws_write(sock: socket.socket, opcode: int, payload: bytes) -> None:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < (1 << 16):
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    sock.sendall(head + payload)


def _ws_handshake(sock: socket.socket, request: bytes) -> bool:
    try:
        head = request.decode("latin-1")
        lines = head.split("\r\n")
        method, path, _ = lines[0].split(" ", 2)
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()
    except (ValueError, IndexError):
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        return False
    if method != "GET" or path != "/stream":
        sock.sendall(b"HTTP/1.1 404 Not Found\r\n\r\nonly /stream is served")
        return False
    key = headers.get("sec-websocket-key")
    if key is None or headers.get("upgrade", "").lower() != "websocket":
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\nwebsocket upgrade required")
        return False
    sock.sendall(("HTTP/1.1 101 Switching Protocols\r\n"
                  "Upgrade: websocket\r\n"
                  "Connection: Upgrade\r\n"
                  f"Sec-WebSocket-Accept: {ws_accept_value(key)}\r\n"
                  "\r\n").encode("ascii"))
    return True


# ---- the server ----------------------------------------------------------------


class StreamServer:
    """One acceptor thread, one worker thread per connection."""

    def __init__(self, params, cfg: DenoiserConfig, host: str = "127.0.0.1",
                 port: int = 0):
        self.params = params
        self.cfg = cfg
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self.address = self._listener.getsockname()
        self._closed = False
        self._threads: list[threading.Thread] = []

    def start(self) -> "StreamServer":
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return  # listener closed
            threading.Thread(target=self._handle_connection, args=(conn,),
                             daemon=True).start()

    def close(self) -> None:
        self._closed = True
        self._listener.close()

    # -- connection handling

    def _handle_connection(self, conn: socket.socket) -> None:
        try:
            with conn:
                sniff = conn.recv(4, socket.MSG_PEEK)
                if not sniff:
                    return
                # a binary frame starting with 'G' would claim > 1 GB and be
                # rejected by the size cap anyway, so first-byte sniffing is safe
                if sniff.startswith(b"GET "[:len(sniff)]):
                    self._serve_websocket(conn)
                else:
                    self._serve_binary(conn)
        except (ProtocolError, OSError, ConnectionError):
            pass  # connection-local failure; the listener lives on

    def _serve_binary(self, conn: socket.socket) -> None:
        handler = SessionHandler(self.params, self.cfg)
        while True:
            try:
                payload = read_frame(conn)
            except ProtocolError as e:
                write_frame(conn, dumps_message(_error(e.code, str(e))))
                return  # oversized length: cannot resync, drop the connection
            if payload is None:
                return
            try:
                replies = handler.handle(loads_message(payload))
            except ProtocolError as e:  # bad JSON: reply and keep the stream
                replies = [_error(e.code, str(e))]
            for reply in replies:
                write_frame(conn, dumps_message(reply))

    def _serve_websocket(self, conn: socket.socket) -> None:
        request = b""
        while b"\r\n\r\n" not in request:
            part = conn.recv(4096)
            if not part:
                return
            request += part
            if len(request) > (1 << 16):
                conn.sendall(b"HTTP/1.1 431 Request Header Fields Too Large\r\n\r\n")
                return
        if not _ws_handshake(conn, request.split(b"\r\n\r\n", 1)[0]):
            return
        handler = SessionHandler(self.params, self.cfg)
        while True:
            got = _ws_read_message(conn)
            if got is None:
                return
            opcode, payload = got
            if opcode == 0x8:  # close
                _ws_write(conn, 0x8, payload[:2])
                return
            if opcode == 0x9:  # ping
                _ws_write(conn, 0xA, payload)
                continue
            if opcode not in (0x1, 0x2):
                continue
            try:
                replies = handler.handle(loads_message(payload))
            except ProtocolError as e:
                replies = [_error(e.code, str(e))]
            for reply in replies:
                _ws_write(conn, 0x1, dumps_message(reply))
