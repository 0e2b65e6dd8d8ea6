"""E3 user-plane streaming: wire format, pub/sub endpoint, rate accounting.

The framing is bit-exact and little-endian: a fixed 24-byte header
("E3P1" magic, type, flags, stream id, sequence, timestamp, payload
length) followed by a typed payload. I/Q grids travel as interleaved
int16 pairs (4 bytes per sample), CIR snapshots as interleaved float32.

The default transport is in-process fan-out queues (dApps are co-located
with the DU); the same frames can be shipped over any byte stream via
encode()/FrameReader.
"""

from __future__ import annotations

import json
import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .waveform import CirSnapshot, ResourceGrid

MAGIC = b"E3P1"
HEADER_LEN = 24
_HEADER = struct.Struct("<4sBBHIQI")
MAX_PAYLOAD = 2 ** 32 - 1

IQ_SCALE = 2048.0  # int16 quantization: full scale at |x| = 16


class MsgType(IntEnum):
    SUBSCRIBE = 1
    SUB_ACK = 2
    IQ_GRID = 3
    CIR_FRAME = 4
    REPORT = 5
    KPM = 6
    UNSUBSCRIBE = 7
    ERROR = 8


_STREAM_KINDS = {"iq": 1, "cir": 2, "kpm": 3}
_STREAM_KIND_NAMES = {v: k for k, v in _STREAM_KINDS.items()}


class E3Error(Exception):
    pass


class PayloadTooLarge(E3Error):
    pass


class E3DecodeError(E3Error):
    """Decode failure; offset is the first offending byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class BadMagic(E3DecodeError):
    pass


class Truncated(E3DecodeError):
    def __init__(self, message: str, offset: int, expected: int, actual: int):
        super().__init__(f"{message}: expected {expected} bytes, got {actual}",
                         offset)
        self.expected = expected
        self.actual = actual


class UnknownType(E3DecodeError):
    pass


class LengthMismatch(E3DecodeError):
    pass


class Rejected(E3Error):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class E3Header:
    msg_type: int
    stream_id: int
    seq: int
    timestamp_ns: int = 0
    flags: int = 0


@dataclass(frozen=True)
class Subscribe:
    kind: str  # "iq" | "cir" | "kpm"
    params: dict = field(default_factory=dict)

    msg_type = MsgType.SUBSCRIBE

    def to_bytes(self) -> bytes:
        return bytes([_STREAM_KINDS[self.kind]]) + json.dumps(
            self.params, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class SubAck:
    stream_id: int

    msg_type = MsgType.SUB_ACK

    def to_bytes(self) -> bytes:
        return struct.pack("<H", self.stream_id)


@dataclass
class IqGrid:
    """Quantized I/Q grid payload: (n*m, 2) int16, subcarrier-major."""

    n: int
    m: int
    iq: np.ndarray

    msg_type = MsgType.IQ_GRID

    def __post_init__(self):
        self.iq = np.ascontiguousarray(self.iq, dtype=np.int16)
        if self.iq.shape != (self.n * self.m, 2):
            raise ValueError(f"iq shape {self.iq.shape} != ({self.n * self.m}, 2)")

    def to_bytes(self) -> bytes:
        return struct.pack("<HH", self.n, self.m) + self.iq.tobytes()

    def __eq__(self, other):
        return (isinstance(other, IqGrid) and self.n == other.n
                and self.m == other.m and np.array_equal(self.iq, other.iq))


@dataclass
class CirFrame:
    """CIR snapshot payload: K complex64 values plus the snapshot index."""

    k: int
    snapshot_index: int
    samples: np.ndarray

    msg_type = MsgType.CIR_FRAME

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.complex64)
        if self.samples.shape != (self.k,):
            raise ValueError(f"samples shape {self.samples.shape} != ({self.k},)")

    def to_bytes(self) -> bytes:
        return struct.pack("<HH", self.k, self.snapshot_index) + \
            self.samples.view(np.float32).tobytes()

    def __eq__(self, other):
        return (isinstance(other, CirFrame) and self.k == other.k
                and self.snapshot_index == other.snapshot_index
                and np.array_equal(self.samples.view(np.float32),
                                   other.samples.view(np.float32)))


@dataclass(frozen=True)
class Report:
    """Structured detection report (JSON-serializable body)."""

    body: dict

    msg_type = MsgType.REPORT

    def to_bytes(self) -> bytes:
        return json.dumps(self.body, sort_keys=True,
                          separators=(",", ":")).encode()


@dataclass(frozen=True)
class Kpm:
    metrics: tuple  # ((metric_id, value), ...)

    msg_type = MsgType.KPM

    def to_bytes(self) -> bytes:
        out = struct.pack("<H", len(self.metrics))
        for mid, val in self.metrics:
            out += struct.pack("<Hd", mid, val)
        return out


@dataclass(frozen=True)
class Unsubscribe:
    msg_type = MsgType.UNSUBSCRIBE

    def to_bytes(self) -> bytes:
        return b""


@dataclass(frozen=True)
class ErrorPayload:
    code: int
    text: str

    msg_type = MsgType.ERROR

    def to_bytes(self) -> bytes:
        return struct.pack("<H", self.code) + self.text.encode()


@dataclass
class E3Message:
    header: E3Header
    payload: object

    def __eq__(self, other):
        return (isinstance(other, E3Message) and self.header == other.header
                and self.payload == other.payload)


def encode(msg: E3Message) -> bytes:
    """Serialize one frame: 24-byte header + typed payload."""
    body = msg.payload.to_bytes()
    if len(body) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(body)} bytes exceeds u32")
    hdr = _HEADER.pack(MAGIC, int(msg.payload.msg_type), msg.header.flags,
                       msg.header.stream_id, msg.header.seq,
                       msg.header.timestamp_ns, len(body))
    return hdr + body


def _decode_payload(msg_type: int, body: bytes):
    n_body = len(body)
    if msg_type == MsgType.SUBSCRIBE:
        if n_body < 1:
            raise Truncated("subscribe payload", HEADER_LEN, 1, 0)
        kind = _STREAM_KIND_NAMES.get(body[0])
        if kind is None:
            raise UnknownType(f"unknown stream kind {body[0]}", HEADER_LEN)
        params = json.loads(body[1:].decode()) if n_body > 1 else {}
        return Subscribe(kind=kind, params=params)
    if msg_type == MsgType.SUB_ACK:
        if n_body != 2:
            raise LengthMismatch(f"sub-ack payload is {n_body} bytes, not 2",
                                 HEADER_LEN)
        return SubAck(stream_id=struct.unpack("<H", body)[0])
    if msg_type == MsgType.IQ_GRID:
        if n_body < 4:
            raise Truncated("iq-grid dims", HEADER_LEN, 4, n_body)
        n, m = struct.unpack("<HH", body[:4])
        if n_body != 4 + 4 * n * m:
            raise LengthMismatch(
                f"iq-grid {n}x{m} needs {4 + 4 * n * m} bytes, got {n_body}",
                HEADER_LEN)
        iq = np.frombuffer(body[4:], dtype="<i2").reshape(n * m, 2)
        return IqGrid(n=n, m=m, iq=iq.copy())
    if msg_type == MsgType.CIR_FRAME:
        if n_body < 4:
            raise Truncated("cir-frame dims", HEADER_LEN, 4, n_body)
        k, snap = struct.unpack("<HH", body[:4])
        if n_body != 4 + 8 * k:
            raise LengthMismatch(
                f"cir-frame K={k} needs {4 + 8 * k} bytes, got {n_body}",
                HEADER_LEN)
        flat = np.frombuffer(body[4:], dtype="<f4")
        return CirFrame(k=k, snapshot_index=snap,
                        samples=flat.copy().view(np.complex64))
    if msg_type == MsgType.REPORT:
        return Report(body=json.loads(body.decode()) if body else {})
    if msg_type == MsgType.KPM:
        if n_body < 2:
            raise Truncated("kpm count", HEADER_LEN, 2, n_body)
        count = struct.unpack("<H", body[:2])[0]
        if n_body != 2 + 10 * count:
            raise LengthMismatch(
                f"kpm with {count} metrics needs {2 + 10 * count} bytes, "
                f"got {n_body}", HEADER_LEN)
        metrics = tuple(struct.unpack("<Hd", body[2 + 10 * i:12 + 10 * i])
                        for i in range(count))
        return Kpm(metrics=metrics)
    if msg_type == MsgType.UNSUBSCRIBE:
        if n_body != 0:
            raise LengthMismatch(f"unsubscribe carries {n_body} payload bytes",
                                 HEADER_LEN)
        return Unsubscribe()
    if msg_type == MsgType.ERROR:
        if n_body < 2:
            raise Truncated("error code", HEADER_LEN, 2, n_body)
        return ErrorPayload(code=struct.unpack("<H", body[:2])[0],
                            text=body[2:].decode())
    raise UnknownType(f"unknown message type {msg_type}", 4)


def decode(data: bytes) -> E3Message:
    """Inverse of encode(); decode(encode(m)) == m for every valid m."""
    if len(data) < 4 or data[:4] != MAGIC:
        if data[:4] == MAGIC[:len(data)]:
            raise Truncated("header", len(data), HEADER_LEN, len(data))
        bad = next((i for i in range(min(4, len(data)))
                    if data[i] != MAGIC[i]), 0)
        raise BadMagic(f"bad magic {data[:4]!r}", bad)
    if len(data) < HEADER_LEN:
        raise Truncated("header", len(data), HEADER_LEN, len(data))
    magic, msg_type, flags, stream_id, seq, ts, payload_len = \
        _HEADER.unpack(data[:HEADER_LEN])
    if len(data) < HEADER_LEN + payload_len:
        raise Truncated("payload", len(data), HEADER_LEN + payload_len,
                        len(data))
    if len(data) > HEADER_LEN + payload_len:
        raise LengthMismatch(
            f"{len(data) - HEADER_LEN - payload_len} trailing bytes",
            HEADER_LEN + payload_len)
    payload = _decode_payload(msg_type, data[HEADER_LEN:HEADER_LEN + payload_len])
    return E3Message(header=E3Header(msg_type=msg_type, flags=flags,
                                     stream_id=stream_id, seq=seq,
                                     timestamp_ns=ts),
                     payload=payload)


class FrameReader:
    """Incremental frame extraction from a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[E3Message]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= HEADER_LEN:
            payload_len = struct.unpack_from("<I", self._buf, 20)[0]
            total = HEADER_LEN + payload_len
            if len(self._buf) < total:
                break
            out.append(decode(bytes(self._buf[:total])))
            del self._buf[:total]
        return out


def quantize_iq(samples: np.ndarray, scale: float = IQ_SCALE) -> np.ndarray:
    """Full-precision complex -> (n, 2) int16 wire samples."""
    flat = samples.reshape(-1, order="F") if samples.ndim == 2 else samples
    i = np.clip(np.round(flat.real * scale), -32768, 32767)
    q = np.clip(np.round(flat.imag * scale), -32768, 32767)
    return np.stack([i, q], axis=1).astype(np.int16)


def dequantize_iq(iq: np.ndarray, n: int, m: int,
                  scale: float = IQ_SCALE) -> np.ndarray:
    """(n*m, 2) int16 wire samples -> (n, m) complex grid."""
    flat = (iq[:, 0].astype(np.float64) + 1j * iq[:, 1]) / scale
    return flat.reshape((n, m), order="F")


def iq_grid_payload(grid: ResourceGrid, scale: float = IQ_SCALE) -> IqGrid:
    n, m = grid.samples.shape
    return IqGrid(n=n, m=m, iq=quantize_iq(grid.samples, scale))


def cir_frame_payload(snapshot: CirSnapshot) -> CirFrame:
    return CirFrame(k=snapshot.n_subcarriers,
                    snapshot_index=snapshot.snapshot_index,
                    samples=snapshot.freq_response.astype(np.complex64))


def payload_byte_size(payload) -> int:
    if isinstance(payload, IqGrid):
        return 4 + 4 * payload.n * payload.m
    if isinstance(payload, CirFrame):
        return 4 + 8 * payload.k
    return len(payload.to_bytes())


@dataclass
class StreamStats:
    bytes_sent: int
    frames_sent: int
    frames_dropped: int
    window_s: float
    payload_rate_mbps: float
    header_overhead_fraction: float


class StreamHandle:
    """One subscriber's view of a stream: a bounded drop-oldest queue."""

    def __init__(self, endpoint: "DuEndpoint", stream_id: int, kind: str,
                 capacity: int):
        self.endpoint = endpoint
        self.stream_id = stream_id
        self.kind = kind
        self._queue = deque()
        self._capacity = capacity
        self._lock = threading.Lock()
        self._seq = 0
        self.bytes_sent = 0
        self.frames_sent = 0
        self.frames_dropped = 0
        self.open = True

    def _push(self, payload, timestamp_ns: int):
        with self._lock:
            hdr = E3Header(msg_type=int(payload.msg_type),
                           stream_id=self.stream_id, seq=self._seq,
                           timestamp_ns=timestamp_ns)
            self._seq += 1
            if len(self._queue) >= self._capacity:
                self._queue.popleft()
                self.frames_dropped += 1
            self._queue.append(E3Message(header=hdr, payload=payload))
            self.frames_sent += 1
            self.bytes_sent += payload_byte_size(payload)

    def poll(self) -> E3Message | None:
        with self._lock:
            return self._queue.popleft() if self._queue else None

    def drain(self) -> list[E3Message]:
        with self._lock:
            out = list(self._queue)
            self._queue.clear()
            return out

    def close(self):
        self.open = False
        self.endpoint.unsubscribe(self)


class DuEndpoint:
    """Simulated DU-side E3 termination: per-kind streams with fan-out.

    One producer per kind; any number of independent subscribers, each
    with its own queue, sequence numbering, and drop accounting. A slow
    subscriber only ever loses its own frames.
    """

    def __init__(self, supported_kinds=("iq", "cir", "kpm"),
                 queue_capacity: int = 256):
        self.supported_kinds = tuple(supported_kinds)
        self.queue_capacity = queue_capacity
        self._subscribers: dict[str, list[StreamHandle]] = {}
        self._next_stream_id = 0
        self._lock = threading.Lock()

    def subscribe(self, kind: str, params: dict | None = None) -> StreamHandle:
        if kind not in _STREAM_KINDS:
            raise Rejected(f"unknown stream kind {kind!r}")
        if kind not in self.supported_kinds:
            raise Rejected(f"stream kind {kind!r} not offered by this DU")
        with self._lock:
            handle = StreamHandle(self, self._next_stream_id, kind,
                                  self.queue_capacity)
            self._next_stream_id += 1
            self._subscribers.setdefault(kind, []).append(handle)
        handle.sub_ack = E3Message(
            header=E3Header(msg_type=int(MsgType.SUB_ACK),
                            stream_id=handle.stream_id, seq=0),
            payload=SubAck(stream_id=handle.stream_id))
        return handle

    def unsubscribe(self, handle: StreamHandle):
        with self._lock:
            subs = self._subscribers.get(handle.kind, [])
            if handle in subs:
                subs.remove(handle)

    def publish(self, kind: str, payload, timestamp_ns: int = 0):
        """Deliver one frame to every current subscriber of the kind."""
        with self._lock:
            subs = list(self._subscribers.get(kind, []))
        for handle in subs:
            handle._push(payload, timestamp_ns)


def measure_rate(handle: StreamHandle, window_s: float) -> StreamStats:
    """Payload-only rate over the window, plus the header fraction."""
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    payload_bytes = handle.bytes_sent
    header_bytes = HEADER_LEN * handle.frames_sent
    total = payload_bytes + header_bytes
    return StreamStats(
        bytes_sent=payload_bytes,
        frames_sent=handle.frames_sent,
        frames_dropped=handle.frames_dropped,
        window_s=window_s,
        payload_rate_mbps=payload_bytes * 8 / window_s / 1e6,
        header_overhead_fraction=header_bytes / total if total else 0.0)
