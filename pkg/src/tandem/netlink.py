"""Preceptor -> trainee link: frame codec, receiver state, channel simulator.

Frame layout (28 bytes, little-endian)::

    0  2s  magic 0x54 0x4C ("TL")
    2  B   version
    3  I   seq
    7  Q   t_send_us
    15 i   wheel1 centidegrees
    19 i   wheel2 centidegrees
    23 B   flags (bit 0 = enable switch)
    24 I   CRC-32 over bytes 0..23

Centidegrees make the 0.02 deg onset threshold exactly 2 units. The receiver
holds the last accepted frame; anything with a sequence number not greater
than the last accepted one is dropped.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import AngleOverflow, BadCrc, BadLength, BadMagic, BadVersion, ConfigError, FrameError
from .kinematics import WheelReading

log = logging.getLogger(__name__)

MAGIC = b"TL"
VERSION = 1
DEFAULT_PORT = 47700
_BODY = struct.Struct("<2sBIQiiB")
_CRC = struct.Struct("<I")
FRAME_SIZE = _BODY.size + _CRC.size
assert FRAME_SIZE == 28

FLAG_ENABLE = 0x01
_I32_MIN, _I32_MAX = -(2 ** 31), 2 ** 31 - 1


class Frame(NamedTuple):
    seq: int
    t_send_us: int
    wheel1_centideg: int
    wheel2_centideg: int
    flags: int = 0
    version: int = VERSION

    @property
    def enable(self) -> bool:
        return bool(self.flags & FLAG_ENABLE)

    @property
    def reading(self) -> WheelReading:
        return WheelReading(self.wheel1_centideg / 100.0, self.wheel2_centideg / 100.0)


def to_centideg(angle_deg: float) -> int:
    if not math.isfinite(angle_deg):
        raise AngleOverflow(f"non-finite angle {angle_deg!r}")
    c = int(round(angle_deg * 100.0))
    if not _I32_MIN <= c <= _I32_MAX:
        raise AngleOverflow(f"{angle_deg} deg does not fit a signed 32-bit centidegree field")
    return c


def pack_frame(frame: Frame) -> bytes:
    body = _BODY.pack(MAGIC, frame.version, frame.seq, frame.t_send_us,
                      frame.wheel1_centideg, frame.wheel2_centideg, frame.flags)
    return body + _CRC.pack(zlib.crc32(body))


def encode_frame(reading, seq: int, t_us: int, enable: bool) -> bytes:
    return pack_frame(Frame(seq, t_us, to_centideg(reading[0]), to_centideg(reading[1]),
                            FLAG_ENABLE if enable else 0))


def decode_frame(data: bytes) -> Frame:
    """Validate and unpack one datagram.

    Length is checked first, then the CRC, then magic and version, so every
    single-bit corruption surfaces as BadCrc.
    """
    if len(data) != FRAME_SIZE:
        raise BadLength(f"frame is {len(data)} bytes, expected {FRAME_SIZE}")
    body = bytes(data[:_BODY.size])
    (crc,) = _CRC.unpack_from(data, _BODY.size)
    if zlib.crc32(body) != crc:
        raise BadCrc("CRC mismatch")
    magic, version, seq, t_us, w1, w2, flags = _BODY.unpack(body)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported frame version {version}")
    return Frame(seq, t_us, w1, w2, flags, version)


# -- receiver ------------------------------------------------------------------

class LinkStatus(enum.Enum):
    FRESH = "Fresh"
    DEGRADED = "Degraded"


@dataclass(frozen=True)
class LinkState:
    last_seq_accepted: int = -1
    last_frame: Optional[Frame] = None
    last_rx_time_us: Optional[int] = None
    staleness_timeout_us: int = 100_000
    dropped: int = 0


def rx_update(link: LinkState, frame: Frame, now_us: int):
    """Accept ``frame`` iff its seq is newer than anything accepted so far."""
    if frame.seq <= link.last_seq_accepted:
        return replace(link, dropped=link.dropped + 1), False
    return replace(link, last_seq_accepted=frame.seq, last_frame=frame, last_rx_time_us=now_us), True


def staleness_check(link: LinkState, now_us: int) -> LinkStatus:
    if link.last_rx_time_us is None or now_us - link.last_rx_time_us > link.staleness_timeout_us:
        return LinkStatus.DEGRADED
    return LinkStatus.FRESH


class Mailbox:
    """Single-slot latest-value mailbox; writers overwrite, readers snapshot."""

    def __init__(self, value=None):
        self._lock = threading.Lock()
        self._value = value

    def put(self, value):
        with self._lock:
            self._value = value

    def snapshot(self):
        with self._lock:
            return self._value


# -- channel impairment --------------------------------------------------------

@dataclass(frozen=True)
class ChannelConfig:
    loss_prob: float = 0.0
    jitter_mean_ms: float = 0.0
    jitter_std_ms: float = 0.0
    reorder_prob: float = 0.0
    seed: int = 0
    # (start_us, end_us) windows in which every frame is lost
    outages: tuple = ()

    def __post_init__(self):
        for name in ("loss_prob", "reorder_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p!r}", key=name)
        if self.jitter_std_ms < 0:
            raise ConfigError("jitter_std_ms must be >= 0", key="jitter_std_ms")


class Channel:
    """Virtual-time lossy datagram channel, deterministic under a fixed seed.

    Every send consumes exactly three draws (loss, jitter, reorder) so the
    random stream does not depend on earlier outcomes.
    """

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self._rng = np.random.default_rng(cfg.seed)
        self._heap = []  # (deliver_at_us, order, payload)
        self._order = 0

    def impair(self, frame: bytes, now_us: int):
        """Schedule one send; returns the new deliveries ``[(deliver_at_us, frame)]``.

        On reorder the new frame swaps delivery time with the latest frame
        still in flight.
        """
        cfg = self.cfg
        u_loss, z, u_reorder = self._rng.random(), self._rng.standard_normal(), self._rng.random()
        if u_loss < cfg.loss_prob or any(a <= now_us < b for a, b in cfg.outages):
            return []
        delay_ms = max(0.0, cfg.jitter_mean_ms + cfg.jitter_std_ms * z)
        deliver_at = now_us + int(round(delay_ms * 1000.0))
        if u_reorder < cfg.reorder_prob and self._heap:
            j = max(range(len(self._heap)), key=lambda k: self._heap[k][1])
            prev_at, prev_order, prev_payload = self._heap[j]
            self._heap[j] = (deliver_at, prev_order, prev_payload)
            heapq.heapify(self._heap)
            deliver_at = prev_at
        self._order += 1
        heapq.heappush(self._heap, (deliver_at, self._order, frame))
        return [(deliver_at, frame)]

    def send(self, frame: bytes, now_us: int):
        self.impair(frame, now_us)

    def poll(self, now_us: int):
        out = []
        while self._heap and self._heap[0][0] <= now_us:
            out.append(heapq.heappop(self._heap)[2])
        return out


def receive_datagrams(link: LinkState, datagrams, now_us: int):
    """Decode and apply a batch of datagrams; corrupt ones are logged and dropped."""
    for data in datagrams:
        try:
            frame = decode_frame(data)
        except FrameError as exc:
            log.debug("dropping datagram: %s", exc)
            link = replace(link, dropped=link.dropped + 1)
            continue
        link, _ = rx_update(link, frame, now_us)
    return link


# -- transports ----------------------------------------------------------------

class VirtualLink:
    """In-process endpoint: a preceptor source sending through a Channel.

    ``source(tick, t_us) -> (WheelReading, enable)`` produces what the
    preceptor device would transmit on each tick.
    """

    def __init__(self, source, channel: Optional[Channel] = None, staleness_timeout_us: int = 100_000):
        self.source = source
        self.channel = channel if channel is not None else Channel(ChannelConfig())
        self.link = LinkState(staleness_timeout_us=staleness_timeout_us)
        self._seq = 0

    def notify(self, events):
        notify = getattr(self.source, "notify", None)
        if notify is not None:
            notify(events)

    def snapshot(self, tick: int, now_us: int) -> LinkState:
        reading, enable = self.source(tick, now_us)
        self.channel.send(encode_frame(reading, self._seq, now_us, enable), now_us)
        self._seq += 1
        self.link = receive_datagrams(self.link, self.channel.poll(now_us), now_us)
        return self.link


class UdpReceiver:
    """Background UDP receiver feeding a latest-value mailbox.

    Receive times are microseconds since ``start()`` on the monotonic clock,
    matching the paced virtual time of the control loop.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 staleness_timeout_us: int = 100_000):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind((host, port))
        except OSError:
            self.sock.close()
            raise
        self.sock.settimeout(0.05)
        self.address = self.sock.getsockname()
        self.mailbox = Mailbox(LinkState(staleness_timeout_us=staleness_timeout_us))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="tandem-rx", daemon=True)
        self._t0 = None

    def start(self, t0_ns: Optional[int] = None):
        self._t0 = time.monotonic_ns() if t0_ns is None else t0_ns
        self._thread.start()
        return self

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._t0) // 1000

    def _run(self):
        link = self.mailbox.snapshot()
        while not self._stop.is_set():
            try:
                data, _ = self.sock.recvfrom(64)
            except socket.timeout:
                continue
            except OSError:
                break
            link = receive_datagrams(link, [data], self.now_us())
            self.mailbox.put(link)

    def snapshot(self, tick: int, now_us: int) -> LinkState:
        return self.mailbox.snapshot()

    def close(self):
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=1.0)
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class UdpSender:
    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        self.target = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._seq = 0

    def send(self, reading, t_us: int, enable: bool):
        self.sock.sendto(encode_frame(reading, self._seq, t_us, enable), self.target)
        self._seq += 1

    def close(self):
        self.sock.close()
