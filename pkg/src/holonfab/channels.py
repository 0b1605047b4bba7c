"""Publish/subscribe channels.

A channel is identified by "A.B.C.D:port".  Two transports exist:

* InProcHub — in-process, lossless, per-channel FIFO per publisher.  The
  default for tests and simulation.
* UdpTransport — one UDP socket per channel, datagram payload is the raw
  UTF-8 XML.  Best effort: loss and reordering are possible; reliability is
  the negotiation layer's problem.

Subscriber callbacks must only enqueue work (typically onto a resource's
event queue); they never run holon logic on the publisher's thread.
"""

from __future__ import annotations

import re
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    BadChannel,
    ChannelClosed,
    ChannelInUse,
    TransportUnavailable,
)

_OCTET_RE = re.compile(r"^(0|[1-9][0-9]{0,2})$")
_PORT_RE = re.compile(r"^[1-9][0-9]{0,4}$")


@dataclass(frozen=True, order=True)
class ChannelId:
    """A pub/sub address; renders as "A.B.C.D:port" and parses back exactly."""

    address: str
    port: int

    def __post_init__(self):
        parts = self.address.split(".")
        if len(parts) != 4 or not all(_OCTET_RE.match(p) and int(p) <= 255 for p in parts):
            raise BadChannel(f"bad address {self.address!r}")
        if not 1 <= self.port <= 65535:
            raise BadChannel(f"bad port {self.port}")

    @classmethod
    def parse(cls, text: str) -> "ChannelId":
        addr, sep, port = text.rpartition(":")
        if not sep or not _PORT_RE.match(port):
            raise BadChannel(f"bad channel {text!r}")
        return cls(addr, int(port))

    def render(self) -> str:
        return f"{self.address}:{self.port}"

    def __str__(self) -> str:
        return self.render()

    @property
    def is_multicast(self) -> bool:
        return 224 <= int(self.address.split(".")[0]) <= 239


@dataclass(frozen=True)
class Envelope:
    """One datagram: destination channel plus raw UTF-8 XML payload."""

    channel: ChannelId
    payload: bytes

    def __post_init__(self):
        if not self.payload:
            raise ValueError("empty payload")


Subscriber = Callable[[Envelope], None]


class Handle:
    """An open channel: publish to it, register any number of subscribers."""

    def __init__(self, transport, channel: ChannelId):
        self._transport = transport
        self.channel = channel
        self.closed = False

    def publish(self, payload: bytes | str) -> None:
        if self.closed:
            raise ChannelClosed(str(self.channel))
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        self._transport._publish(Envelope(self.channel, payload))

    def subscribe(self, callback: Subscriber) -> None:
        if self.closed:
            raise ChannelClosed(str(self.channel))
        self._transport._subscribe(self.channel, callback)

    def close(self) -> None:
        self.closed = True
        self._transport._close(self.channel)


class InProcHub:
    """Lossless in-process transport.

    publish() fans out synchronously to every subscriber callback, so
    per-channel order per publisher is exactly the publish order.  An
    optional tap sees every delivered envelope (delivery instrumentation).
    """

    def __init__(self):
        self._subs: dict[ChannelId, list[Subscriber]] = {}
        self._claimed: set[ChannelId] = set()
        self.tap: Subscriber | None = None
        self.delivered = 0

    def open(self, channel: ChannelId) -> Handle:
        self._subs.setdefault(channel, [])
        return Handle(self, channel)

    def claim(self, channel: ChannelId) -> Handle:
        """Open a channel as an exclusive inbox owner."""
        if channel in self._claimed:
            raise ChannelInUse(str(channel))
        self._claimed.add(channel)
        return self.open(channel)

    def release(self, channel: ChannelId) -> None:
        self._claimed.discard(channel)

    def is_claimed(self, channel: ChannelId) -> bool:
        return channel in self._claimed

    def _publish(self, envelope: Envelope) -> None:
        for callback in list(self._subs.get(envelope.channel, ())):
            if self.tap is not None:
                self.tap(envelope)
            self.delivered += 1
            callback(envelope)

    def _subscribe(self, channel: ChannelId, callback: Subscriber) -> None:
        self._subs.setdefault(channel, []).append(callback)

    def _close(self, channel: ChannelId) -> None:
        self._subs.pop(channel, None)
        self._claimed.discard(channel)


class UdpTransport:
    """One UDP socket per channel; multicast groups joined when applicable."""

    def __init__(self, bind_host: str = ""):
        self._bind_host = bind_host
        self._sockets: dict[ChannelId, socket.socket] = {}
        self._subs: dict[ChannelId, list[Subscriber]] = {}
        self._threads: dict[ChannelId, threading.Thread] = {}
        self._claimed: set[ChannelId] = set()
        self._lock = threading.Lock()

    def open(self, channel: ChannelId) -> Handle:
        with self._lock:
            if channel not in self._sockets:
                self._sockets[channel] = self._make_socket(channel)
                self._subs.setdefault(channel, [])
        return Handle(self, channel)

    def claim(self, channel: ChannelId) -> Handle:
        with self._lock:
            if channel in self._claimed:
                raise ChannelInUse(str(channel))
            self._claimed.add(channel)
        return self.open(channel)

    def release(self, channel: ChannelId) -> None:
        with self._lock:
            self._claimed.discard(channel)

    def _make_socket(self, channel: ChannelId) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((self._bind_host, channel.port))
            if channel.is_multicast:
                mreq = struct.pack("4s4s",
                                   socket.inet_aton(channel.address),
                                   socket.inet_aton("0.0.0.0"))
                sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        except OSError as exc:
            sock.close()
            raise TransportUnavailable(f"{channel}: {exc}") from exc
        sock.settimeout(0.2)
        return sock

    def _publish(self, envelope: Envelope) -> None:
        sock = self._sockets.get(envelope.channel)
        if sock is None:
            raise ChannelClosed(str(envelope.channel))
        sock.sendto(envelope.payload,
                    (envelope.channel.address, envelope.channel.port))

    def _subscribe(self, channel: ChannelId, callback: Subscriber) -> None:
        with self._lock:
            self._subs.setdefault(channel, []).append(callback)
            if channel not in self._threads:
                thread = threading.Thread(
                    target=self._reader, args=(channel,), daemon=True)
                self._threads[channel] = thread
                thread.start()

    def _reader(self, channel: ChannelId) -> None:
        sock = self._sockets.get(channel)
        while sock is not None and channel in self._sockets:
            try:
                data, _ = sock.recvfrom(65507)
            except socket.timeout:
                continue
            except OSError:
                return
            if not data:
                continue
            envelope = Envelope(channel, data)
            for callback in list(self._subs.get(channel, ())):
                callback(envelope)

    def _close(self, channel: ChannelId) -> None:
        with self._lock:
            sock = self._sockets.pop(channel, None)
            self._subs.pop(channel, None)
            self._threads.pop(channel, None)
            self._claimed.discard(channel)
        if sock is not None:
            sock.close()

    def close_all(self) -> None:
        for channel in list(self._sockets):
            self._close(channel)


def open_channel(transport, channel: ChannelId) -> Handle:
    """Open `channel` on the given transport (InProcHub or UdpTransport)."""
    return transport.open(channel)
