"""In-process topic broker over TCP, plus a small client.

Wire format: every frame is a 4-byte big-endian length followed by that many
bytes of UTF-8 JSON.  Client ops are ``{"op": "sub", "topic"}`` and
``{"op": "pub", "topic", "payload"}``; the broker delivers
``{"op": "msg", "topic", "payload"}`` to every current subscriber of the
topic.  Nothing is persisted: a publish with no subscribers is dropped and
counted.  Frames over 16 MiB get an ``{"op": "error"}`` reply and the
connection is closed.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import struct
import threading
import time
from typing import Any

log = logging.getLogger(__name__)

MAX_FRAME = 16 * 1024 * 1024
_LEN = struct.Struct(">I")


class BrokerUnavailable(ConnectionError):
    pass


class FrameTooLarge(ValueError):
    pass


def encode_frame(obj: Any) -> bytes:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Any | None:
    """Next decoded frame, or None on a clean EOF."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise FrameTooLarge(f"incoming frame of {n} bytes exceeds {MAX_FRAME}")
    body = _recv_exact(sock, n)
    if body is None:
        return None
    return json.loads(body.decode("utf-8"))


class _Conn:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.lock = threading.Lock()
        self.alive = True

    def send(self, data: bytes) -> bool:
        with self.lock:
            if not self.alive:
                return False
            try:
                self.sock.sendall(data)
                return True
            except OSError:
                self.alive = False
                return False


class Broker:
    """Threaded pub/sub broker; one handler thread per connection."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._srv = socket.create_server((host, port))
        self.address: tuple[str, int] = self._srv.getsockname()[:2]
        self._subs: dict[str, list[_Conn]] = {}
        self._lock = threading.Lock()
        self._conns: set[_Conn] = set()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.published = 0
        self.delivered = 0
        self.dropped = 0

    def start(self) -> Broker:
        self._thread = threading.Thread(target=self.serve_forever, name="broker-accept", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._srv.settimeout(0.2)
        while not self._stop.is_set():
            try:
                sock, _ = self._srv.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Conn(sock)
            with self._lock:
                self._conns.add(conn)
            threading.Thread(target=self._handle, args=(conn,), name="broker-conn", daemon=True).start()

    def _handle(self, conn: _Conn) -> None:
        try:
            while not self._stop.is_set():
                try:
                    frame = read_frame(conn.sock)
                except FrameTooLarge as exc:
                    conn.send(encode_frame({"op": "error", "error": str(exc)}))
                    break
                except (ValueError, UnicodeDecodeError) as exc:
                    conn.send(encode_frame({"op": "error", "error": f"bad frame: {exc}"}))
                    break
                if frame is None:
                    break
                self._dispatch(conn, frame)
        except OSError:
            pass
        finally:
            self._drop_conn(conn)

    def subscriber_count(self, topic: str) -> int:
        with self._lock:
            return len(self._subs.get(topic, ()))

    def _dispatch(self, conn: _Conn, frame: Any) -> None:
        op = frame.get("op") if isinstance(frame, dict) else None
        if op == "sub" and isinstance(frame.get("topic"), str):
            with self._lock:
                subs = self._subs.setdefault(frame["topic"], [])
                if conn not in subs:
                    subs.append(conn)
        elif op == "pub" and isinstance(frame.get("topic"), str):
            topic = frame["topic"]
            data = encode_frame({"op": "msg", "topic": topic, "payload": frame.get("payload")})
            with self._lock:
                targets = list(self._subs.get(topic, ()))
                self.published += 1
                if not targets:
                    self.dropped += 1
            for target in targets:
                if target.send(data):
                    with self._lock:
                        self.delivered += 1
        else:
            conn.send(encode_frame({"op": "error", "error": f"unknown op {op!r}"}))

    def _drop_conn(self, conn: _Conn) -> None:
        with self._lock:
            self._conns.discard(conn)
            for subs in self._subs.values():
                if conn in subs:
                    subs.remove(conn)
        with conn.lock:
            conn.alive = False
        try:
            conn.sock.close()
        except OSError:
            pass

    def close(self) -> None:
        self._stop.set()
        try:
            self._srv.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns)
        for c in conns:
            try:
                c.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._drop_conn(c)
        if self._thread is not None:
            self._thread.join(timeout=2)

    def __enter__(self) -> Broker:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


class BrokerClient:
    """Blocking publisher plus a background reader that queues deliveries."""

    def __init__(self, host: str, port: int, timeout_s: float = 5.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout_s)
        except OSError as exc:
            raise BrokerUnavailable(f"cannot reach broker at {host}:{port}: {exc}") from exc
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._send_lock = threading.Lock()
        self.inbox: queue.Queue = queue.Queue()
        self.errors: list[str] = []
        self.closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name="broker-client", daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while True:
                frame = read_frame(self.sock)
                if frame is None:
                    break
                if frame.get("op") == "msg":
                    self.inbox.put((frame["topic"], frame["payload"]))
                elif frame.get("op") == "error":
                    self.errors.append(frame.get("error", ""))
        except (OSError, ValueError):
            pass
        finally:
            self.closed.set()

    def _send(self, obj: Any) -> None:
        data = encode_frame(obj)
        with self._send_lock:
            try:
                self.sock.sendall(data)
            except OSError as exc:
                self.closed.set()
                raise BrokerUnavailable(f"broker connection lost: {exc}") from exc

    def subscribe(self, topic: str) -> None:
        self._send({"op": "sub", "topic": topic})

    def publish(self, topic: str, payload: Any) -> None:
        self._send({"op": "pub", "topic": topic, "payload": payload})

    def recv(self, timeout: float | None = None) -> tuple[str, Any] | None:
        try:
            return self.inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(timeout=2)

    def __enter__(self) -> BrokerClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect_with_retry(
    host: str,
    port: int,
    initial_s: float = 0.05,
    cap_s: float = 2.0,
    max_attempts: int | None = None,
    stop: threading.Event | None = None,
) -> BrokerClient:
    """Connect, retrying with capped exponential backoff."""
    delay = initial_s
    attempt = 0
    while True:
        attempt += 1
        try:
            return BrokerClient(host, port)
        except BrokerUnavailable:
            if max_attempts is not None and attempt >= max_attempts:
                raise
            log.info("broker %s:%d unavailable, retrying in %.2fs", host, port, delay)
            if stop is not None:
                if stop.wait(delay):
                    raise BrokerUnavailable("stopped while waiting for broker") from None
            else:
                time.sleep(delay)
            delay = min(cap_s, delay * 2)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)
