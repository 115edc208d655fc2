"""Length-prefixed TCP framing and simulation-server lifecycle.

Every payload on the wire is preceded by a 4-byte unsigned big-endian length,
matching the real rcssserver3d agent protocol. Server processes come in three
kinds: an externally managed server we only connect to, a spawned OS process
running the real server binary, and the in-process mock simulator.
"""

from __future__ import annotations

import os
import socket
import struct
import subprocess
import threading
import time

FRAME_CAP = 1 << 20  # 1 MiB; real messages are well under 10 KiB
DEFAULT_AGENT_PORT = 3100
MONITOR_PORT_OFFSET = 1000
SERVER_BIN_ENV = "RCSS_SERVER_BIN"

KIND_EXTERNAL = "external"
KIND_REAL = "real"
KIND_MOCK = "mock"
SERVER_KINDS = (KIND_EXTERNAL, KIND_REAL, KIND_MOCK)


class WireError(Exception):
    pass


class EmptyPayload(WireError):
    pass


class ConnectionClosed(WireError):
    """Clean EOF at a frame boundary."""


class TruncatedFrame(WireError):
    """EOF in the middle of a frame."""


class OversizeFrame(WireError):
    pass


class PortInUse(WireError):
    pass


class SpawnFailed(WireError):
    pass


class SpawnTimeout(WireError):
    pass


def frame_encode(payload: bytes) -> bytes:
    if not payload:
        raise EmptyPayload("cannot frame an empty payload")
    return struct.pack(">I", len(payload)) + payload


def _recv_exact(sock, n: int) -> bytes | None:
    """Read exactly n bytes. None on clean EOF before the first byte;
    TruncatedFrame on EOF after a partial read. Tolerates any fragmentation."""
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise TruncatedFrame(f"EOF after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def frame_read(sock) -> bytes:
    """Read exactly one framed payload from a socket-like object."""
    prefix = _recv_exact(sock, 4)
    if prefix is None:
        raise ConnectionClosed("connection closed at frame boundary")
    (length,) = struct.unpack(">I", prefix)
    if length > FRAME_CAP:
        raise OversizeFrame(f"declared length {length} exceeds cap {FRAME_CAP}")
    if length == 0:
        raise TruncatedFrame("zero-length frame")
    body = _recv_exact(sock, length)
    if body is None:
        raise TruncatedFrame(f"EOF before {length}-byte body")
    return body


class Connection:
    """One framed TCP connection. Owned by a single logical caller; may be
    handed between threads but never used concurrently."""

    def __init__(self, sock: socket.socket, recorder=None):
        self.sock = sock
        self.recorder = recorder  # callable(direction, payload) or None

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0, recorder=None) -> "Connection":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock, recorder)

    def send_payload(self, payload: bytes) -> None:
        if self.recorder is not None:
            self.recorder("to_server", payload)
        self.sock.sendall(frame_encode(payload))

    def recv_payload(self) -> bytes:
        payload = frame_read(self.sock)
        if self.recorder is not None:
            self.recorder("from_server", payload)
        return payload

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


# In-process port bookkeeping. The kernel bind is the real gate against other
# processes; this set stops one process from handing the same base port to
# two live handles.
_ports_lock = threading.Lock()
_ports_in_use: set[int] = set()


def _claim_ports(*ports: int) -> None:
    with _ports_lock:
        for p in ports:
            if p in _ports_in_use:
                raise PortInUse(f"port {p} already claimed in this process")
        _ports_in_use.update(ports)


def _release_ports(*ports: int) -> None:
    with _ports_lock:
        _ports_in_use.difference_update(ports)


def ports_in_use() -> frozenset[int]:
    with _ports_lock:
        return frozenset(_ports_in_use)


class ServerHandle:
    """Handle to one simulation server; spawned handles own their process
    (or in-process mock) and must terminate it on close."""

    def __init__(self, kind: str, agent_port: int, monitor_port: int,
                 process: subprocess.Popen | None = None, mock=None):
        if agent_port == monitor_port:
            raise ValueError("agent and monitor ports must differ")
        self.kind = kind
        self.agent_port = agent_port
        self.monitor_port = monitor_port
        self.process = process
        self.mock = mock
        self._closed = False

    @property
    def process_id(self) -> int | None:
        return self.process.pid if self.process is not None else None

    def close(self) -> None:
        """Idempotent, best-effort teardown. External servers are untouched."""
        if self._closed:
            return
        self._closed = True
        if self.mock is not None:
            self.mock.stop()
        if self.process is not None:
            self.process.terminate()
            try:
                self.process.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()
        _release_ports(self.agent_port, self.monitor_port)

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _wait_for_port(port: int, process: subprocess.Popen, timeout: float) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if process.poll() is not None:
            raise SpawnFailed(f"server exited early with code {process.returncode}")
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=0.25):
                return
        except OSError:
            time.sleep(0.05)
    raise SpawnTimeout(f"server not accepting on port {port} within {timeout}s")


def spawn_server(kind: str, base_port: int = DEFAULT_AGENT_PORT, *,
                 binary: str | None = None, seed: int = 0,
                 timeout: float = 10.0) -> ServerHandle:
    """Start (or attach to) a simulation server.

    Environment i conventionally uses base_port + i; the monitor port is
    always agent port + 1000.
    """
    if kind not in SERVER_KINDS:
        raise ValueError(f"unknown server kind {kind!r}")
    agent_port = base_port
    monitor_port = base_port + MONITOR_PORT_OFFSET
    _claim_ports(agent_port, monitor_port)
    try:
        if kind == KIND_MOCK:
            from . import mockserver  # local import: mockserver uses this module

            mock = mockserver.MockServer(agent_port, monitor_port, seed=seed)
            mock.start()
            return ServerHandle(kind, agent_port, monitor_port, mock=mock)
        if kind == KIND_REAL:
            binary = binary or os.environ.get(SERVER_BIN_ENV)
            if not binary or not os.path.exists(binary):
                raise SpawnFailed(f"server binary not found: {binary!r}")
            try:
                process = subprocess.Popen(
                    [binary, "--agent-port", str(agent_port),
                     "--server-port", str(monitor_port)],
                    stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
                )
            except OSError as e:
                raise SpawnFailed(f"failed to start {binary!r}: {e}") from e
            handle = ServerHandle(kind, agent_port, monitor_port, process=process)
            try:
                _wait_for_port(agent_port, process, timeout)
            except WireError:
                handle.close()  # releases ports; the outer release is then a no-op
                raise
            return handle
        # external: nothing to start; we only connect later
        return ServerHandle(kind, agent_port, monitor_port)
    except BaseException:
        _release_ports(agent_port, monitor_port)
        raise


def close_server(handle: ServerHandle) -> None:
    handle.close()
