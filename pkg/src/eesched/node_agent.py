"""Per-node frequency/core manager and its line-oriented control protocol.

Requests (one per line)::

    SETFREQ <mhz>   ->  CONFIRM | ERR <code> <message>
    STATUS          ->  STATUS <mhz> <watts> <tempC>
    PING            ->  PONG

The same ``NodeAgent`` object backs both the in-process simulator and the
TCP server used in integration tests.
"""
from __future__ import annotations

import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .profiles import DEFAULT_FREQ_SET

ERR_UNKNOWN_FREQUENCY = 400
ERR_BAD_REQUEST = 400
ERR_UNAVAILABLE = 503

BASE_TEMP_C = 35.0
TEMP_SPAN_C = 10.0


class AgentError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(f"ERR {code} {message}")
        self.code = code
        self.message = message


class InsufficientCoresError(Exception):
    pass


@dataclass
class NodeAgent:
    node_id: str
    total_cores: int
    freq_set: tuple[int, ...] = DEFAULT_FREQ_SET
    max_power_w: float = 65.0
    freq_mhz: int = 0
    power_w: float = 0.0
    core_map: dict[str, frozenset[int]] = field(default_factory=dict)
    available: bool = True
    power_fn: Optional[Callable[["NodeAgent"], float]] = field(default=None, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    def __post_init__(self):
        self.freq_set = tuple(sorted(self.freq_set))
        if not self.freq_mhz:
            self.freq_mhz = self.freq_set[0]
        if self.freq_mhz not in self.freq_set:
            raise ValueError(f"initial frequency {self.freq_mhz} not in P")
        self.refresh_power()

    def refresh_power(self) -> None:
        if self.power_fn is not None:
            self.power_w = self.power_fn(self)

    @property
    def temp_c(self) -> float:
        return BASE_TEMP_C + TEMP_SPAN_C * (self.power_w / self.max_power_w)

    def set_frequency(self, freq_mhz: int) -> str:
        with self._lock:
            if not self.available:
                raise AgentError(ERR_UNAVAILABLE, "agent-unavailable")
            if freq_mhz not in self.freq_set:
                raise AgentError(ERR_UNKNOWN_FREQUENCY, "unknown-frequency")
            self.freq_mhz = freq_mhz
            self.refresh_power()
            return "CONFIRM"

    def pin(self, container_id: str, core_count: int) -> frozenset[int]:
        """Give a container the lowest-numbered free cores."""
        if core_count < 1:
            raise ValueError("core_count must be >= 1")
        with self._lock:
            if container_id in self.core_map:
                raise ValueError(f"container {container_id} already pinned")
            taken = set().union(*self.core_map.values()) if self.core_map else set()
            free = [c for c in range(self.total_cores) if c not in taken]
            if len(free) < core_count:
                raise InsufficientCoresError(
                    f"{self.node_id}: {core_count} cores requested, {len(free)} free")
            cores = frozenset(free[:core_count])
            self.core_map[container_id] = cores
            return cores

    def unpin(self, container_id: str) -> None:
        with self._lock:
            self.core_map.pop(container_id, None)

    def rotate(self) -> dict[str, frozenset[int]]:
        """Shift every assignment one core up, wrapping, to spread heat across the die."""
        with self._lock:
            n = self.total_cores
            self.core_map = {cid: frozenset((c + 1) % n for c in cores)
                             for cid, cores in self.core_map.items()}
            return dict(self.core_map)

    def status(self) -> tuple[int, float, float]:
        with self._lock:
            return self.freq_mhz, self.power_w, self.temp_c

    def handle_line(self, line: str) -> str:
        """Answer one protocol request; never raises."""
        parts = line.strip().split()
        if not parts:
            return f"ERR {ERR_BAD_REQUEST} empty-request"
        cmd, args = parts[0].upper(), parts[1:]
        try:
            if cmd == "PING" and not args:
                return "PONG"
            if cmd == "STATUS" and not args:
                if not self.available:
                    raise AgentError(ERR_UNAVAILABLE, "agent-unavailable")
                freq, watts, temp = self.status()
                return f"STATUS {freq} {watts:.2f} {temp:.2f}"
            if cmd == "SETFREQ" and len(args) == 1:
                try:
                    freq = int(args[0])
                except ValueError:
                    return f"ERR {ERR_BAD_REQUEST} bad-frequency"
                return self.set_frequency(freq)
        except AgentError as exc:
            return str(exc)
        return f"ERR {ERR_BAD_REQUEST} bad-request"


class _Handler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def handle(self):
        agent: NodeAgent = self.server.agent
        for raw in self.rfile:
            try:
                line = raw.decode("ascii")
            except UnicodeDecodeError:
                reply = f"ERR {ERR_BAD_REQUEST} non-ascii"
            else:
                reply = agent.handle_line(line)
            self.wfile.write(reply.encode("ascii") + b"\n")
            self.wfile.flush()


class AgentServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, agent: NodeAgent, host: str = "127.0.0.1", port: int = 0):
        self.agent = agent
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name=f"agent-{self.agent.node_id}",
                             daemon=True)
        t.start()
        return t

    def __exit__(self, *exc):
        self.shutdown()
        return super().__exit__(*exc)


class AgentClient:
    """Blocking client; one outstanding request at a time."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self._sock.makefile("rb")

    def request(self, line: str) -> str:
        self._sock.sendall(line.encode("ascii") + b"\n")
        reply = self._rfile.readline()
        if not reply:
            raise ConnectionError("agent closed the connection")
        return reply.decode("ascii").rstrip("\n")

    def set_frequency(self, freq_mhz: int) -> str:
        return self.request(f"SETFREQ {freq_mhz}")

    def status(self) -> tuple[int, float, float]:
        parts = self.request("STATUS").split()
        if parts[0] == "ERR":
            raise AgentError(int(parts[1]), " ".join(parts[2:]))
        _, freq, watts, temp = parts
        return int(freq), float(watts), float(temp)

    def ping(self) -> str:
        return self.request("PING")

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(agent: NodeAgent, host: str = "127.0.0.1", port: int = 0) -> AgentServer:
    server = AgentServer(agent, host, port)
    server.start()
    return server


def make_agents(node_ids: Sequence[str], cores: int, freq_set: Sequence[int],
                max_power_w: float) -> dict[str, NodeAgent]:
    return {nid: NodeAgent(nid, cores, tuple(freq_set), max_power_w) for nid in node_ids}
