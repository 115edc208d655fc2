"""Utilities shared across test files (not collected by pytest)."""

import socket

import numpy as np

# -- port discipline ---------------------------------------------------------
# Tests that open sockets draw a disjoint 16-port block each (conftest's
# port_block fixture) so a crashed test cannot poison a neighbour's ports.
# Agent ports stay below 6000, keeping them clear of the monitor shadows
# at +1000. This lives here rather than in conftest because test modules
# import it by name and `import conftest` is ambiguous once a second
# test root (bindings/tests) has a conftest of its own.

PORT_BLOCK = 16
_allocated_bases: list[int] = []
_next_base = [5000]


def claim_port_block() -> int:
    base = _next_base[0]
    _next_base[0] += PORT_BLOCK
    _allocated_bases.append(base)
    return base


def allocated_bases() -> list[int]:
    return list(_allocated_bases)


def port_is_free(port: int) -> bool:
    s = socket.socket()
    s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        s.bind(("127.0.0.1", port))
    except OSError:
        return False
    finally:
        s.close()
    return True


def live_server_children() -> list[tuple[int, str]]:
    """Spawned child processes, ignoring multiprocessing's resource tracker
    (it legitimately lives until interpreter exit)."""
    import psutil

    out = []
    for child in psutil.Process().children(recursive=True):
        try:
            cmd = " ".join(child.cmdline())
        except (psutil.NoSuchProcess, psutil.ZombieProcess):
            cmd = "<zombie>"
        if "resource_tracker" in cmd:
            continue
        out.append((child.pid, cmd[:120]))
    return out

ATOM_BYTES = (
    b"abcdefghijklmnopqrstuvwxyz"
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    b"0123456789+-._*/<>=!?@#$%^&|~:,'"
)


def random_atom(rng: np.random.Generator, max_len: int = 24) -> bytes:
    n = int(rng.integers(1, max_len + 1))
    return bytes(ATOM_BYTES[i] for i in rng.integers(0, len(ATOM_BYTES), size=n))


def random_tree(rng: np.random.Generator, depth: int = 0):
    """Random S-expression tree: atoms get likelier with depth, hard stop at 8."""
    if depth >= 8 or rng.random() < 0.4 + 0.07 * depth:
        return random_atom(rng)
    return [random_tree(rng, depth + 1) for _ in range(int(rng.integers(0, 5)))]


class ChunkSock:
    """Socket stand-in that serves a byte string in fixed-size recv chunks,
    then EOF. chunk=1 exercises worst-case fragmentation."""

    def __init__(self, data: bytes, chunk: int = 1):
        self.data = data
        self.off = 0
        self.chunk = chunk

    def recv(self, n: int) -> bytes:
        take = min(n, self.chunk, len(self.data) - self.off)
        out = self.data[self.off : self.off + take]
        self.off += take
        return out


# Deterministic kick for the 4-joint leg set: hip pitch + ankle at full speed
# for a few cycles, then hold. Lands the foot on the ball around cycle 6.
SWING_STEPS = 8


def scripted_kick_action(step: int) -> np.ndarray:
    if step < SWING_STEPS:
        return np.array([0.0, 1.0, 0.0, 1.0])
    return np.zeros(4)


def run_cli(argv) -> int:
    from sparkrl import cli

    return cli.main(list(argv))


def gae_brute_force(rewards, values, dones, bootstrap, gamma, lam):
    """O(T^2) expansion of the advantage definition, one env at a time."""
    T = len(rewards)
    vals = list(values) + [bootstrap]
    out = np.zeros(T)
    for t in range(T):
        coef = 1.0
        total = 0.0
        for l in range(t, T):
            delta = rewards[l] + gamma * vals[l + 1] * (0.0 if dones[l] else 1.0) - vals[l]
            total += coef * delta
            if dones[l]:
                break
            coef *= gamma * lam
        out[t] = total
    return out
