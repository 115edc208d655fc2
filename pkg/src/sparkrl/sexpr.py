"""S-expression parsing and serialization for the SimSpark wire dialect.

The dialect is deliberately small: atoms are raw byte strings (no quoting,
escapes, or comments) and lists nest. Numbers stay as text atoms at this
layer; numeric interpretation happens in the protocol layer.
"""

from __future__ import annotations

import re
from typing import TypeAlias

SExpr: TypeAlias = "bytes | list[SExpr]"

MAX_DEPTH = 64
MAX_ATOM_LEN = 256


class SExprError(ValueError):
    """Malformed S-expression input. ``pos`` is a byte offset."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (byte {pos})")
        self.pos = pos


class UnbalancedParens(SExprError):
    pass


class DepthExceeded(SExprError):
    pass


class TrailingGarbage(SExprError):
    pass


class AtomTooLong(SExprError):
    pass


# Atoms are any run of bytes that is not a paren, whitespace, or NUL.
_TOKEN = re.compile(rb"[()]|[^()\s\x00]+|\s+")
_ATOM_OK = re.compile(rb"\A[^()\s\x00]{1,%d}\Z" % MAX_ATOM_LEN)


def parse(data: bytes, max_depth: int = MAX_DEPTH) -> list[SExpr]:
    """Parse a concatenation of S-expressions into a list of trees.

    Bare atoms are accepted at the top level. Raises UnbalancedParens,
    DepthExceeded, TrailingGarbage, or AtomTooLong; never anything else.
    """
    out: list[SExpr] = []
    stack: list[list[SExpr]] = []
    pos = 0
    for m in _TOKEN.finditer(data):
        if m.start() != pos:
            raise TrailingGarbage("byte not valid in any token", pos)
        pos = m.end()
        tok = m.group()
        head = tok[0]
        if head == 0x28:  # (
            if len(stack) >= max_depth:
                raise DepthExceeded(f"nesting deeper than {max_depth}", m.start())
            new: list[SExpr] = []
            if stack:
                stack[-1].append(new)
            stack.append(new)
        elif head == 0x29:  # )
            if not stack:
                raise UnbalancedParens("unexpected ')'", m.start())
            done = stack.pop()
            if not stack:
                out.append(done)
        elif tok.isspace():
            continue
        else:
            if len(tok) > MAX_ATOM_LEN:
                raise AtomTooLong(f"atom longer than {MAX_ATOM_LEN} bytes", m.start())
            if stack:
                stack[-1].append(tok)
            else:
                out.append(tok)
    if pos != len(data):
        raise TrailingGarbage("byte not valid in any token", pos)
    if stack:
        raise UnbalancedParens(f"{len(stack)} unclosed '('", len(data))
    return out


def serialize(expr: SExpr) -> bytes:
    """Serialize one tree to canonical form.

    Canonical form: single space between siblings, no space adjacent to
    parens. ``parse(serialize(e)) == [e]`` for every valid tree.
    """
    parts: list[bytes] = []
    _write(expr, parts, 0)
    return b"".join(parts)


def _write(expr: SExpr, parts: list[bytes], depth: int) -> None:
    if isinstance(expr, bytes):
        if not _ATOM_OK.match(expr):
            raise ValueError(f"invalid atom: {expr!r}")
        parts.append(expr)
    elif isinstance(expr, list):
        if depth >= MAX_DEPTH:
            raise ValueError(f"tree deeper than {MAX_DEPTH}")
        parts.append(b"(")
        for i, child in enumerate(expr):
            if i:
                parts.append(b" ")
            _write(child, parts, depth + 1)
        parts.append(b")")
    else:
        raise TypeError(f"not an S-expression node: {type(expr).__name__}")
