"""Line-delimited JSON framing shared by the environment server and agents.

One message per line, UTF-8, no trailing whitespace. Unknown keys are
ignored by both sides so either end can evolve independently. Message types:

    env -> agent   {"type":"obs","t":s,"features":[...],"reward":x|null,"done":b,"episode":n}
    agent -> env   {"type":"action","value":int|float|list}
    env -> agent   {"type":"episode_summary", ...summary fields..., "episode":n}
    either side    {"type":"error","msg":"..."}
"""

from __future__ import annotations

import json
import socket
from typing import BinaryIO


class ProtocolError(Exception):
    pass


def encode_message(message: dict) -> bytes:
    return json.dumps(message, separators=(",", ":"), allow_nan=False).encode() + b"\n"


def decode_message(line: bytes) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from None
    if not isinstance(message, dict):
        raise ProtocolError("message must be a JSON object")
    if "type" not in message:
        raise ProtocolError("message without a 'type' field")
    return message


class LineChannel:
    """Blocking duplex channel over a pair of binary streams."""

    def __init__(self, reader: BinaryIO, writer: BinaryIO):
        self._reader = reader
        self._writer = writer

    def send(self, message: dict) -> None:
        self._writer.write(encode_message(message))
        self._writer.flush()

    def recv(self) -> dict | None:
        """Next message, or None on EOF. Raises ProtocolError on garbage."""
        line = self._reader.readline()
        if not line:
            return None
        line = line.strip()
        if not line:
            return self.recv()
        return decode_message(line)

    def send_error(self, msg: str) -> None:
        self.send({"type": "error", "msg": msg})


def tcp_listen(host: str, port: int) -> tuple[socket.socket, int]:
    """Open the listening socket; the bound port is announced before accept."""
    server = socket.create_server((host, port))
    return server, server.getsockname()[1]


def tcp_accept_channel(server: socket.socket) -> LineChannel:
    """Accept exactly one agent connection and wrap it as a channel."""
    conn, _ = server.accept()
    return LineChannel(conn.makefile("rb"), conn.makefile("wb"))
