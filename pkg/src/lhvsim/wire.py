"""Physically enforced communication bound: Alice and Bob as processes.

The in-process simulator keeps the parties apart by interface shape; this
module keeps them apart with OS processes and sockets.  A referee process
(the caller) distributes per-recipient settings and per-round shared
randomness, Alice talks to Bob over a dedicated one-way TCP connection that
may only carry symbols from the declared alphabet (Bob rejects anything
else and the run aborts), and everything the referee sees goes into a
transcript for offline audit.

Frame format, little-endian, identical on every channel:

    [u64 round] [u8 kind] [u32 len] [payload]

Kinds: SETTING (per-recipient setup, round = 2**64-1), SHARED_RANDOMNESS,
MESSAGE (Alice to Bob only), OUTPUT (party to referee).  One round fully
completes before the next begins.

A networked run draws from the same streams with the same layouts as
``protocols.simulate``, so for a fixed seed it reproduces the in-process
outcome sequence bit for bit.
"""

from __future__ import annotations

import enum
import json
import multiprocessing
import socket
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bloch import State, collapse
from .errors import ProtocolViolationError, TransportError, ValidationError
from .protocols import (
    CH_ALICE,
    CH_SAMPLER,
    CH_SHARED,
    PROTOCOLS,
    BatchResult,
    ProtocolId,
    SharedDraw,
    SimulationResult,
    _aggregate,
    alice_decide,
    bob_decide,
    check_applicable,
    check_unit,
    draw_alice_private,
    draw_shared,
)
from .sampling import RhoTildeSampler, make_generator

SETUP_ROUND = 2**64 - 1
_HEADER = struct.Struct("<QBI")
_SOCKET_TIMEOUT = 60.0
VECTOR_PAYLOAD_BYTES = 24  # three float64 coordinates


class FrameKind(enum.IntEnum):
    SETTING = 1
    SHARED_RANDOMNESS = 2
    MESSAGE = 3
    OUTPUT = 4


@dataclass(frozen=True)
class Frame:
    round: int
    kind: FrameKind
    payload: bytes

    def encode(self) -> bytes:
        return _HEADER.pack(self.round, int(self.kind), len(self.payload)) + self.payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        part = sock.recv(n - got)
        if not part:
            raise EOFError("peer closed the connection")
        chunks.append(part)
        got += len(part)
    return b"".join(chunks)


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(frame.encode())


def recv_frame(sock: socket.socket) -> Frame:
    head = _recv_exact(sock, _HEADER.size)
    rnd, kind, length = _HEADER.unpack(head)
    payload = _recv_exact(sock, length) if length else b""
    return Frame(rnd, FrameKind(kind), payload)


# ---------------------------------------------------------------------------
# payload codecs

_PROTO_CODE = {pid: i + 1 for i, pid in enumerate(ProtocolId)}
_CODE_PROTO = {v: k for k, v in _PROTO_CODE.items()}

_ALICE_SETTING = struct.Struct("<QBBdddd QQ H".replace(" ", ""))
_BOB_SETTING = struct.Struct("<QBBBddd Q".replace(" ", ""))

FAULT_NONE = 0
FAULT_OVERSIZED_MESSAGE = 1


def pack_alice_setting(pair, protocol, fault, p, x, rounds, seed, bob_port) -> bytes:
    return _ALICE_SETTING.pack(
        pair, _PROTO_CODE[protocol], fault, p, x[0], x[1], x[2], rounds, seed, bob_port
    )


def unpack_alice_setting(data: bytes):
    pair, code, fault, p, x0, x1, x2, rounds, seed, bob_port = _ALICE_SETTING.unpack(data)
    return pair, _CODE_PROTO[code], fault, p, np.array([x0, x1, x2]), rounds, seed, bob_port


def pack_bob_setting(pair, protocol, alphabet, expect_vector, y, rounds) -> bytes:
    return _BOB_SETTING.pack(
        pair, _PROTO_CODE[protocol], alphabet, expect_vector, y[0], y[1], y[2], rounds
    )


def unpack_bob_setting(data: bytes):
    pair, code, alphabet, expect_vector, y0, y1, y2, rounds = _BOB_SETTING.unpack(data)
    return pair, _CODE_PROTO[code], alphabet, bool(expect_vector), np.array([y0, y1, y2]), rounds


def _shared_fields(protocol: ProtocolId):
    """(has lam2, has lam3, has shared bit) for the wire layout."""
    if protocol is ProtocolId.ONE_BIT:
        return True, False, False
    if protocol is ProtocolId.TRIT:
        return True, True, False
    if protocol in (ProtocolId.DEGORRE, ProtocolId.TELEPORTATION):
        return True, False, False
    if protocol is ProtocolId.IMPROVED_ONE_BIT:
        return True, False, True
    if protocol is ProtocolId.LOCAL_CONTENT:
        return False, False, True
    raise ValueError(f"unknown protocol {protocol}")


def shared_row_size(protocol: ProtocolId) -> int:
    lam2, lam3, r = _shared_fields(protocol)
    return 24 * (1 + lam2 + lam3) + (1 if r else 0)


def pack_shared_row(protocol: ProtocolId, shared: SharedDraw, i: int) -> bytes:
    lam2, lam3, rbit = _shared_fields(protocol)
    parts = [shared.lam1[i].tobytes()]
    if lam2:
        parts.append(shared.lam2[i].tobytes())
    if lam3:
        parts.append(shared.lam3[i].tobytes())
    if rbit:
        parts.append(bytes([int(shared.r[i])]))
    return b"".join(parts)


def unpack_shared_row(protocol: ProtocolId, data: bytes) -> SharedDraw:
    if len(data) != shared_row_size(protocol):
        raise TransportError(
            f"shared-randomness payload has {len(data)} bytes, "
            f"expected {shared_row_size(protocol)}"
        )
    lam2, lam3, rbit = _shared_fields(protocol)
    off = 0

    def vec():
        nonlocal off
        v = np.frombuffer(data, dtype=np.float64, count=3, offset=off).reshape(1, 3)
        off += 24
        return v

    out = SharedDraw(lam1=vec())
    if lam2:
        out.lam2 = vec()
    if lam3:
        out.lam3 = vec()
    if rbit:
        out.r = np.array([data[off]], dtype=np.uint8)
    return out


# ---------------------------------------------------------------------------
# transcript

_CHANNELS = ("referee->alice", "referee->bob", "alice->bob", "alice->referee", "bob->referee")


@dataclass
class FrameRecord:
    channel: str
    frame: Frame


@dataclass
class Transcript:
    """Everything the referee saw, in order.

    Alice-to-Bob MESSAGE frames are recorded from Bob's byte-exact echo in
    his OUTPUT frames; the referee never sits on that channel.
    """

    protocol: ProtocolId
    state_p: float
    rounds_per_setting: int
    records: list = field(default_factory=list)

    def add(self, channel: str, frame: Frame) -> None:
        self.records.append(FrameRecord(channel, frame))

    def frames(self, channel: Optional[str] = None, kind: Optional[FrameKind] = None):
        for rec in self.records:
            if channel is not None and rec.channel != channel:
                continue
            if kind is not None and rec.frame.kind != kind:
                continue
            yield rec

    def to_binary(self) -> bytes:
        head = struct.pack("<BdQ", _PROTO_CODE[self.protocol], self.state_p, self.rounds_per_setting)
        parts = [b"LHVT", head]
        for rec in self.records:
            parts.append(bytes([_CHANNELS.index(rec.channel)]))
            parts.append(rec.frame.encode())
        return b"".join(parts)

    @classmethod
    def from_binary(cls, data: bytes) -> "Transcript":
        if data[:4] != b"LHVT":
            raise ValidationError("not a transcript log (bad magic)")
        code, p, rounds = struct.unpack_from("<BdQ", data, 4)
        out = cls(_CODE_PROTO[code], p, rounds)
        off = 4 + struct.calcsize("<BdQ")
        while off < len(data):
            channel = _CHANNELS[data[off]]
            off += 1
            rnd, kind, length = _HEADER.unpack_from(data, off)
            off += _HEADER.size
            payload = bytes(data[off : off + length])
            off += length
            out.add(channel, Frame(rnd, FrameKind(kind), payload))
        return out

    def summary(self) -> dict:
        msg = [r for r in self.frames("alice->bob", FrameKind.MESSAGE)]
        shared = [r for r in self.frames("referee->alice", FrameKind.SHARED_RANDOMNESS)]
        hist: dict = {}
        for r in msg:
            key = r.frame.payload[0] if len(r.frame.payload) == 1 else f"vector[{len(r.frame.payload)}]"
            hist[str(key)] = hist.get(str(key), 0) + 1
        return {
            "protocol": self.protocol.value,
            "p": self.state_p,
            "rounds_per_setting": self.rounds_per_setting,
            "rounds": len(shared),
            "messages": len(msg),
            "message_fraction": len(msg) / len(shared) if shared else 0.0,
            "message_histogram": hist,
            "frames": len(self.records),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# the two party processes


def _connect(host: str, port: int) -> socket.socket:
    sock = socket.create_connection((host, port), timeout=_SOCKET_TIMEOUT)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def alice_main(host: str, referee_port: int) -> None:
    """Alice's process: settings and shared randomness in, message and a out."""
    ref = _connect(host, referee_port)
    send_frame(ref, Frame(SETUP_ROUND, FrameKind.OUTPUT, b"\x01"))  # role: alice
    bob: Optional[socket.socket] = None
    try:
        while True:
            setting = recv_frame(ref)
            if setting.kind != FrameKind.SETTING:
                raise TransportError(f"alice expected SETTING, got {setting.kind}")
            pair, protocol, fault, p, x, rounds, seed, bob_port = unpack_alice_setting(
                setting.payload
            )
            if bob is None:
                bob = _connect(host, bob_port)
            state = State(p)
            x = check_unit(x, "x")
            coll = collapse(state, x)
            priv = draw_alice_private(protocol, make_generator(seed, pair, CH_ALICE), rounds)
            sampler = None
            if protocol is ProtocolId.LOCAL_CONTENT and state.p < 1.0:
                sampler = RhoTildeSampler(state, x, make_generator(seed, pair, CH_SAMPLER))
            for r in range(rounds):
                frame = recv_frame(ref)
                if frame.kind != FrameKind.SHARED_RANDOMNESS or frame.round != r:
                    raise TransportError(f"alice desynchronized at round {r}: {frame.kind}")
                shared = unpack_shared_row(protocol, frame.payload)
                res = alice_decide(protocol, state, x, shared, priv.row(r), sampler, coll=coll)
                symbol = int(res.msg[0])
                if symbol != 0:
                    if fault == FAULT_OVERSIZED_MESSAGE and r == 0:
                        body = bytes([symbol - 1, 0])  # deliberately too long
                    elif res.payload is not None:
                        body = res.payload[0].tobytes()
                    else:
                        body = bytes([symbol - 1])
                    send_frame(bob, Frame(r, FrameKind.MESSAGE, body))
                out = struct.pack(
                    "<BBdB", 0, 1 if int(res.a[0]) == 1 else 0, float(res.bits[0]), symbol
                )
                send_frame(ref, Frame(r, FrameKind.OUTPUT, out))
    except (EOFError, BrokenPipeError, ConnectionResetError):
        pass  # referee finished or aborted the run
    finally:
        ref.close()
        if bob is not None:
            bob.close()


def bob_main(host: str, referee_port: int) -> None:
    """Bob's process: enforces the message alphabet, outputs b."""
    lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    lsock.bind((host, 0))
    lsock.listen(1)
    lsock.settimeout(_SOCKET_TIMEOUT)
    ref = _connect(host, referee_port)
    send_frame(
        ref, Frame(SETUP_ROUND, FrameKind.OUTPUT, b"\x02" + struct.pack("<H", lsock.getsockname()[1]))
    )
    alice: Optional[socket.socket] = None
    try:
        while True:
            setting = recv_frame(ref)
            if setting.kind != FrameKind.SETTING:
                raise TransportError(f"bob expected SETTING, got {setting.kind}")
            pair, protocol, alphabet, expect_vector, y, rounds = unpack_bob_setting(
                setting.payload
            )
            y = check_unit(y, "y")
            if alice is None:
                alice, _ = lsock.accept()
                alice.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            info = PROTOCOLS[protocol]
            for r in range(rounds):
                frame = recv_frame(ref)
                if frame.kind != FrameKind.SHARED_RANDOMNESS or frame.round != r:
                    raise TransportError(f"bob desynchronized at round {r}: {frame.kind}")
                shared = unpack_shared_row(protocol, frame.payload)
                expecting = True
                if info.silent_rounds:
                    expecting = int(shared.r[0]) == 1
                msg_bytes = b""
                status = 0
                symbol = np.zeros(1, dtype=np.uint8)
                payload_vec = None
                if expecting:
                    mframe = recv_frame(alice)
                    msg_bytes = mframe.payload
                    if mframe.kind != FrameKind.MESSAGE or mframe.round != r:
                        status = 2  # desync / wrong kind
                    elif expect_vector:
                        if len(msg_bytes) != VECTOR_PAYLOAD_BYTES:
                            status = 1
                        else:
                            payload_vec = np.frombuffer(msg_bytes, dtype=np.float64).reshape(1, 3)
                            symbol = np.ones(1, dtype=np.uint8)
                    elif len(msg_bytes) != 1 or msg_bytes[0] >= alphabet:
                        status = 1  # oversized or out-of-alphabet symbol
                    else:
                        symbol = np.array([msg_bytes[0] + 1], dtype=np.uint8)
                if status != 0:
                    out = struct.pack("<BBB", status, 0, len(msg_bytes)) + msg_bytes
                    send_frame(ref, Frame(r, FrameKind.OUTPUT, out))
                    raise ProtocolViolationError("message rejected; aborting")
                b = bob_decide(protocol, y, shared, symbol, payload_vec)
                out = struct.pack(
                    "<BBB", 0, 1 if int(b[0]) == 1 else 0, len(msg_bytes)
                ) + msg_bytes
                send_frame(ref, Frame(r, FrameKind.OUTPUT, out))
    except ProtocolViolationError:
        pass  # already reported to the referee
    except (EOFError, BrokenPipeError, ConnectionResetError):
        pass  # referee finished or aborted the run
    finally:
        ref.close()
        if alice is not None:
            alice.close()
        lsock.close()


# ---------------------------------------------------------------------------
# referee


@dataclass(frozen=True)
class WireConfig:
    host: str = "127.0.0.1"
    referee_port: int = 0  # 0 = ephemeral
    fault: int = FAULT_NONE


def run_networked(
    protocol: ProtocolId,
    state: State,
    settings,
    rounds: int,
    seed: int,
    config: WireConfig = WireConfig(),
    keep_outcomes: bool = True,
):
    """Run the protocol across three processes; returns (result, transcript).

    Statistically and bit-exactly identical to ``simulate`` with the same
    seed: the referee draws the shared blocks from the same streams, and the
    parties evaluate the same decision functions row by row.
    """
    check_applicable(protocol, state)
    pairs = [(check_unit(x, "x"), check_unit(y, "y")) for x, y in settings]
    rounds = int(rounds)
    info = PROTOCOLS[protocol]
    transcript = Transcript(protocol, state.p, rounds)

    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind((config.host, config.referee_port))
    listener.listen(2)
    listener.settimeout(_SOCKET_TIMEOUT)
    port = listener.getsockname()[1]

    ctx = multiprocessing.get_context("fork")
    procs = [
        ctx.Process(target=bob_main, args=(config.host, port), daemon=True),
        ctx.Process(target=alice_main, args=(config.host, port), daemon=True),
    ]
    for proc in procs:
        proc.start()

    alice_sock = bob_sock = None
    bob_port = None
    result = SimulationResult(protocol, state, rounds, int(seed))
    try:
        for _ in range(2):
            conn, _ = listener.accept()
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(_SOCKET_TIMEOUT)
            hello = recv_frame(conn)
            if hello.kind != FrameKind.OUTPUT or hello.round != SETUP_ROUND:
                raise TransportError("malformed bootstrap frame")
            if hello.payload[0] == 1:
                alice_sock = conn
            else:
                bob_sock = conn
                (bob_port,) = struct.unpack("<H", hello.payload[1:3])
        if alice_sock is None or bob_sock is None:
            raise TransportError("both parties must connect")

        for k, (x, y) in enumerate(pairs):
            fa = Frame(
                SETUP_ROUND,
                FrameKind.SETTING,
                pack_alice_setting(k, protocol, config.fault, state.p, x, rounds, seed, bob_port),
            )
            fb = Frame(
                SETUP_ROUND,
                FrameKind.SETTING,
                pack_bob_setting(
                    k, protocol, info.alphabet_size, info.vector_message, y, rounds
                ),
            )
            send_frame(alice_sock, fa)
            transcript.add("referee->alice", fa)
            send_frame(bob_sock, fb)
            transcript.add("referee->bob", fb)

            shared = draw_shared(protocol, state, make_generator(seed, k, CH_SHARED), rounds)
            a_arr = np.zeros(rounds, dtype=np.int8)
            b_arr = np.zeros(rounds, dtype=np.int8)
            msg_arr = np.zeros(rounds, dtype=np.uint8)
            bits_arr = np.zeros(rounds, dtype=np.float64)
            for r in range(rounds):
                row = pack_shared_row(protocol, shared, r)
                frame = Frame(r, FrameKind.SHARED_RANDOMNESS, row)
                send_frame(alice_sock, frame)
                transcript.add("referee->alice", frame)
                send_frame(bob_sock, frame)
                transcript.add("referee->bob", frame)

                try:
                    aout = recv_frame(alice_sock)
                    bout = recv_frame(bob_sock)
                except (EOFError, socket.timeout) as exc:
                    raise TransportError(f"lost a party at round {r}: {exc}") from exc
                transcript.add("alice->referee", aout)
                transcript.add("bob->referee", bout)
                a_status, a_bit, bits, symbol = struct.unpack("<BBdB", aout.payload)
                b_status, b_bit, echo_len = struct.unpack_from("<BBB", bout.payload)
                echo = bout.payload[3 : 3 + echo_len]
                if echo:
                    transcript.add("alice->bob", Frame(r, FrameKind.MESSAGE, echo))
                if a_status != 0 or b_status != 0:
                    raise ProtocolViolationError(
                        f"round {r}: party rejected the message "
                        f"(alice status {a_status}, bob status {b_status})"
                    )
                a_arr[r] = 1 if a_bit else -1
                b_arr[r] = 1 if b_bit else -1
                msg_arr[r] = symbol
                bits_arr[r] = bits
            batch = BatchResult(a=a_arr, b=b_arr, msg=msg_arr, bits=bits_arr, lam=None)
            result.settings.append(
                _aggregate(protocol, x, y, batch, keep_outcomes, keep_lambdas=False)
            )
    finally:
        for sock in (alice_sock, bob_sock):
            if sock is not None:
                sock.close()
        listener.close()
        for proc in procs:
            proc.join(timeout=10.0)
            if proc.is_alive():
                proc.terminate()
    return result, transcript


# ---------------------------------------------------------------------------
# audit


@dataclass
class AuditReport:
    findings: list
    rounds: int
    messages: int
    message_fraction: float
    symbol_histogram: dict

    @property
    def passed(self) -> bool:
        return not self.findings


def _split_segments(transcript: Transcript):
    """Group records between SETTING frames (rounds restart per setting pair)."""
    segments = []
    current = None
    for rec in transcript.records:
        if rec.frame.kind == FrameKind.SETTING and rec.channel == "referee->alice":
            current = []
            segments.append(current)
        elif current is not None:
            current.append(rec)
    if current is None and transcript.records:
        segments.append(list(transcript.records))  # tolerate logs without settings
    return segments


def audit_transcript(transcript: Transcript, protocol: Optional[ProtocolId] = None) -> AuditReport:
    """Offline validation of a networked run's frame log.

    Checks, per setting-pair segment: one identical shared-randomness frame
    per party per round, in order; the alphabet bound on every Alice-to-Bob
    message; the message/no-message pattern against the shared bit for
    protocols with silent rounds; and that no reverse channel ever appears.
    """
    protocol = protocol or transcript.protocol
    info = PROTOCOLS[protocol]
    findings: list = []
    hist: dict = {}
    total_rounds = 0
    total_messages = 0

    for rec in transcript.records:
        if rec.channel not in _CHANNELS:
            findings.append(f"unknown channel {rec.channel!r}")
        if rec.channel.startswith("bob->alice"):
            findings.append("reverse channel bob->alice present")

    size = shared_row_size(protocol)
    for seg_index, seg in enumerate(_split_segments(transcript)):
        shared_a: dict = {}
        shared_b: dict = {}
        messages: dict = {}
        for rec in seg:
            if rec.frame.kind == FrameKind.SHARED_RANDOMNESS:
                target = shared_a if rec.channel == "referee->alice" else shared_b
                if rec.frame.round in target:
                    findings.append(
                        f"segment {seg_index} round {rec.frame.round}: duplicate shared frame"
                    )
                target[rec.frame.round] = rec.frame.payload
            elif rec.frame.kind == FrameKind.MESSAGE and rec.channel == "alice->bob":
                if rec.frame.round in messages:
                    findings.append(
                        f"segment {seg_index} round {rec.frame.round}: more than one message"
                    )
                messages[rec.frame.round] = rec.frame.payload

        if set(shared_a) != set(shared_b):
            findings.append(f"segment {seg_index}: parties saw different rounds")
        if shared_a and sorted(shared_a) != list(range(len(shared_a))):
            findings.append(f"segment {seg_index}: rounds are not the contiguous range")
        for rnd, payload in shared_a.items():
            if len(payload) != size:
                findings.append(
                    f"segment {seg_index} round {rnd}: shared payload has "
                    f"{len(payload)} bytes, want {size}"
                )
            if shared_b.get(rnd) != payload:
                findings.append(
                    f"segment {seg_index} round {rnd}: parties saw different shared randomness"
                )

        for rnd, payload in messages.items():
            if info.vector_message:
                if len(payload) != VECTOR_PAYLOAD_BYTES:
                    findings.append(
                        f"segment {seg_index} round {rnd}: vector message has "
                        f"{len(payload)} bytes, want {VECTOR_PAYLOAD_BYTES}"
                    )
                else:
                    hist["vector"] = hist.get("vector", 0) + 1
            else:
                if len(payload) != 1:
                    findings.append(
                        f"segment {seg_index} round {rnd}: message payload has "
                        f"{len(payload)} bytes, want 1"
                    )
                elif payload[0] >= info.alphabet_size:
                    findings.append(
                        f"segment {seg_index} round {rnd}: symbol {payload[0]} outside "
                        f"alphabet of {info.alphabet_size}"
                    )
                else:
                    hist[str(payload[0])] = hist.get(str(payload[0]), 0) + 1

        if info.silent_rounds:
            _, _, rbit = _shared_fields(protocol)
            for rnd, payload in shared_a.items():
                if len(payload) != size or not rbit:
                    continue
                talk = payload[-1] == 1
                if talk and rnd not in messages:
                    findings.append(
                        f"segment {seg_index} round {rnd}: shared bit requested a message, none sent"
                    )
                if not talk and rnd in messages:
                    findings.append(
                        f"segment {seg_index} round {rnd}: message sent in a "
                        "no-communication round"
                    )
        else:
            for rnd in shared_a:
                if rnd not in messages:
                    findings.append(f"segment {seg_index} round {rnd}: missing message")

        total_rounds += len(shared_a)
        total_messages += len(messages)

    return AuditReport(
        findings=findings,
        rounds=total_rounds,
        messages=total_messages,
        message_fraction=total_messages / total_rounds if total_rounds else 0.0,
        symbol_histogram=hist,
    )
