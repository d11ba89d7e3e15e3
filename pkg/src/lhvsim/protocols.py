"""The classical simulation protocols behind one common two-party interface.

Every protocol follows the same round shape:

1. shared randomness (vectors on S2, sometimes a shared bit) is drawn from
   distributions that depend only on the protocol and the state, never on
   the measurement settings;
2. Alice, knowing her setting x, picks which shared vector to use, possibly
   tells Bob through a bounded message, and outputs a;
3. Bob, knowing his setting y and the message, uses the agreed vector lam
   and outputs b = sgn(y . lam).

Alice and Bob are separate evaluators: ``alice_decide`` never receives y and
``bob_decide`` never receives x, so no-cross-talk is structural.  All
per-round arithmetic is elementwise, which makes a batch run and a
round-by-round run (the networked mode) produce bit-identical results from
the same streams.

Stream layout per setting pair k of a run with seed s:

* shared randomness comes from stream (s, k, CH_SHARED) in the order
  documented by ``draw_shared``;
* Alice's private coins come from (s, k, CH_ALICE), whole arrays per block
  in the order documented by ``draw_alice_private``;
* Alice's rejection sampler (vector-message protocol only) owns stream
  (s, k, CH_SAMPLER) and is consumed sample by sample.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bloch import State, Z_AXIS, check_unit, collapse, dot3, sign_pm, theta
from .errors import DomainError, InternalConsistencyError, ValidationError
from .sampling import (
    RhoTildeMaxSampler,
    RhoTildeSampler,
    RngStream,
    _rho_tilde_given,
    eval_rho_tilde_max,
    make_generator,
    n_of_p,
    improved_one_bit_threshold,
    one_bit_threshold,
    sample_theta_hemisphere,
    sample_uniform_sphere,
)

CH_SHARED = 0
CH_ALICE = 1
CH_BOB = 2  # reserved; every protocol here has a deterministic Bob
CH_SAMPLER = 3

RATIO_GUARD = 1e-12
TRIT_BITS = float(np.log2(3.0))
# vector messages are sent as three raw float64 coordinates
VECTOR_MESSAGE_BITS = 192.0


class ProtocolId(enum.Enum):
    ONE_BIT = "one-bit"
    TRIT = "trit"
    DEGORRE = "degorre"
    TELEPORTATION = "teleportation"
    IMPROVED_ONE_BIT = "improved-one-bit"
    LOCAL_CONTENT = "local-content"


@dataclass(frozen=True)
class ProtocolInfo:
    """Declared alphabet and applicability of one protocol."""

    id: ProtocolId
    alphabet_size: int
    bits_per_message: float
    p_range: str
    silent_rounds: bool  # may legitimately send nothing in some rounds
    vector_message: bool = False
    unbounded_channel: bool = False


PROTOCOLS = {
    ProtocolId.ONE_BIT: ProtocolInfo(
        ProtocolId.ONE_BIT, 2, 1.0, "1/2 + sqrt(3)/4 <= p <= 1 (>= 0.9330127)", False
    ),
    ProtocolId.TRIT: ProtocolInfo(ProtocolId.TRIT, 3, TRIT_BITS, "1/2 <= p <= 1", False),
    ProtocolId.DEGORRE: ProtocolInfo(ProtocolId.DEGORRE, 2, 1.0, "p = 1/2", False),
    ProtocolId.TELEPORTATION: ProtocolInfo(
        ProtocolId.TELEPORTATION, 4, 2.0, "1/2 <= p <= 1", False
    ),
    ProtocolId.IMPROVED_ONE_BIT: ProtocolInfo(
        ProtocolId.IMPROVED_ONE_BIT, 2, 1.0, "n_of_p(p) <= 1 (>= 0.8342618)", True
    ),
    ProtocolId.LOCAL_CONTENT: ProtocolInfo(
        ProtocolId.LOCAL_CONTENT,
        1,
        VECTOR_MESSAGE_BITS,
        "1/2 <= p <= 1",
        True,
        vector_message=True,
        unbounded_channel=True,
    ),
}


def check_applicable(protocol: ProtocolId, state: State) -> None:
    """Raise DomainError (naming the valid range) if the state is out of range."""
    p = state.p
    if protocol is ProtocolId.ONE_BIT:
        thr = one_bit_threshold()
        if p < thr - 1e-12:
            raise DomainError(
                f"protocol '{protocol.value}' requires {thr:.10f} <= p <= 1, got p={p}"
            )
    elif protocol is ProtocolId.DEGORRE:
        if abs(p - 0.5) > 1e-12:
            raise DomainError(f"protocol '{protocol.value}' is defined only at p = 1/2, got p={p}")
    elif protocol is ProtocolId.IMPROVED_ONE_BIT:
        if p <= 0.5 or (p < 1.0 and n_of_p(p) > 1.0 + 1e-12):
            thr = improved_one_bit_threshold()
            raise DomainError(
                f"protocol '{protocol.value}' requires n_of_p(p) <= 1, "
                f"i.e. {thr:.10f} <= p <= 1, got p={p}"
            )
    # TRIT, TELEPORTATION, LOCAL_CONTENT cover all of [1/2, 1]


# ---------------------------------------------------------------------------
# shared randomness and private coins


@dataclass
class SharedDraw:
    """Per-round shared randomness; drawn without knowledge of any setting."""

    lam1: np.ndarray
    lam2: Optional[np.ndarray] = None
    lam3: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None  # shared bit, uint8

    @property
    def rounds(self) -> int:
        return self.lam1.shape[0]

    def row(self, i: int) -> "SharedDraw":
        pick = lambda a: None if a is None else a[i : i + 1]
        return SharedDraw(self.lam1[i : i + 1], pick(self.lam2), pick(self.lam3), pick(self.r))


@dataclass
class AlicePrivate:
    """Alice's private uniforms, pre-drawn as whole blocks for a segment."""

    u_msg: Optional[np.ndarray] = None
    u_out: Optional[np.ndarray] = None

    def row(self, i: int) -> "AlicePrivate":
        pick = lambda a: None if a is None else a[i : i + 1]
        return AlicePrivate(pick(self.u_msg), pick(self.u_out))


def draw_shared(
    protocol: ProtocolId, state: State, rng: np.random.Generator, n: int
) -> SharedDraw:
    """Draw the shared randomness block for ``n`` rounds.

    Draw order (fixed; the wire referee relies on it): the lam blocks in
    index order, each as one bulk call, then the shared-bit uniforms.  The
    improved one-bit protocol draws its bit first because the envelope
    sampler consumes a data-dependent number of values.
    """
    n = int(n)
    if protocol is ProtocolId.ONE_BIT:
        return SharedDraw(
            lam1=sample_uniform_sphere(rng, n),
            lam2=sample_theta_hemisphere(rng, Z_AXIS, n),
        )
    if protocol is ProtocolId.TRIT:
        return SharedDraw(
            lam1=sample_uniform_sphere(rng, n),
            lam2=sample_uniform_sphere(rng, n),
            lam3=sample_theta_hemisphere(rng, Z_AXIS, n),
        )
    if protocol in (ProtocolId.DEGORRE, ProtocolId.TELEPORTATION):
        return SharedDraw(
            lam1=sample_uniform_sphere(rng, n),
            lam2=sample_uniform_sphere(rng, n),
        )
    if protocol is ProtocolId.IMPROVED_ONE_BIT:
        fraction = 0.0 if state.p == 1.0 else n_of_p(state)
        r = (rng.random(n) < fraction).astype(np.uint8)
        if fraction > 0.0:
            lam1 = RhoTildeMaxSampler(state, rng).draw(n)
        else:
            lam1 = np.tile(Z_AXIS, (n, 1))  # never used: r == 0 in every round
        return SharedDraw(lam1=lam1, lam2=sample_theta_hemisphere(rng, Z_AXIS, n), r=r)
    if protocol is ProtocolId.LOCAL_CONTENT:
        lam1 = sample_theta_hemisphere(rng, Z_AXIS, n)
        r = (rng.random(n) >= state.c).astype(np.uint8)  # P(r=0) = 2p-1
        return SharedDraw(lam1=lam1, r=r)
    raise ValueError(f"unknown protocol {protocol}")


def draw_alice_private(protocol: ProtocolId, rng: np.random.Generator, n: int) -> AlicePrivate:
    """Alice's private uniforms: message-decision block first, output block second."""
    n = int(n)
    if protocol in (ProtocolId.ONE_BIT, ProtocolId.TRIT, ProtocolId.IMPROVED_ONE_BIT):
        return AlicePrivate(u_msg=rng.random(n), u_out=rng.random(n))
    if protocol in (ProtocolId.TELEPORTATION, ProtocolId.LOCAL_CONTENT):
        return AlicePrivate(u_out=rng.random(n))
    if protocol is ProtocolId.DEGORRE:
        return AlicePrivate()
    raise ValueError(f"unknown protocol {protocol}")


# ---------------------------------------------------------------------------
# the two parties


def _weight_given(coll, lam) -> np.ndarray:
    num = coll.p_plus * theta(dot3(lam, coll.v_plus))
    den = num + coll.p_minus * theta(dot3(lam, coll.v_minus))
    if np.any(den <= 0.0):
        raise InternalConsistencyError(
            "rho_x(lam) = 0: this lam cannot come from a correct sampling step"
        )
    return np.clip(num / den, 0.0, 1.0)


def alice_output_weight(state: State, x: np.ndarray, lam) -> np.ndarray:
    """Probability that Alice outputs +1 given the chosen vector lam.

    The ratio of the +1 summand of rho_x(lam) to the whole mixture (the 1/pi
    factors cancel).  At p = 1/2 this degenerates to the indicator
    H(lam . v_plus).  Raises if rho_x(lam) = 0, which no correct sampling
    step can produce.
    """
    x = check_unit(x, "x")
    lam = np.asarray(lam, dtype=float)
    return _weight_given(collapse(state, x), lam)


@dataclass
class AliceResult:
    a: np.ndarray  # int8, +-1
    msg: np.ndarray  # uint8 symbol in {1..d}; 0 = no message this round
    bits: np.ndarray  # float64 bits charged per round
    lam: np.ndarray  # the vector Alice committed to (for diagnostics)
    payload: Optional[np.ndarray] = None  # vector messages, in msg!=0 row order


def alice_decide(
    protocol: ProtocolId,
    state: State,
    x: np.ndarray,
    shared: SharedDraw,
    priv: AlicePrivate,
    sampler: Optional[RhoTildeSampler] = None,
    coll=None,
) -> AliceResult:
    """Alice's whole round: commit to a vector, message Bob, output a.

    ``coll`` may carry a precomputed ``collapse(state, x)`` so round-by-round
    callers do not redo it; the computation is identical either way.
    """
    n = shared.rounds
    if coll is None:
        coll = collapse(state, x)  # validates x

    if protocol is ProtocolId.ONE_BIT:
        accept = (4.0 * np.pi) * _rho_tilde_given(state, coll, shared.lam1)
        top = float(np.max(accept, initial=0.0))
        if top > 1.0 + RATIO_GUARD:
            raise DomainError(
                f"one-bit acceptance probability reached {top}: p is below the threshold"
            )
        use1 = priv.u_msg < np.minimum(accept, 1.0)
        lam = np.where(use1[:, None], shared.lam1, shared.lam2)
        msg = np.where(use1, 1, 2).astype(np.uint8)
        bits = np.ones(n)

    elif protocol is ProtocolId.TRIT:
        v = coll.v_plus if coll.p_plus <= 0.5 else coll.v_minus
        d1 = np.abs(dot3(shared.lam1, v))
        d2 = np.abs(dot3(shared.lam2, v))
        first = d1 >= d2
        c = np.where(first, 1, 2).astype(np.uint8)
        lam_c = np.where(first[:, None], shared.lam1, shared.lam2)
        d_c = np.where(first, d1, d2)
        ratio = np.zeros(n)
        pos = d_c > 0.0
        ratio[pos] = _rho_tilde_given(state, coll, lam_c[pos]) / (d_c[pos] / (2.0 * np.pi))
        top = float(np.max(ratio, initial=0.0))
        if top > 1.0 + RATIO_GUARD:
            raise InternalConsistencyError(
                f"trit acceptance ratio reached {top}: pointwise bound violated"
            )
        keep = priv.u_msg < np.minimum(ratio, 1.0)
        msg = np.where(keep, c, 3).astype(np.uint8)
        lam = np.where(keep[:, None], lam_c, shared.lam3)
        bits = np.full(n, TRIT_BITS)

    elif protocol is ProtocolId.DEGORRE:
        v = coll.v_plus
        first = np.abs(dot3(shared.lam1, v)) >= np.abs(dot3(shared.lam2, v))
        msg = np.where(first, 1, 2).astype(np.uint8)
        lam = np.where(first[:, None], shared.lam1, shared.lam2)
        a = sign_pm(dot3(lam, v))
        return AliceResult(a=a, msg=msg, bits=np.ones(n), lam=lam)

    elif protocol is ProtocolId.TELEPORTATION:
        a = np.where(priv.u_out < coll.p_plus, 1, -1).astype(np.int8)
        v = np.where((a == 1)[:, None], coll.v_plus[None, :], coll.v_minus[None, :])
        c1, c2, lam = _choice_and_flip(shared.lam1, shared.lam2, v)
        msg = (2 * (c1 - 1) + (c2 == -1) + 1).astype(np.uint8)
        return AliceResult(a=a, msg=msg, bits=np.full(n, 2.0), lam=lam)

    elif protocol is ProtocolId.IMPROVED_ONE_BIT:
        talk = shared.r == 1
        ratio = np.zeros(n)
        if np.any(talk):
            rt = _rho_tilde_given(state, coll, shared.lam1[talk])
            ratio[talk] = rt / eval_rho_tilde_max(state, shared.lam1[talk])
        top = float(np.max(ratio, initial=0.0))
        if top > 1.0 + RATIO_GUARD:
            raise InternalConsistencyError(
                f"improved one-bit acceptance ratio reached {top}: envelope violated"
            )
        use1 = talk & (priv.u_msg < np.minimum(ratio, 1.0))
        lam = np.where(use1[:, None], shared.lam1, shared.lam2)
        msg = np.where(talk, np.where(use1, 1, 2), 0).astype(np.uint8)
        bits = talk.astype(float)

    elif protocol is ProtocolId.LOCAL_CONTENT:
        talk = shared.r == 1
        k = int(talk.sum())
        lam = shared.lam1.copy()
        payload = None
        if k:
            if sampler is None:
                raise ValidationError("local-content protocol needs Alice's vector sampler")
            payload = sampler.draw(k)
            lam[talk] = payload
        msg = np.where(talk, 1, 0).astype(np.uint8)
        bits = talk * VECTOR_MESSAGE_BITS
        w = _weight_given(coll, lam)
        a = np.where(priv.u_out < w, 1, -1).astype(np.int8)
        return AliceResult(a=a, msg=msg, bits=bits, lam=lam, payload=payload)

    else:
        raise ValueError(f"unknown protocol {protocol}")

    w = _weight_given(coll, lam)
    a = np.where(priv.u_out < w, 1, -1).astype(np.int8)
    return AliceResult(a=a, msg=msg, bits=bits, lam=lam)


def _choice_and_flip(lam1: np.ndarray, lam2: np.ndarray, v: np.ndarray):
    """Choice-of-two plus sign flip: the two-bit encoding of the hemisphere law.

    c1 picks the vector with the larger |lam . v|, c2 = sgn(lam_c1 . v) flips
    it into the v hemisphere.  Works with per-row v (shape (n, 3)) or one v.
    """
    d1 = np.abs(dot3(lam1, v))
    d2 = np.abs(dot3(lam2, v))
    first = d1 >= d2
    c1 = np.where(first, 1, 2).astype(np.uint8)
    lam_c1 = np.where(first[:, None], lam1, lam2)
    c2 = sign_pm(dot3(lam_c1, v))
    lam = c2[:, None] * lam_c1
    return c1, c2, lam


def bob_output(y: np.ndarray, lam) -> np.ndarray:
    """Bob's deterministic response b = sgn(y . lam), with sgn(0) = +1."""
    y = check_unit(y, "y")
    return sign_pm(dot3(np.asarray(lam, dtype=float), y))


def bob_decide(
    protocol: ProtocolId,
    y: np.ndarray,
    shared: SharedDraw,
    msg: np.ndarray,
    payload: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Bob's whole round: reconstruct the agreed vector from the message, output b."""
    y = check_unit(y, "y")
    if protocol in (ProtocolId.ONE_BIT, ProtocolId.DEGORRE):
        lam = np.where((msg == 1)[:, None], shared.lam1, shared.lam2)
    elif protocol is ProtocolId.TRIT:
        lam = np.where(
            (msg == 1)[:, None],
            shared.lam1,
            np.where((msg == 2)[:, None], shared.lam2, shared.lam3),
        )
    elif protocol is ProtocolId.TELEPORTATION:
        c1_first = ((msg - 1) // 2) == 0
        c2 = np.where((msg - 1) % 2 == 0, 1.0, -1.0)
        lam = c2[:, None] * np.where(c1_first[:, None], shared.lam1, shared.lam2)
    elif protocol is ProtocolId.IMPROVED_ONE_BIT:
        lam = np.where((msg == 1)[:, None], shared.lam1, shared.lam2)
    elif protocol is ProtocolId.LOCAL_CONTENT:
        lam = shared.lam1.copy()
        got = msg == 1
        if np.any(got):
            if payload is None:
                raise ValidationError("vector message rounds present but no payload given")
            lam[got] = payload
    else:
        raise ValueError(f"unknown protocol {protocol}")
    return sign_pm(dot3(lam, y))


# ---------------------------------------------------------------------------
# round records and batch execution


@dataclass
class RoundRecord:
    """One simulated round, for inspection and the wire transcript."""

    index: int
    x: np.ndarray
    y: np.ndarray
    a: int
    b: int
    message: int  # symbol in {1..d}; 0 = no message
    bits_sent: float
    lam_chosen: np.ndarray


@dataclass
class BatchResult:
    a: np.ndarray
    b: np.ndarray
    msg: np.ndarray
    bits: np.ndarray
    lam: np.ndarray


def run_batch(
    protocol: ProtocolId,
    state: State,
    x: np.ndarray,
    y: np.ndarray,
    n: int,
    shared_rng: np.random.Generator,
    alice_rng: np.random.Generator,
    sampler_rng: Optional[np.random.Generator] = None,
) -> BatchResult:
    """Run n rounds of one setting pair from explicit streams."""
    shared = draw_shared(protocol, state, shared_rng, n)
    priv = draw_alice_private(protocol, alice_rng, n)
    sampler = None
    if protocol is ProtocolId.LOCAL_CONTENT and state.p < 1.0:
        if sampler_rng is None:
            raise ValidationError("local-content protocol needs a sampler stream")
        sampler = RhoTildeSampler(state, x, sampler_rng)
    ares = alice_decide(protocol, state, x, shared, priv, sampler)
    b = bob_decide(protocol, y, shared, ares.msg, ares.payload)
    return BatchResult(a=ares.a, b=b, msg=ares.msg, bits=ares.bits, lam=ares.lam)


def _streams_for(rng) -> tuple:
    """Accept an RngStream (channelled) or a bare Generator (sequential)."""
    if isinstance(rng, RngStream):
        return rng.generator(CH_SHARED), rng.generator(CH_ALICE), rng.generator(CH_SAMPLER)
    return rng, rng, rng


def _run_single(protocol: ProtocolId, rng, state: State, x, y) -> RoundRecord:
    check_applicable(protocol, state)
    shared_rng, alice_rng, sampler_rng = _streams_for(rng)
    res = run_batch(protocol, state, x, y, 1, shared_rng, alice_rng, sampler_rng)
    return RoundRecord(
        index=0,
        x=np.asarray(x, dtype=float),
        y=np.asarray(y, dtype=float),
        a=int(res.a[0]),
        b=int(res.b[0]),
        message=int(res.msg[0]),
        bits_sent=float(res.bits[0]),
        lam_chosen=res.lam[0],
    )


def run_protocol1_round(rng, state: State, x, y) -> RoundRecord:
    """One round of the one-bit protocol (weakly entangled states)."""
    return _run_single(ProtocolId.ONE_BIT, rng, state, x, y)


def run_protocol2_round(rng, state: State, x, y) -> RoundRecord:
    """One round of the trit protocol (all states)."""
    return _run_single(ProtocolId.TRIT, rng, state, x, y)


def run_protocol3_round(rng, state: State, x, y) -> RoundRecord:
    """One round of the choice-method bit protocol (maximally entangled state)."""
    return _run_single(ProtocolId.DEGORRE, rng, state, x, y)


@dataclass
class PrepareMeasureRecord:
    """One round of the two-bit prepare-and-measure simulation of a single qubit."""

    b: int
    bits_sent: float
    message: int  # symbol in {1..4} encoding (c1, c2)
    lam: np.ndarray


def run_protocol4_round(rng, v: np.ndarray, y: np.ndarray) -> PrepareMeasureRecord:
    """Simulate measuring y on the qubit state v with two classical bits.

    Two shared uniform vectors; c1 is the choice bit, c2 = sgn(lam_c1 . v)
    the flip bit; Bob measures the flipped vector.  p(b=+1) = (1 + y.v)/2.
    """
    v = check_unit(v, "v")
    y = check_unit(y, "y")
    shared_rng, _, _ = _streams_for(rng)
    lam1 = sample_uniform_sphere(shared_rng, 1)
    lam2 = sample_uniform_sphere(shared_rng, 1)
    c1, c2, lam = _choice_and_flip(lam1, lam2, v)
    msg = int(2 * (int(c1[0]) - 1) + (int(c2[0]) == -1) + 1)
    b = int(sign_pm(dot3(lam, y))[0])
    return PrepareMeasureRecord(b=b, bits_sent=2.0, message=msg, lam=lam[0])


def run_protocol5_round(rng, state: State, x, y) -> RoundRecord:
    """One round of the improved one-bit protocol (message only when r = 1)."""
    return _run_single(ProtocolId.IMPROVED_ONE_BIT, rng, state, x, y)


def run_protocol6_round(rng, state: State, x, y) -> RoundRecord:
    """One round of the maximal-local-content protocol (vector message when r = 1)."""
    return _run_single(ProtocolId.LOCAL_CONTENT, rng, state, x, y)


# ---------------------------------------------------------------------------
# aggregation over setting pairs


@dataclass
class SettingResult:
    """Counts and communication totals for one (x, y) pair."""

    x: np.ndarray
    y: np.ndarray
    rounds: int
    counts: np.ndarray  # (2, 2) int64, index 0 -> outcome +1
    bits_sum: float
    bits_sq_sum: float
    worst_bits: float
    message_rounds: int
    symbol_counts: np.ndarray  # histogram over symbols 0..d (0 = silent)
    a_seq: Optional[np.ndarray] = None
    b_seq: Optional[np.ndarray] = None
    msg_seq: Optional[np.ndarray] = None
    bits_seq: Optional[np.ndarray] = None
    lam_seq: Optional[np.ndarray] = None

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.rounds, 1)


def _aggregate(
    protocol: ProtocolId,
    x: np.ndarray,
    y: np.ndarray,
    res: BatchResult,
    keep_outcomes: bool,
    keep_lambdas: bool,
) -> SettingResult:
    n = res.a.shape[0]
    ia = (res.a == -1).astype(np.int64)
    ib = (res.b == -1).astype(np.int64)
    counts = np.bincount(ia * 2 + ib, minlength=4).reshape(2, 2)
    d = PROTOCOLS[protocol].alphabet_size
    symbol_counts = np.bincount(res.msg, minlength=d + 1)
    return SettingResult(
        x=x,
        y=y,
        rounds=n,
        counts=counts,
        bits_sum=float(res.bits.sum()),
        bits_sq_sum=float((res.bits**2).sum()),
        worst_bits=float(res.bits.max(initial=0.0)),
        message_rounds=int((res.msg != 0).sum()),
        symbol_counts=symbol_counts,
        a_seq=res.a if keep_outcomes else None,
        b_seq=res.b if keep_outcomes else None,
        msg_seq=res.msg if keep_outcomes else None,
        bits_seq=res.bits if keep_outcomes else None,
        lam_seq=res.lam if keep_lambdas else None,
    )


@dataclass
class SimulationResult:
    protocol: ProtocolId
    state: State
    rounds_per_setting: int
    seed: int
    settings: list = field(default_factory=list)

    @property
    def total_rounds(self) -> int:
        return sum(s.rounds for s in self.settings)

    @property
    def total_bits(self) -> float:
        return sum(s.bits_sum for s in self.settings)

    @property
    def mean_bits(self) -> float:
        n = self.total_rounds
        return self.total_bits / n if n else 0.0

    @property
    def bits_stderr(self) -> float:
        n = self.total_rounds
        if n < 2:
            return 0.0
        mean = self.mean_bits
        var = max(sum(s.bits_sq_sum for s in self.settings) / n - mean * mean, 0.0)
        return float(np.sqrt(var / n))

    @property
    def worst_bits(self) -> float:
        return max((s.worst_bits for s in self.settings), default=0.0)

    @property
    def no_message_fraction(self) -> float:
        n = self.total_rounds
        if n == 0:
            return 0.0
        return 1.0 - sum(s.message_rounds for s in self.settings) / n


def _simulate_pair(args):
    (protocol, state, x, y, n, seed, pair_index, keep_outcomes, keep_lambdas) = args
    res = run_batch(
        protocol,
        state,
        x,
        y,
        n,
        make_generator(seed, pair_index, CH_SHARED),
        make_generator(seed, pair_index, CH_ALICE),
        make_generator(seed, pair_index, CH_SAMPLER),
    )
    return pair_index, _aggregate(protocol, x, y, res, keep_outcomes, keep_lambdas)


def simulate(
    protocol: ProtocolId,
    state: State,
    settings,
    rounds_per_setting: int,
    seed: int,
    workers: int = 1,
    keep_outcomes: bool = False,
    keep_lambdas: bool = False,
) -> SimulationResult:
    """Run ``rounds_per_setting`` rounds for every (x, y) pair in ``settings``.

    Setting pair k draws from streams (seed, k, channel), so results are
    independent of worker count and of the order pairs are executed in.
    """
    check_applicable(protocol, state)
    pairs = [(check_unit(x, "x"), check_unit(y, "y")) for x, y in settings]
    n = int(rounds_per_setting)
    if n < 0:
        raise ValidationError("rounds_per_setting must be >= 0")
    out = SimulationResult(protocol, state, n, int(seed))
    if n == 0:
        for x, y in pairs:
            out.settings.append(
                SettingResult(
                    x=x,
                    y=y,
                    rounds=0,
                    counts=np.zeros((2, 2), dtype=np.int64),
                    bits_sum=0.0,
                    bits_sq_sum=0.0,
                    worst_bits=0.0,
                    message_rounds=0,
                    symbol_counts=np.zeros(PROTOCOLS[protocol].alphabet_size + 1, dtype=np.int64),
                )
            )
        return out

    jobs = [
        (protocol, state, x, y, n, int(seed), k, keep_outcomes, keep_lambdas)
        for k, (x, y) in enumerate(pairs)
    ]
    if workers and workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        results = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, setting in pool.map(_simulate_pair, jobs):
                results[k] = setting
        out.settings = [results[k] for k in range(len(jobs))]
    else:
        out.settings = [_simulate_pair(job)[1] for job in jobs]
    return out
