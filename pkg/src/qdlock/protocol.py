"""Alice, Bob and Eve for the phase-scrambled single-photon link.

A public codebook has ``K = 2**log2_lines`` lines of ``n`` mask seeds.
The shared secret key is a line index ``s``; the mask used on photon ``j``
has seed ``derive(master_seed, s, j)`` and is materialised on demand, so
no ``K x n`` table ever exists.

Each channel use yields exactly one outcome: a detected symbol 0..63 or an
erasure (``ERASURE``).  Erasures are replaced by a uniformly random symbol
before Reed-Solomon decoding and flagged in the transcript.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import rs
from .budget import BITS_PER_SYMBOL, RS_LENGTH, BitAllocation
from .optics import (
    DEFAULT_GRID,
    DEFAULT_PAD,
    DEFAULT_PITCH_SPOTS,
    DEFAULT_SIGMA,
    LensProjector,
    LinearPhase,
    PhaseMask,
    default_geometry,
    mask_bits,
)
from .prf import MASK64, derive

ERASURE = -1
N_SYMBOLS = 64


class ProtocolError(ValueError):
    pass


# ------------------------------------------------------------------ codebook


@dataclass(frozen=True)
class Codebook:
    master_seed: int
    log2_lines: int
    n: int

    @property
    def K(self) -> int:
        return 1 << self.log2_lines

    def seed(self, line: int, position: int) -> int:
        if not 0 <= line < self.K:
            raise ProtocolError(f"line {line} outside codebook of {self.K} lines")
        if not 0 <= position < self.n:
            raise ProtocolError(f"position {position} outside 0..{self.n - 1}")
        return derive(self.master_seed, line, position)

    def mask(self, line: int, position: int) -> PhaseMask:
        return PhaseMask.from_seed(self.seed(line, position))


def build_codebook(master_seed: int, K: int, n: int) -> Codebook:
    if K < 1 or K & (K - 1):
        raise ProtocolError(f"K must be a power of two, got {K}")
    if n < 1:
        raise ProtocolError(f"n must be >= 1, got {n}")
    return Codebook(master_seed & MASK64, K.bit_length() - 1, n)


def codebook_for_bits(master_seed: int, key_bits: float, n: int) -> Codebook:
    """Smallest power-of-two codebook with ``log2 K >= key_bits``."""
    return Codebook(master_seed & MASK64, max(0, math.ceil(key_bits - 1e-12)), n)


@dataclass(frozen=True)
class SecretKey:
    line: int

    def check(self, book: Codebook) -> None:
        if not 0 <= self.line < book.K:
            raise ProtocolError(f"key line {self.line} outside codebook of {book.K} lines")


def random_line(rng: np.random.Generator, log2_lines: int) -> int:
    if log2_lines == 0:
        return 0
    raw = int.from_bytes(rng.bytes((log2_lines + 7) // 8), "little")
    return raw & ((1 << log2_lines) - 1)


# ------------------------------------------------------------------ channel


@dataclass(frozen=True)
class ChannelConfig:
    """Detection model.

    ``mode="analytic"``: correct with probability ``1 - p_err - p_loss``,
    a uniformly chosen wrong symbol with probability ``p_err``, erasure
    with probability ``p_loss``.  A receiver whose mask differs from
    Alice's sees a uniformly random symbol instead of the message.

    ``mode="physical"``: the optical model decides; one outcome is drawn
    from the 64 lens bins plus loss, then replaced by a uniform dark count
    with probability ``p_dark``.  With ``herald=True`` the loss bin is
    dropped and the draw is conditioned on a click, i.e. only the first
    detected photon of each setting is kept.
    """

    mode: str = "analytic"
    p_err: float = 0.10
    p_loss: float = 0.0
    p_dark: float = 0.0
    herald: bool = False
    sigma: float = DEFAULT_SIGMA
    n_grid: int = DEFAULT_GRID
    pad: int = DEFAULT_PAD
    alpha: float = 0.0
    pitch_spots: float = DEFAULT_PITCH_SPOTS

    def __post_init__(self):
        if self.mode not in ("analytic", "physical"):
            raise ProtocolError(f"unknown channel mode {self.mode!r}")
        for name in ("p_err", "p_loss", "p_dark"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ProtocolError(f"{name} must lie in [0, 1], got {v!r}")
        if self.mode == "analytic" and self.p_err + self.p_loss > 1.0 + 1e-12:
            raise ProtocolError("p_err + p_loss must not exceed 1")


class Channel:
    """Stateful wrapper holding the optical model for one configuration."""

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self._projector: LensProjector | None = None
        self._phases: list[LinearPhase] | None = None

    @property
    def phases(self) -> list[LinearPhase]:
        if self._phases is None:
            c = self.cfg
            self._phases, _ = default_geometry(c.sigma, c.n_grid, c.pad, c.pitch_spots)
        return self._phases

    @property
    def projector(self) -> LensProjector:
        if self._projector is None:
            c = self.cfg
            phases, geom = default_geometry(c.sigma, c.n_grid, c.pad, c.pitch_spots)
            self._phases = phases
            self._projector = LensProjector(phases, geom, c.sigma, c.alpha)
        return self._projector

    def detector_pmfs(self, messages, alice_seeds, receiver_seeds) -> np.ndarray:
        """65-bin PMFs for each use; ``receiver_seeds`` entries may be None."""
        messages = np.asarray(messages, dtype=np.int64)
        proj = self.projector
        blocks = proj.blocks
        out = np.empty((len(messages), N_SYMBOLS + 1))
        scrambled = []
        for i, (a, r) in enumerate(zip(alice_seeds, receiver_seeds)):
            if r is not None and a == r:
                out[i] = proj.clean_pmf(int(messages[i]))
            else:
                scrambled.append(i)
        for s in range(0, len(scrambled), 256):
            idx = scrambled[s:s + 256]
            signs = np.empty((len(idx), blocks, blocks))
            for k, i in enumerate(idx):
                bits = mask_bits(alice_seeds[i], blocks)
                if receiver_seeds[i] is not None:
                    bits = bits ^ mask_bits(receiver_seeds[i], blocks)
                signs[k] = 1.0 - 2.0 * bits
            out[idx] = proj.pmfs(messages[idx], signs)
        return out

    def transmit(self, messages, alice_seeds, receiver_seeds, rng: np.random.Generator) -> np.ndarray:
        """One outcome per use: symbol 0..63 or ``ERASURE``."""
        messages = np.asarray(messages, dtype=np.int64)
        b = len(messages)
        if np.any((messages < 0) | (messages >= N_SYMBOLS)):
            raise ProtocolError("messages must be 6-bit symbols")
        c = self.cfg
        if c.mode == "analytic":
            u = rng.random(b)
            wrong = (messages + rng.integers(1, N_SYMBOLS, size=b)) % N_SYMBOLS
            out = np.where(u < c.p_loss + c.p_err, wrong, messages)
            out = np.where(u < c.p_loss, ERASURE, out)
            locked = np.array([r is None or a != r for a, r in zip(alice_seeds, receiver_seeds)],
                              dtype=bool)
            if locked.any():
                noise = rng.integers(0, N_SYMBOLS, size=b)
                out = np.where(locked & (out != ERASURE), noise, out)
            return out
        pmfs = self.detector_pmfs(messages, alice_seeds, receiver_seeds)
        if c.herald:
            lens = pmfs[:, :-1]
            mass = lens.sum(axis=1, keepdims=True)
            probs = np.where(mass > 0, lens / np.where(mass > 0, mass, 1.0), 0.0)
            probs = np.concatenate([probs, (mass <= 0).astype(float)], axis=1)
        else:
            probs = pmfs
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random(b)
        out = (cdf < u[:, None]).sum(axis=1)
        out = np.where(out == N_SYMBOLS, ERASURE, out)
        if c.p_dark:
            dark = rng.random(b) < c.p_dark
            out = np.where(dark, rng.integers(0, N_SYMBOLS, size=b), out)
        return out


def channel_transmit(pair: tuple[LinearPhase, PhaseMask], receiver_mask: PhaseMask | None,
                     cfg: ChannelConfig, rng: np.random.Generator,
                     channel: Channel | None = None) -> int:
    """Single-use convenience wrapper around :meth:`Channel.transmit`."""
    phase, mask = pair
    ch = channel or Channel(cfg)
    recv = None if receiver_mask is None else receiver_mask.seed
    return int(ch.transmit([phase.index], [mask.seed], [recv], rng)[0])


# ------------------------------------------------------------------ parties


@dataclass(frozen=True)
class TranscriptRecord:
    use_index: int
    message: int
    mask_seed: int
    detected: int
    erased: bool
    party: str


def alice_encode(messages: Sequence[int], key: SecretKey, book: Codebook,
                 phases: Sequence[LinearPhase] | None = None) -> list[tuple[LinearPhase, PhaseMask]]:
    """Pair message ``j`` with the mask at position ``j`` of line ``key.line``."""
    if len(messages) != book.n:
        raise ProtocolError(f"expected {book.n} messages, got {len(messages)}")
    return _encode_prefix(messages, key, book, phases)


def _encode_prefix(messages, key: SecretKey, book: Codebook, phases=None):
    # also used for a short final block, which fills only the first positions
    key.check(book)
    if len(messages) > book.n:
        raise ProtocolError(f"at most {book.n} messages per block, got {len(messages)}")
    if phases is None:
        phases, _ = default_geometry()
    return [(phases[int(m)], book.mask(key.line, j)) for j, m in enumerate(messages)]


def _receive(pairs, receiver_seeds, channel: Channel, rng, party: str):
    messages = np.array([p[0].index for p in pairs], dtype=np.int64)
    alice = [p[1].seed for p in pairs]
    det = channel.transmit(messages, alice, receiver_seeds, rng)
    erased = det == ERASURE
    fill = rng.integers(0, N_SYMBOLS, size=len(det))
    symbols = np.where(erased, fill, det)
    records = [
        TranscriptRecord(i, int(messages[i]), int(alice[i]), int(symbols[i]),
                         bool(erased[i]), party)
        for i in range(len(det))
    ]
    return symbols, erased, records


def bob_decode(pairs, key: SecretKey, book: Codebook, channel: Channel,
               rng: np.random.Generator):
    """Unscramble with the keyed masks and detect.

    Returns ``(symbols, erased, records)``; erased uses carry a random
    symbol.
    """
    key.check(book)
    seeds = [book.seed(key.line, j) for j in range(len(pairs))]
    return _receive(pairs, seeds, channel, rng, "Bob")


def eve_attack(pairs, book: Codebook, channel: Channel, rng: np.random.Generator,
               per: str = "photon"):
    """Bob's apparatus with a uniformly guessed codebook line.

    ``per="photon"`` draws a fresh guess for every use, ``per="block"`` one
    guess for the whole call.
    """
    if per not in ("photon", "block"):
        raise ProtocolError(f"per must be 'photon' or 'block', got {per!r}")
    guess = random_line(rng, book.log2_lines)
    seeds = []
    for j in range(len(pairs)):
        if per == "photon":
            guess = random_line(rng, book.log2_lines)
        seeds.append(book.seed(guess, j))
    return _receive(pairs, seeds, channel, rng, "Eve")


# ------------------------------------------------------------------ framing


def _prefix_width(capacity: int) -> int:
    return max(1, int(capacity).bit_length())


@dataclass(frozen=True)
class PacketPlan:
    """Partition of the ``x`` data symbols of one RS(63, x) packet.

    The new-key field holds exactly ``newkey_bits`` bits.  The message field
    starts with a length prefix wide enough for its own size.
    """

    x: int
    message_symbols: int
    newkey_symbols: int
    newkey_bits: int

    def __post_init__(self):
        if not 1 <= self.x <= RS_LENGTH - 1:
            raise ProtocolError(f"x must be in 1..62, got {self.x}")
        if self.message_symbols + self.newkey_symbols != self.x:
            raise ProtocolError("message and new-key symbols must add up to x")
        if self.message_symbols < 1 or self.newkey_symbols < 0:
            raise ProtocolError("plan leaves no room for a message")
        if self.newkey_bits > BITS_PER_SYMBOL * self.newkey_symbols:
            raise ProtocolError("new-key field too small")
        if self.message_capacity < 0:
            raise ProtocolError("message field too small for its length prefix")

    @property
    def parity(self) -> int:
        return RS_LENGTH - self.x

    @property
    def correctable(self) -> int:
        return self.parity // 2

    @property
    def prefix_bits(self) -> int:
        return _prefix_width(BITS_PER_SYMBOL * self.message_symbols)

    @property
    def message_capacity(self) -> int:
        return BITS_PER_SYMBOL * self.message_symbols - self.prefix_bits


def plan_packet(alloc: BitAllocation) -> PacketPlan:
    """Size the new-key field to replace the key a packet consumes."""
    if alloc.rs_k >= RS_LENGTH:
        raise ProtocolError("a packet plan needs parity symbols (x <= 62)")
    bits = math.ceil(RS_LENGTH * alloc.newkey_bits - 1e-9)
    key_syms = math.ceil(bits / BITS_PER_SYMBOL)
    if key_syms >= alloc.rs_k:
        raise ProtocolError(f"RS(63,{alloc.rs_k}) cannot carry {bits} key bits and a message")
    return PacketPlan(alloc.rs_k, alloc.rs_k - key_syms, key_syms, bits)


def _bits_to_symbols(bits: np.ndarray) -> list[int]:
    b = np.asarray(bits, dtype=np.int64).reshape(-1, BITS_PER_SYMBOL)
    weights = 1 << np.arange(BITS_PER_SYMBOL - 1, -1, -1)
    return [int(v) for v in b @ weights]


def _symbols_to_bits(symbols: Sequence[int]) -> np.ndarray:
    s = np.asarray(symbols, dtype=np.int64)[:, None]
    return ((s >> np.arange(BITS_PER_SYMBOL - 1, -1, -1)) & 1).astype(np.uint8).ravel()


def _uint_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def frame_packet(message_bits, newkey_bits, plan: PacketPlan) -> list[int]:
    """Lay out payloads as ``[len][message][pad][new key][pad]`` and RS-encode."""
    msg = np.asarray(message_bits, dtype=np.uint8).ravel()
    key = np.asarray(newkey_bits, dtype=np.uint8).ravel()
    if np.any(msg > 1) or np.any(key > 1):
        raise ProtocolError("payloads must be bit arrays")
    if len(msg) > plan.message_capacity:
        raise ProtocolError(f"message of {len(msg)} bits exceeds capacity {plan.message_capacity}")
    if len(key) != plan.newkey_bits:
        raise ProtocolError(f"new key must be exactly {plan.newkey_bits} bits, got {len(key)}")
    data = np.zeros(BITS_PER_SYMBOL * plan.x, dtype=np.uint8)
    w = plan.prefix_bits
    data[:w] = _uint_bits(len(msg), w)
    data[w:w + len(msg)] = msg
    k0 = BITS_PER_SYMBOL * plan.message_symbols
    data[k0:k0 + len(key)] = key
    return rs.rs_encode(_bits_to_symbols(data))


def unframe_packet(received: Sequence[int], plan: PacketPlan):
    """Decode 63 received symbols; returns ``(message, new_key)`` or None."""
    res = rs.rs_decode(received, plan.x)
    if not res.ok:
        return None
    return unframe_data(res.data, plan)


def unframe_data(data_symbols: Sequence[int], plan: PacketPlan):
    """Split the ``x`` decoded data symbols into payloads; None if malformed."""
    data = _symbols_to_bits(data_symbols)
    w = plan.prefix_bits
    length = int(data[:w] @ (1 << np.arange(w - 1, -1, -1)))
    if length > plan.message_capacity:
        return None
    k0 = BITS_PER_SYMBOL * plan.message_symbols
    return data[w:w + length].copy(), data[k0:k0 + plan.newkey_bits].copy()


# ------------------------------------------------------------------ key ledger


@dataclass
class KeyLedger:
    """Running balance of secret-key bits; going negative is flagged, not fatal."""

    consumed: float = 0.0
    replenished: float = 0.0
    history: list = field(default_factory=list)

    def consume(self, bits: float) -> float:
        self.consumed += bits
        self.history.append(("consume", bits))
        return self.balance

    def replenish(self, bits: float) -> float:
        self.replenished += bits
        self.history.append(("replenish", bits))
        return self.balance

    @property
    def balance(self) -> float:
        return self.replenished - self.consumed

    @property
    def negative(self) -> bool:
        return self.balance < 0

    @property
    def self_sustaining(self) -> bool:
        return self.replenished >= self.consumed


def key_ledger(consume: Iterable[float] = (), replenish: Iterable[float] = ()) -> KeyLedger:
    led = KeyLedger()
    for b in consume:
        led.consume(b)
    for b in replenish:
        led.replenish(b)
    return led


# ------------------------------------------------------------------ session


@dataclass(frozen=True)
class SessionConfig:
    master_seed: int = 1
    n: int = 126
    d: float = 64.0
    x: int = 35
    K: int | None = None
    channel: ChannelConfig = ChannelConfig()
    eve_per: str = "photon"
    rotate_keys: bool = False


@dataclass
class SessionResult:
    plan: PacketPlan
    allocation: BitAllocation
    book: Codebook
    successes: list[bool]
    decode_failures: int
    bob_records: list[TranscriptRecord]
    eve_records: list[TranscriptRecord]
    ledger: KeyLedger

    @property
    def packets(self) -> int:
        return len(self.successes)

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes)) if self.successes else float("nan")


def _key_to_line(bits: np.ndarray, log2_lines: int) -> int:
    v = 0
    for b in bits[:log2_lines]:
        v = (v << 1) | int(b)
    return v


def run_session(cfg: SessionConfig, packets: int, rng: np.random.Generator,
                eve: bool = False, record: bool = True,
                allocation: BitAllocation | None = None) -> SessionResult:
    """Send ``packets`` RS packets, ``n/63`` per codebook block."""
    from .budget import BlockParams, allocate_bits

    if cfg.n % RS_LENGTH:
        raise ProtocolError(f"n must be a multiple of 63 to carry whole packets, got {cfg.n}")
    alloc = allocation or allocate_bits(BlockParams(cfg.n, cfg.d), cfg.x)
    if not alloc.feasible:
        raise ProtocolError(f"allocation for RS(63,{cfg.x}) is infeasible")
    plan = plan_packet(alloc)
    if cfg.K is not None:
        book = build_codebook(cfg.master_seed, cfg.K, cfg.n)
    else:
        book = codebook_for_bits(cfg.master_seed, cfg.n * alloc.newkey_bits, cfg.n)
    channel = Channel(cfg.channel)
    phases = channel.phases if cfg.channel.mode == "physical" else _logical_phases()
    alice_line = bob_line = random_line(rng, book.log2_lines)
    per_block = cfg.n // RS_LENGTH
    ledger = KeyLedger()
    successes, bob_rec, eve_rec = [], [], []
    failures = 0
    for first in range(0, packets, per_block):
        count = min(per_block, packets - first)
        ledger.consume(book.log2_lines)
        sent, words = [], []
        for _ in range(count):
            size = int(rng.integers(0, plan.message_capacity + 1))
            msg = rng.integers(0, 2, size=size, dtype=np.uint8)
            newkey = rng.integers(0, 2, size=plan.newkey_bits, dtype=np.uint8)
            sent.append((msg, newkey))
            words.extend(frame_packet(msg, newkey, plan))
        pairs = _encode_prefix(words, SecretKey(alice_line), book, phases)
        got, _, recs = bob_decode(pairs, SecretKey(bob_line), book, channel, rng)
        offset = first * RS_LENGTH
        if record:
            bob_rec.extend(replace(r, use_index=offset + r.use_index) for r in recs)
        if eve:
            _, _, erecs = eve_attack(pairs, book, channel, rng, per=cfg.eve_per)
            if record:
                eve_rec.extend(replace(r, use_index=offset + r.use_index) for r in erecs)
        alice_keys, bob_keys = [], []
        for i, (msg, newkey) in enumerate(sent):
            lo = i * RS_LENGTH
            res = rs.rs_decode([int(v) for v in got[lo:lo + RS_LENGTH]], plan.x)
            out = unframe_data(res.data, plan) if res.ok else None
            # any wrong data symbol fails the packet, even one hidden in padding
            ok = out is not None and res.data == tuple(words[lo:lo + plan.x])
            failures += not res.ok
            successes.append(bool(ok))
            alice_keys.append(newkey)
            bob_keys.append(out[1] if out is not None else np.zeros(plan.newkey_bits, np.uint8))
            if ok:
                ledger.replenish(plan.newkey_bits)
        if cfg.rotate_keys:
            # the next line index is read from the key just delivered
            alice_line = _key_to_line(np.concatenate(alice_keys), book.log2_lines)
            bob_line = _key_to_line(np.concatenate(bob_keys), book.log2_lines)
    return SessionResult(plan, alloc, book, successes, failures, bob_rec, eve_rec, ledger)


def _logical_phases() -> list[LinearPhase]:
    # analytic mode never touches the optics, so placeholder gradients suffice
    return [LinearPhase(m, 0.0, 0.0) for m in range(N_SYMBOLS)]


def write_transcript(path, records: Iterable[TranscriptRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["use_index", "message", "mask_seed", "detected", "erased", "party"])
        for r in records:
            w.writerow([r.use_index, r.message, r.mask_seed, r.detected, int(r.erased), r.party])


def read_transcript(path) -> list[TranscriptRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TranscriptRecord(int(r["use_index"]), int(r["message"]), int(r["mask_seed"]),
                         int(r["detected"]), bool(int(r["erased"])), r["party"])
        for r in rows
    ]
