"""Statistics over transcripts and the summary CSV tables."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .budget import (
    RS_LENGTH,
    BlockParams,
    allocate_bits,
    allocation_from_key_rate,
    security_budget,
)
from .protocol import (
    N_SYMBOLS,
    ChannelConfig,
    ProtocolError,
    SessionConfig,
    TranscriptRecord,
    plan_packet,
    run_session,
)


@dataclass
class JointDistribution:
    """64x64 count matrix, rows = sent symbol, columns = detected symbol."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (N_SYMBOLS, N_SYMBOLS) or np.any(c < 0):
            raise ValueError("counts must be a nonnegative 64x64 array")
        self.counts = c

    @classmethod
    def empty(cls) -> "JointDistribution":
        return cls(np.zeros((N_SYMBOLS, N_SYMBOLS), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        t = self.total
        if t == 0:
            raise ValueError("empty joint distribution")
        return self.counts / t

    def diagonal_mass(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def __add__(self, other: "JointDistribution") -> "JointDistribution":
        return JointDistribution(self.counts + other.counts)


def accumulate_joint(records: Iterable[TranscriptRecord]) -> JointDistribution:
    """Count (sent, detected) pairs, skipping erasures."""
    sent, det = [], []
    for r in records:
        if not r.erased:
            sent.append(r.message)
            det.append(r.detected)
    return joint_from_arrays(sent, det)


def joint_from_arrays(sent, detected, erased=None) -> JointDistribution:
    sent = np.asarray(sent, dtype=np.int64)
    detected = np.asarray(detected, dtype=np.int64)
    if erased is not None:
        keep = ~np.asarray(erased, dtype=bool)
        sent, detected = sent[keep], detected[keep]
    counts = np.zeros(N_SYMBOLS * N_SYMBOLS, dtype=np.int64)
    if len(sent):
        counts += np.bincount(sent * N_SYMBOLS + detected, minlength=N_SYMBOLS * N_SYMBOLS)
    return JointDistribution(counts.reshape(N_SYMBOLS, N_SYMBOLS))


def mutual_information(joint: JointDistribution | np.ndarray, correction: str | None = None) -> float:
    """Mutual information of a joint table in bits.

    The default is the plug-in estimate.  ``correction="miller-madow"``
    adds the first-order bias term of each entropy, using the occupied
    cell counts; it needs raw counts, not probabilities.
    """
    counts = joint.counts if isinstance(joint, JointDistribution) else np.asarray(joint, float)
    total = counts.sum()
    if not total > 0:
        raise ValueError("joint distribution has no mass")
    p = counts / total
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    ratio = p[nz] / (pa @ pb)[nz]
    mi = float(np.sum(p[nz] * np.log2(ratio)))
    if correction == "miller-madow":
        occupied = int(nz.sum()), int((pa > 0).sum()), int((pb > 0).sum())
        mi += (occupied[1] + occupied[2] - occupied[0] - 1) / (2.0 * total * math.log(2.0))
    elif correction is not None:
        raise ValueError(f"unknown correction {correction!r}")
    return max(0.0, mi)


def symmetric_channel_mi(p_err: float, q: int = N_SYMBOLS) -> float:
    """Mutual information of the q-ary symmetric channel with uniform input."""
    if not 0.0 <= p_err <= 1.0:
        raise ValueError("p_err must lie in [0, 1]")
    h = 0.0
    for p in (p_err, 1.0 - p_err):
        if p > 0:
            h -= p * math.log2(p)
    return math.log2(q) - h - p_err * math.log2(q - 1)


def plugin_bias(cells: int, samples: int) -> float:
    """Leading-order upward bias of the plug-in estimate, in bits."""
    return (cells - 1) / (2.0 * samples * math.log(2.0))


def binomial_success(x: int, p_err: float) -> float:
    """Probability that at most ``(63-x)//2`` of 63 i.i.d. symbols are wrong."""
    return float(stats.binom.cdf((RS_LENGTH - x) // 2, RS_LENGTH, p_err))


@dataclass(frozen=True)
class SuccessResult:
    x: int
    n: int
    d: float
    packets: int
    successes: int
    oracle: float
    capacity_bits: float

    @property
    def rate(self) -> float:
        return self.successes / self.packets

    @property
    def stderr(self) -> float:
        """Binomial standard error evaluated at the oracle probability."""
        p = self.oracle
        return math.sqrt(max(p * (1 - p), 1e-300) / self.packets)

    def within(self, sigmas: float = 3.0) -> bool:
        return abs(self.rate - self.oracle) <= sigmas * self.stderr + 1e-12


def packet_success_experiment(x: int, channel: ChannelConfig, packets: int,
                              rng: np.random.Generator, n: int = 126, d: float = 64.0,
                              master_seed: int = 1) -> SuccessResult:
    """Fraction of packets whose payloads come back bit-exact.

    The framing needs a feasible allocation; for plans where the budget
    leaves no message room the code is exercised with the key rate set to
    zero so the codec statistics can still be measured.
    """
    if packets < 1:
        raise ValueError("packets must be >= 1")
    alloc = allocate_bits(BlockParams(n, d), x)
    used = alloc
    try:
        if not alloc.feasible:
            raise ProtocolError("infeasible")
        plan_packet(alloc)
    except ProtocolError:
        used = allocation_from_key_rate(0.0, x)
    cfg = SessionConfig(master_seed=master_seed, n=n, d=d, x=x, channel=channel)
    res = run_session(cfg, packets, rng, record=False, allocation=used)
    p_sym = channel.p_err + channel.p_loss * (N_SYMBOLS - 1) / N_SYMBOLS
    oracle = binomial_success(x, p_sym) if channel.mode == "analytic" else float("nan")
    return SuccessResult(x, n, d, packets, int(sum(res.successes)), oracle,
                         alloc.message_bits)


# ------------------------------------------------------------------ tables


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def keyrate_table(path, d_values: Sequence[float], n_values: Sequence[int], c: float = 0.5) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "d", "key_per_photon", "feasible"])
        for d in d_values:
            for n in n_values:
                b = security_budget(d, int(n), c)
                w.writerow([int(n), _fmt(d), _fmt(b.key_per_photon), int(b.feasible)])


def allocation_table(path, d_values: Sequence[float], n_values: Sequence[int],
                     xs: Sequence[int] = range(1, RS_LENGTH + 1), c: float = 0.5) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "n", "d", "redundancy", "newkey", "message", "feasible"])
        for d in d_values:
            for n in n_values:
                params = BlockParams(int(n), d)
                for x in xs:
                    a = allocate_bits(params, int(x), c)
                    w.writerow([a.rs_k, int(n), _fmt(d), _fmt(a.redundancy_bits),
                                _fmt(a.newkey_bits), _fmt(a.message_bits), int(a.feasible)])


def success_table(path, results: Sequence[SuccessResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "n", "d", "packets", "success_rate", "capacity_bits"])
        for r in results:
            w.writerow([r.x, r.n, _fmt(r.d), r.packets, _fmt(r.rate), _fmt(r.capacity_bits)])


def joint_table(path, joint: JointDistribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sent", "detected", "count"])
        for a in range(N_SYMBOLS):
            for b in range(N_SYMBOLS):
                w.writerow([a, b, int(joint.counts[a, b])])


def read_joint_table(path) -> JointDistribution:
    counts = np.zeros((N_SYMBOLS, N_SYMBOLS), dtype=np.int64)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            counts[int(r["sent"]), int(r["detected"])] += int(r["count"])
    return JointDistribution(counts)


def emit_tables(out_dir, d_values: Sequence[float] = (64.0, 650.0),
                n_values: Sequence[int] = (63, 126),
                keyrate_n: Sequence[int] = tuple(range(1, 1001)),
                success_xs: Sequence[int] = (),
                packets: int = 420, p_err: float = 0.10, seed: int = 0,
                c: float = 0.5) -> list[str]:
    """Write keyrate.csv, alloc.csv and (if ``success_xs``) success.csv."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    p = os.path.join(out_dir, "keyrate.csv")
    keyrate_table(p, d_values, keyrate_n, c)
    written.append(p)
    p = os.path.join(out_dir, "alloc.csv")
    allocation_table(p, d_values, n_values, c=c)
    written.append(p)
    if success_xs:
        results = []
        root = np.random.SeedSequence(seed)
        grid = [(d, n, x) for d in d_values for n in n_values for x in success_xs]
        for (d, n, x), child in zip(grid, root.spawn(len(grid))):
            results.append(packet_success_experiment(
                x, ChannelConfig(p_err=p_err), packets, np.random.default_rng(child), n=n, d=d))
        p = os.path.join(out_dir, "success.csv")
        success_table(p, results)
        written.append(p)
    return written
