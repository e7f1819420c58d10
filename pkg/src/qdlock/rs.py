"""Reed-Solomon (63, x) codes over GF(64).

Field: GF(2^6) built from the primitive polynomial z^6 + z + 1 (0x43) with
primitive element alpha = z.  Generator polynomial for RS(63, x)::

    g(z) = (z - alpha^1)(z - alpha^2) ... (z - alpha^(63-x))

Codewords are systematic: the x data symbols come first, followed by the
63 - x parity symbols.  Symbol ``c[k]`` is the coefficient of
``z^(62-k)``.

Decoding is errors-only: syndromes, Berlekamp-Massey, Chien search and
Forney.  Up to ``t = (63-x)//2`` symbol errors are always corrected.  With
more errors the decoder usually reports failure, but it can land on a
different codeword (miscorrection); callers that need certainty must
check the payload by other means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PRIMITIVE_POLY = 0x43
FIELD_SIZE = 64
ORDER = FIELD_SIZE - 1
N = 63


def _build_tables():
    exp = [0] * (2 * ORDER)
    log = [0] * FIELD_SIZE
    x = 1
    for i in range(ORDER):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & FIELD_SIZE:
            x ^= PRIMITIVE_POLY
    for i in range(ORDER, 2 * ORDER):
        exp[i] = exp[i - ORDER]
    return exp, log


EXP, LOG = _build_tables()


def gf_add(a: int, b: int) -> int:
    return a ^ b


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return EXP[LOG[a] + LOG[b]]


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("zero has no inverse in GF(64)")
    return EXP[ORDER - LOG[a]]


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(64)")
    if a == 0:
        return 0
    return EXP[(LOG[a] - LOG[b]) % ORDER]


def gf_pow(a: int, e: int) -> int:
    if a == 0:
        return 0 if e else 1
    return EXP[(LOG[a] * e) % ORDER]


class DecodeFailure(Exception):
    """Raised internally; :func:`rs_decode` turns it into a result value."""


@dataclass(frozen=True)
class DecodeResult:
    data: tuple[int, ...] | None
    corrected: int = 0

    @property
    def ok(self) -> bool:
        return self.data is not None


def _check_symbols(symbols: Sequence[int]) -> list[int]:
    out = [int(s) for s in symbols]
    for s in out:
        if not 0 <= s < FIELD_SIZE:
            raise ValueError(f"symbol out of range 0..63: {s}")
    return out


def _check_k(k: int) -> None:
    if int(k) != k or not 1 <= k <= N - 1:
        raise ValueError(f"data length x must be in 1..62, got {k!r}")


_GENERATORS: dict[int, list[int]] = {}


def generator_poly(nsym: int) -> list[int]:
    """Coefficients of g(z), highest degree first (monic)."""
    g = _GENERATORS.get(nsym)
    if g is None:
        g = [1]
        for i in range(1, nsym + 1):
            root = EXP[i]
            nxt = g + [0]
            for j, coef in enumerate(g):
                nxt[j + 1] ^= gf_mul(coef, root)
            g = nxt
        _GENERATORS[nsym] = g
    return g


def rs_encode(data: Sequence[int]) -> list[int]:
    """Systematic RS(63, len(data)) encoding."""
    msg = _check_symbols(data)
    k = len(msg)
    _check_k(k)
    nsym = N - k
    gen = generator_poly(nsym)
    # long division of data(z) * z^nsym by the monic generator
    rem = msg + [0] * nsym
    for i in range(k):
        coef = rem[i]
        if coef:
            lc = LOG[coef]
            for j in range(1, nsym + 1):
                gj = gen[j]
                if gj:
                    rem[i + j] ^= EXP[lc + LOG[gj]]
    return msg + rem[k:]


def syndromes(received: Sequence[int], nsym: int) -> list[int]:
    out = []
    for i in range(1, nsym + 1):
        li = i
        s = 0
        for c in received:
            s = (EXP[LOG[s] + li] if s else 0) ^ c
        out.append(s)
    return out


def is_codeword(word: Sequence[int], k: int) -> bool:
    _check_k(k)
    return not any(syndromes(_check_symbols(word), N - k))


def _berlekamp_massey(synd: list[int]) -> list[int]:
    """Error locator Lambda(z), lowest degree first."""
    lam = [1]
    prev = [1]
    L = 0
    m = 1
    b = 1
    for r in range(len(synd)):
        delta = synd[r]
        for i in range(1, L + 1):
            if i < len(lam) and lam[i]:
                delta ^= gf_mul(lam[i], synd[r - i])
        if delta == 0:
            m += 1
            continue
        coef = gf_div(delta, b)
        shifted = [0] * m + [gf_mul(coef, p) for p in prev]
        new = lam + [0] * max(0, len(shifted) - len(lam))
        for i, s in enumerate(shifted):
            new[i] ^= s
        if 2 * L <= r:
            prev = lam
            L = r + 1 - L
            b = delta
            m = 1
        else:
            m += 1
        lam = new
    while len(lam) > 1 and lam[-1] == 0:
        lam.pop()
    if len(lam) - 1 != L:
        raise DecodeFailure("inconsistent locator degree")
    return lam


def _poly_eval_low(poly: list[int], x: int) -> int:
    y = 0
    for coef in reversed(poly):
        y = gf_mul(y, x) ^ coef
    return y


def _correct(word: list[int], nsym: int) -> tuple[list[int], int]:
    synd = syndromes(word, nsym)
    if not any(synd):
        return word, 0
    lam = _berlekamp_massey(synd)
    nerr = len(lam) - 1
    if nerr == 0 or 2 * nerr > nsym:
        raise DecodeFailure("too many errors")
    # Chien search: position k has locator X = alpha^(62-k)
    positions = []
    for k in range(N):
        xinv = EXP[(ORDER - (N - 1 - k)) % ORDER]
        if _poly_eval_low(lam, xinv) == 0:
            positions.append(k)
    if len(positions) != nerr:
        raise DecodeFailure("locator roots do not match degree")
    # Omega(z) = S(z) Lambda(z) mod z^nsym, S(z) = sum S_{i+1} z^i
    omega = [0] * nsym
    for i, s in enumerate(synd):
        if s:
            for j, l in enumerate(lam):
                if i + j < nsym and l:
                    omega[i + j] ^= gf_mul(s, l)
    # formal derivative of Lambda
    dlam = [lam[i] if i % 2 == 1 else 0 for i in range(1, len(lam))]
    out = list(word)
    for k in positions:
        X = EXP[(N - 1 - k) % ORDER]
        xinv = gf_inv(X)
        num = _poly_eval_low(omega, xinv)
        den = _poly_eval_low(dlam, xinv)
        if den == 0:
            raise DecodeFailure("zero derivative at error locator")
        # first consecutive root is alpha^1, so magnitude = Omega/Lambda'
        out[k] ^= gf_div(num, den)
    if any(syndromes(out, nsym)):
        raise DecodeFailure("correction did not yield a codeword")
    return out, nerr


def rs_decode(received: Sequence[int], k: int) -> DecodeResult:
    """Decode a 63-symbol word; failure is returned, not raised."""
    _check_k(k)
    word = _check_symbols(received)
    if len(word) != N:
        raise ValueError(f"received word must have 63 symbols, got {len(word)}")
    try:
        fixed, nerr = _correct(word, N - k)
    except DecodeFailure:
        return DecodeResult(None)
    return DecodeResult(tuple(fixed[:k]), nerr)


def to_bytes(codeword: Sequence[int]) -> bytes:
    """Serialise a codeword as 63 bytes, one symbol per byte."""
    cw = _check_symbols(codeword)
    if len(cw) != N:
        raise ValueError("codeword must have 63 symbols")
    return bytes(cw)


def from_bytes(blob: bytes) -> list[int]:
    if len(blob) != N:
        raise ValueError("codeword blob must be 63 bytes")
    return _check_symbols(blob)


def test_vector(seed: int, k: int) -> tuple[list[int], list[int]]:
    """Deterministic (data, codeword) pair used in the documented vectors."""
    rng = np.random.default_rng(seed)
    data = [int(v) for v in rng.integers(0, FIELD_SIZE, size=k)]
    return data, rs_encode(data)
