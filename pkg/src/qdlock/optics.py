"""Scalar Fourier-optics model of the scrambled single-photon channel.

Conventions
-----------
* Fields live on an ``n x n`` grid of SLM pixels, indexed ``[row, col]``
  (``row`` is y, ``col`` is x).  Pixel coordinates are measured from the
  grid centre, ``x = i - (n - 1)/2``, so every grid has exact point
  symmetry.
* Propagation zero-pads to ``n * pad`` pixels and takes the unnormalised
  2-D DFT.  Probability maps are ``fftshift``-ed so the DC bin sits at
  index ``n_pad // 2``.  A linear phase ``exp(i (phi_x x + phi_y y))``
  moves the focal spot by ``phi * n_pad / (2 pi)`` Fourier pixels.
* Binary phase masks are applied as exact ``+1 / -1`` factors, so a mask
  applied twice is the identity to the last bit.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.fft as sfft

from .prf import prf_array

DEFAULT_GRID = 512
DEFAULT_PAD = 3
DEFAULT_SIGMA = 100.0
MASK_BLOCKS = 128
SUPERPIXEL = 4
DEFAULT_PITCH_SPOTS = 8.0

MAP_MAGIC = b"QDLP"


class GeometryError(ValueError):
    pass


def coords(n: int) -> np.ndarray:
    return np.arange(n, dtype=float) - (n - 1) / 2.0


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Complex transverse amplitude of one photon; read-only once built."""

    amplitudes: np.ndarray
    sigma: float | None = None

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=np.complex128)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"field must be a square 2-D array, got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @property
    def n(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


@dataclass(frozen=True)
class LinearPhase:
    """Message ``index`` encoded as a phase gradient in radians per pixel."""

    index: int
    phi_x: float
    phi_y: float

    def factor(self, n: int) -> np.ndarray:
        x = coords(n)
        return np.outer(np.exp(1j * self.phi_y * x), np.exp(1j * self.phi_x * x))


class PhaseMask:
    """Binary (0 / pi) scrambling pattern built from 4x4 superpixels.

    Bits are generated from the seed on first access, so a mask that is
    only carried around (e.g. in the analytic channel) costs nothing.
    """

    __slots__ = ("seed", "superpixel", "blocks", "_bits")

    def __init__(self, seed: int, bits: np.ndarray | None = None,
                 superpixel: int = SUPERPIXEL, blocks: int = MASK_BLOCKS):
        self.seed = int(seed)
        self.superpixel = superpixel
        self._bits = None
        if bits is not None:
            b = np.array(bits, dtype=np.uint8)
            if b.ndim != 2 or np.any(b > 1):
                raise ValueError("mask bits must be a 2-D array of 0/1")
            b.setflags(write=False)
            self._bits = b
            blocks = b.shape[0]
        self.blocks = blocks

    @classmethod
    def from_seed(cls, seed: int, blocks: int = MASK_BLOCKS, superpixel: int = SUPERPIXEL):
        return cls(seed, None, superpixel, blocks)

    @property
    def bits(self) -> np.ndarray:
        if self._bits is None:
            b = mask_bits(self.seed, self.blocks)
            b.setflags(write=False)
            self._bits = b
        return self._bits

    def __repr__(self) -> str:
        return f"PhaseMask(seed={self.seed:#x}, blocks={self.blocks})"

    @property
    def n(self) -> int:
        return self.blocks * self.superpixel

    def block_signs(self) -> np.ndarray:
        return 1.0 - 2.0 * self.bits.astype(float)

    def signs(self) -> np.ndarray:
        s = self.block_signs()
        return np.repeat(np.repeat(s, self.superpixel, 0), self.superpixel, 1)

    def phase(self) -> np.ndarray:
        """Mask phase in radians (0 or pi) at full SLM resolution."""
        return math.pi * (1.0 - self.signs()) / 2.0


@dataclass(frozen=True)
class Misfocus:
    """Quadratic phase ``exp(i alpha (x^2 + y^2))``; alpha in rad / pixel^2."""

    alpha: float

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")

    def factor(self, n: int) -> np.ndarray:
        q = np.exp(1j * self.alpha * coords(n) ** 2)
        return np.outer(q, q)


PhaseOp = Union[LinearPhase, PhaseMask, Misfocus]


def mask_bits(seed: int, blocks: int = MASK_BLOCKS) -> np.ndarray:
    """Superpixel ``(i, j)`` is bit 0 of ``prf(seed, i * blocks + j)``."""
    counters = np.arange(blocks * blocks, dtype=np.uint64)
    return (prf_array(seed, counters) & np.uint64(1)).astype(np.uint8).reshape(blocks, blocks)


def gaussian_field(sigma: float = DEFAULT_SIGMA, n: int = DEFAULT_GRID) -> FieldGrid:
    """Normalised Gaussian amplitude ``exp(-(x^2 + y^2) / (4 sigma^2))``.

    ``sigma`` is the standard deviation of the intensity profile in SLM
    pixels.  It must satisfy ``0 < sigma <= n/4`` so the 4-sigma diameter
    fits on the grid.
    """
    if not 0 < sigma <= n / 4:
        raise ValueError(f"sigma must lie in (0, n/4] = (0, {n / 4}], got {sigma!r}")
    a = gaussian_profile(sigma, n)
    return FieldGrid(np.outer(a, a), sigma=sigma)


def gaussian_profile(sigma: float, n: int) -> np.ndarray:
    """1-D factor of the Gaussian amplitude, normalised to unit energy."""
    a = np.exp(-coords(n) ** 2 / (4.0 * sigma**2))
    return a / math.sqrt(np.sum(a**2))


def apply_phase(field: FieldGrid, op: PhaseOp) -> FieldGrid:
    n = field.n
    if isinstance(op, PhaseMask):
        if op.n != n:
            raise ValueError(f"mask covers {op.n} pixels, field has {n}")
        out = field.amplitudes * op.signs()
    elif isinstance(op, (LinearPhase, Misfocus)):
        out = field.amplitudes * op.factor(n)
    else:
        raise TypeError(f"unsupported phase operation {type(op).__name__}")
    return FieldGrid(out, sigma=field.sigma)


def padded_spectrum(amplitudes: np.ndarray, n_pad: int) -> np.ndarray:
    # the padded rows are zero, so transform the data rows first
    f = sfft.fft(amplitudes, n=n_pad, axis=1)
    return sfft.fft(f, n=n_pad, axis=0)


def propagate(field: FieldGrid, geometry: "DetectorGeometry | int" = DEFAULT_PAD) -> np.ndarray:
    """Fourier-plane probability map (sums to 1, DC at the centre)."""
    pad = geometry.pad if isinstance(geometry, DetectorGeometry) else int(geometry)
    if pad < 1:
        raise ValueError("pad factor must be >= 1")
    spec = padded_spectrum(field.amplitudes, field.n * pad)
    p = np.abs(spec) ** 2
    total = p.sum()
    if total <= 0:
        raise ValueError("cannot propagate an all-zero field")
    return sfft.fftshift(p / total)


# ---------------------------------------------------------------- detector


@dataclass(frozen=True, eq=False)
class DetectorGeometry:
    """Lenslet array in the Fourier plane.

    ``centers`` holds (row, col) offsets from the DC pixel in Fourier-plane
    pixels, one row per lens, ordered by message index.
    """

    n_grid: int
    pad: int
    centers: np.ndarray
    radius: float
    shape: tuple[int, int] = (8, 8)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 2)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        if len(c) != self.shape[0] * self.shape[1]:
            raise GeometryError("number of centres does not match the lens array shape")
        if self.radius <= 0:
            raise GeometryError("lens radius must be positive")

    @property
    def n_pad(self) -> int:
        return self.n_grid * self.pad

    @property
    def n_lenses(self) -> int:
        return len(self.centers)

    @property
    def lens_area(self) -> float:
        return math.pi * self.radius**2

    def window(self) -> tuple[int, int, np.ndarray]:
        """Smallest square window holding every lens, with a label map.

        Returns ``(row0, col0, labels)`` where ``row0, col0`` index the
        shifted map and ``labels[i, j]`` is the lens index or -1.
        """
        if "window" not in self._cache:
            mid = self.n_pad // 2
            r = int(math.ceil(self.radius))
            lo = np.floor(self.centers.min(axis=0)).astype(int) - r + mid
            hi = np.ceil(self.centers.max(axis=0)).astype(int) + r + mid + 1
            if lo.min() < 0 or hi.max() > self.n_pad:
                raise GeometryError("lens array does not fit inside the Fourier plane")
            rows = np.arange(lo[0], hi[0]) - mid
            cols = np.arange(lo[1], hi[1]) - mid
            labels = np.full((len(rows), len(cols)), -1, dtype=np.int64)
            for b, (cr, cc) in enumerate(self.centers):
                inside = (rows[:, None] - cr) ** 2 + (cols[None, :] - cc) ** 2 < self.radius**2
                if np.any(labels[inside] >= 0):
                    raise GeometryError("lens apertures overlap")
                labels[inside] = b
            self._cache["window"] = (int(lo[0]), int(lo[1]), labels)
        return self._cache["window"]

    def lens_pixel_counts(self) -> np.ndarray:
        _, _, labels = self.window()
        return np.bincount(labels[labels >= 0], minlength=self.n_lenses)


@dataclass(frozen=True)
class DetectorPMF:
    """Probabilities of the 64 lens bins followed by the loss bin."""

    probs: np.ndarray

    @property
    def lens(self) -> np.ndarray:
        return self.probs[:-1]

    @property
    def loss(self) -> float:
        return float(self.probs[-1])

    def argmax(self) -> int:
        return int(np.argmax(self.lens))


def _pmf_from_lens(lens: np.ndarray) -> np.ndarray:
    lens = np.clip(lens, 0.0, None)
    loss = np.clip(1.0 - lens.sum(axis=-1, keepdims=True), 0.0, None)
    out = np.concatenate([lens, loss], axis=-1)
    return out / out.sum(axis=-1, keepdims=True)


def bin_to_detector(pmap: np.ndarray, geometry: DetectorGeometry) -> DetectorPMF:
    if pmap.shape != (geometry.n_pad, geometry.n_pad):
        raise ValueError(f"map shape {pmap.shape} does not match geometry {geometry.n_pad}")
    r0, c0, labels = geometry.window()
    sub = pmap[r0:r0 + labels.shape[0], c0:c0 + labels.shape[1]]
    sel = labels >= 0
    lens = np.bincount(labels[sel], weights=sub[sel], minlength=geometry.n_lenses)
    return DetectorPMF(_pmf_from_lens(lens))


# ---------------------------------------------------------------- alphabet


def spot_std(sigma: float, n_pad: int) -> float:
    """Std of the unscrambled focal spot intensity, in Fourier pixels."""
    return n_pad / (4.0 * math.pi * sigma)


def lens_pitch(sigma: float, n: int = DEFAULT_GRID, pad: int = DEFAULT_PAD,
               pitch_spots: float = DEFAULT_PITCH_SPOTS) -> int:
    """Lens pitch in Fourier pixels: ``pitch_spots`` spot widths, rounded to an even integer.

    An even pitch puts every lens centre of a symmetric 8x8 array on a
    whole Fourier pixel.
    """
    return max(2, 2 * int(round(pitch_spots * spot_std(sigma, n * pad) / 2.0)))


def linear_phase_grid(pitch_px: float, n: int = DEFAULT_GRID, pad: int = DEFAULT_PAD,
                      shape: tuple[int, int] = (8, 8)) -> list[LinearPhase]:
    """Row-major alphabet ``m = cols * row + col`` centred on the optical axis."""
    rows, cols = shape
    dphi = 2.0 * math.pi * pitch_px / (n * pad)
    out = []
    for r in range(rows):
        for c in range(cols):
            out.append(LinearPhase(r * cols + c, (c - (cols - 1) / 2.0) * dphi,
                                   (r - (rows - 1) / 2.0) * dphi))
    top = max(max(abs(p.phi_x), abs(p.phi_y)) for p in out)
    if top >= math.pi:
        raise GeometryError("phase gradient exceeds the Nyquist limit of the SLM")
    return out


def message_alphabet(sigma: float = DEFAULT_SIGMA, n: int = DEFAULT_GRID,
                     pad: int = DEFAULT_PAD, pitch_spots: float = DEFAULT_PITCH_SPOTS,
                     shape: tuple[int, int] = (8, 8)) -> list[LinearPhase]:
    return linear_phase_grid(lens_pitch(sigma, n, pad, pitch_spots), n, pad, shape)


def calibrate_geometry(phases: Sequence[LinearPhase], sigma: float = DEFAULT_SIGMA,
                       n: int = DEFAULT_GRID, pad: int = DEFAULT_PAD,
                       shape: tuple[int, int] = (8, 8)) -> DetectorGeometry:
    """Place one lens on the focal spot of each linear phase.

    The lens radius is half the smallest centre-to-centre spacing.
    """
    key = (tuple((p.index, p.phi_x, p.phi_y) for p in phases), float(sigma), n, pad, tuple(shape))
    return _calibrate_cached(key)


@functools.lru_cache(maxsize=32)
def _calibrate_cached(key) -> DetectorGeometry:
    raw, sigma, n, pad, shape = key
    if len(raw) != shape[0] * shape[1]:
        raise GeometryError(f"need {shape[0] * shape[1]} linear phases, got {len(raw)}")
    if len(raw) < 2:
        raise GeometryError("a lens radius needs at least two focal spots")
    base = gaussian_field(sigma, n)
    mid = n * pad // 2
    centers = []
    for idx, px, py in raw:
        pmap = propagate(apply_phase(base, LinearPhase(idx, px, py)), pad)
        r, c = np.unravel_index(int(np.argmax(pmap)), pmap.shape)
        centers.append((r - mid, c - mid))
    centers = np.array(centers, dtype=float)
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    spacing = dist.min()
    if spacing < 1:
        raise GeometryError("two focal spots coincide")
    geom = DetectorGeometry(n, pad, centers, spacing / 2.0, shape)
    geom.window()
    return geom


def default_geometry(sigma: float = DEFAULT_SIGMA, n: int = DEFAULT_GRID,
                     pad: int = DEFAULT_PAD, pitch_spots: float = DEFAULT_PITCH_SPOTS):
    phases = message_alphabet(sigma, n, pad, pitch_spots)
    return phases, calibrate_geometry(phases, sigma, n, pad)


# ---------------------------------------------------------------- fast path


class LensProjector:
    """Detector PMFs for many (message, mask) pairs without full FFTs.

    Every field the channel produces is ``a(y) a(x)`` (Gaussian, linear
    phase, misfocus: all separable) times a mask that is constant on 4x4
    superpixels.  The DFT restricted to the lens window then factorises as
    ``P_m @ S @ C_m.T`` with ``S`` the 128x128 mask signs, which costs a
    few 128-wide matrix products instead of a 1536^2 FFT.  Values agree
    with :func:`propagate` followed by :func:`bin_to_detector`.
    """

    def __init__(self, phases: Sequence[LinearPhase], geometry: DetectorGeometry,
                 sigma: float = DEFAULT_SIGMA, alpha: float = 0.0,
                 superpixel: int = SUPERPIXEL):
        n = geometry.n_grid
        if n % superpixel:
            raise ValueError("grid size must be a multiple of the superpixel size")
        self.geometry = geometry
        self.phases = list(phases)
        self.blocks = n // superpixel
        n_pad = geometry.n_pad
        mid = n_pad // 2
        r0, c0, labels = geometry.window()
        self._labels = labels
        wr, wc = labels.shape
        x = coords(n)
        amp = gaussian_profile(sigma, n) * np.exp(1j * alpha * x**2)
        idx = np.arange(n)
        kr = np.arange(r0, r0 + wr) - mid
        kc = np.arange(c0, c0 + wc) - mid
        er = np.exp(-2j * math.pi * np.outer(kr, idx) / n_pad)
        ec = np.exp(-2j * math.pi * np.outer(kc, idx) / n_pad)
        P, C = [], []
        for p in self.phases:
            rows = er * (amp * np.exp(1j * p.phi_y * x))[None, :]
            cols = ec * (amp * np.exp(1j * p.phi_x * x))[None, :]
            P.append(rows.reshape(wr, self.blocks, superpixel).sum(-1))
            C.append(cols.reshape(wc, self.blocks, superpixel).sum(-1))
        self._P = np.stack(P)                      # (64, wr, blocks)
        self._CT = np.stack(C).transpose(0, 2, 1)  # (64, blocks, wc)
        # real/imag stacked so the scrambled path needs only real products
        self._P2 = np.concatenate([self._P.real, self._P.imag], axis=1)
        self._C2 = np.concatenate([self._CT.real, self._CT.imag], axis=2)
        sel = labels.ravel() >= 0
        self._sel = np.flatnonzero(sel)
        self._lab = labels.ravel()[sel]
        self._onehot = np.zeros((len(self._sel), geometry.n_lenses))
        self._onehot[np.arange(len(self._sel)), self._lab] = 1.0
        self._clean: dict[int, np.ndarray] = {}
        self._scale = 1.0 / n_pad**2

    def lens_probs(self, messages: np.ndarray, block_signs: np.ndarray | None) -> np.ndarray:
        """Lens-bin probabilities, shape ``(B, 64)``.

        ``block_signs`` is ``(B, blocks, blocks)`` of +-1, or None for an
        unscrambled field.
        """
        messages = np.asarray(messages, dtype=np.int64)
        if block_signs is None:
            T = self._P[messages].sum(axis=2, keepdims=True)
            F = T * self._CT[messages].sum(axis=1, keepdims=True)
        else:
            S = np.asarray(block_signs, dtype=float)
            wr, wc = self._labels.shape
            G = np.matmul(np.matmul(self._P2[messages], S), self._C2[messages])
            re = G[:, :wr, :wc] - G[:, wr:, wc:]
            im = G[:, :wr, wc:] + G[:, wr:, :wc]
            F = re + 1j * im
        inten = (F.real**2 + F.imag**2).reshape(len(messages), -1)[:, self._sel]
        return inten @ self._onehot * self._scale

    def pmfs(self, messages, block_signs=None, chunk: int = 256) -> np.ndarray:
        """65-bin PMFs (64 lenses + loss), shape ``(B, 65)``."""
        messages = np.asarray(messages, dtype=np.int64)
        if block_signs is None:
            return np.stack([self.clean_pmf(int(m)) for m in messages]) if len(messages) else np.zeros((0, 65))
        out = np.empty((len(messages), self.geometry.n_lenses + 1))
        for s in range(0, len(messages), chunk):
            lens = self.lens_probs(messages[s:s + chunk], block_signs[s:s + chunk])
            out[s:s + chunk] = _pmf_from_lens(lens)
        return out

    def clean_pmf(self, message: int) -> np.ndarray:
        if message not in self._clean:
            lens = self.lens_probs(np.array([message]), None)
            self._clean[message] = _pmf_from_lens(lens)[0]
        return self._clean[message]

    def crosstalk(self) -> float:
        """Mean fraction of detected light that misses the intended lens."""
        vals = []
        for m in range(len(self.phases)):
            lens = self.clean_pmf(m)[:-1]
            vals.append(1.0 - lens[m] / lens.sum())
        return float(np.mean(vals))


# ---------------------------------------------------------------- export


def save_map_binary(path, pmap: np.ndarray, pad: int) -> None:
    """16-byte header (magic, n_pad, pad, reserved) then float64 LE row-major."""
    n_pad = pmap.shape[0]
    with open(path, "wb") as fh:
        fh.write(MAP_MAGIC + struct.pack("<III", n_pad, pad, 0))
        fh.write(np.ascontiguousarray(pmap, dtype="<f8").tobytes())


def load_map_binary(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != MAP_MAGIC:
            raise ValueError("not a probability-map file")
        n_pad, pad, _ = struct.unpack("<III", head[4:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n_pad * n_pad:
        raise ValueError("truncated probability-map file")
    return data.reshape(n_pad, n_pad).copy(), pad


def save_map_csv(path, pmap: np.ndarray) -> None:
    np.savetxt(path, pmap, delimiter=",", fmt="%.10g")
