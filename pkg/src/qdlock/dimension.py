"""Channel-dimension estimates.

Two numbers are produced:

* the practical dimension, which is simply the number of lenses Eve can
  read out (64 for an 8x8 array);
* the conservative dimension: the number of Fourier-plane pixels within
  four standard deviations of Eve's average scrambled distribution,
  divided by the area of one circular lens.

The standard deviation comes from a radial Gaussian fitted to the average
map about its centroid (``method="fit"``) or from its second moment
(``method="moment"``).  Every pixel inside the 4-sigma disc is counted,
whatever its value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.optimize import curve_fit

from .optics import (
    DEFAULT_GRID,
    DEFAULT_PAD,
    DEFAULT_PITCH_SPOTS,
    DEFAULT_SIGMA,
    DetectorGeometry,
    LensProjector,
    LinearPhase,
    MASK_BLOCKS,
    coords,
    default_geometry,
    gaussian_field,
    mask_bits,
)
from .prf import derive

DEFAULT_TRIALS = 300


class DimensionFitError(RuntimeError):
    pass


def practical_dimension(geometry: DetectorGeometry) -> int:
    return geometry.n_lenses


def round_dimension(d: float, step: int = 10) -> int:
    """Round up to the next multiple of ``step`` (644.8 -> 650)."""
    return int(math.ceil(d / step) * step)


def _integer_shift(p: LinearPhase, n_pad: int) -> tuple[int, int] | None:
    kx = p.phi_x * n_pad / (2 * math.pi)
    ky = p.phi_y * n_pad / (2 * math.pi)
    if abs(kx - round(kx)) > 1e-9 or abs(ky - round(ky)) > 1e-9:
        return None
    return int(round(ky)), int(round(kx))


def _full_from_half(half: np.ndarray, n_pad: int) -> np.ndarray:
    """Rebuild a real-input power spectrum from its ``rfft`` half."""
    full = np.empty((n_pad, n_pad))
    h = half.shape[1]
    full[:, :h] = half
    # I[u, v] = I[-u, -v] for real fields
    neg_u = (-np.arange(n_pad)) % n_pad
    v = np.arange(h, n_pad)
    full[:, h:] = half[neg_u][:, (-v) % n_pad]
    return full


def eve_average_distribution(
    sigma: float = DEFAULT_SIGMA,
    trials_per_message: int = DEFAULT_TRIALS,
    rng_seed: int = 0,
    phases: Sequence[LinearPhase] | None = None,
    n: int = DEFAULT_GRID,
    pad: int = DEFAULT_PAD,
    alpha: float = 0.0,
    method: str = "auto",
    precision: str = "single",
    batch: int = 8,
) -> np.ndarray:
    """Average Fourier-plane map over all messages, each under fresh random masks.

    The mask for (message ``m``, trial ``t``) has seed
    ``derive(rng_seed, m, t)``.

    With ``method="auto"`` and linear phases that shift the spectrum by
    whole Fourier pixels, the linear phase is applied as an exact circular
    shift of the scrambled map instead of being multiplied in before the
    FFT (same result, and a real-input FFT when ``alpha == 0``).
    ``method="direct"`` always multiplies the phase in.
    """
    if trials_per_message < 1:
        raise ValueError("trials_per_message must be >= 1")
    if method not in ("auto", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if phases is None:
        phases, _ = default_geometry(sigma, n, pad)
    n_pad = n * pad
    rdtype = np.float32 if precision == "single" else np.float64
    cdtype = np.complex64 if precision == "single" else np.complex128
    base = gaussian_field(sigma, n).amplitudes.real
    quad = None
    if alpha:
        q = np.exp(1j * alpha * coords(n) ** 2)
        quad = np.outer(q, q)
    blocks = MASK_BLOCKS
    if n % blocks:
        raise ValueError(f"grid size {n} is not a multiple of {blocks} superpixels")
    shifts = [_integer_shift(p, n_pad) for p in phases]
    fast = method == "auto" and all(s is not None for s in shifts)

    total = np.zeros((n_pad, n_pad))
    for m, p in enumerate(phases):
        if fast:
            field0 = base if quad is None else base * quad
        else:
            field0 = base * p.factor(n) if quad is None else base * quad * p.factor(n)
        sp = n // blocks
        real_path = fast and quad is None
        f0 = field0.astype(rdtype if real_path else cdtype).reshape(blocks, sp, blocks, sp)
        acc = None
        for t0 in range(0, trials_per_message, batch):
            ts = range(t0, min(t0 + batch, trials_per_message))
            signs = np.stack([mask_bits(derive(rng_seed, m, t), blocks) for t in ts])
            signs = (1 - 2 * signs.astype(rdtype))[:, :, None, :, None]
            f = (f0[None] * signs).reshape(len(ts), n, n)
            if real_path:
                spec = sfft.rfft(f, n=n_pad, axis=2)
            else:
                spec = sfft.fft(f, n=n_pad, axis=2)
            spec = sfft.fft(spec, n=n_pad, axis=1, overwrite_x=True)
            # |spec|^2 via the interleaved real view, summed over the batch
            v = spec.view(rdtype)
            np.multiply(v, v, out=v)
            v = v.sum(axis=0, dtype=np.float64)
            inten = v[:, 0::2] + v[:, 1::2]
            acc = inten if acc is None else acc + inten
        if fast and quad is None:
            acc = _full_from_half(acc, n_pad)
        acc = sfft.fftshift(acc)
        if fast:
            acc = np.roll(acc, shifts[m], axis=(0, 1))
        total += acc
    return total / total.sum()


def centroid(pmap: np.ndarray) -> tuple[float, float]:
    w = pmap / pmap.sum()
    r = np.arange(pmap.shape[0])
    c = np.arange(pmap.shape[1])
    return float((w.sum(axis=1) * r).sum()), float((w.sum(axis=0) * c).sum())


def _gauss(r, a, s):
    return a * np.exp(-(r**2) / (2.0 * s**2))


def spread(pmap: np.ndarray, method: str = "fit") -> tuple[float, tuple[float, float]]:
    """Per-axis standard deviation of ``pmap`` about its centroid, in pixels."""
    if pmap.sum() <= 0:
        raise DimensionFitError("map has no mass")
    cy, cx = centroid(pmap)
    yy, xx = np.indices(pmap.shape)
    r = np.hypot(yy - cy, xx - cx)
    w = pmap / pmap.sum()
    s_mom = math.sqrt(float((w * r**2).sum()) / 2.0)
    if method == "moment":
        if s_mom < 0.5:
            raise DimensionFitError("distribution is too narrow to measure")
        return s_mom, (cy, cx)
    if method != "fit":
        raise ValueError(f"unknown spread method {method!r}")
    # fit the azimuthal mean out to the largest circle inside the map
    rmax = min(cy, cx, pmap.shape[0] - 1 - cy, pmap.shape[1] - 1 - cx)
    rb = np.floor(r).astype(np.int64)
    keep = rb <= rmax
    counts = np.bincount(rb[keep])
    sums = np.bincount(rb[keep], weights=pmap[keep])
    ok = counts > 0
    radii = np.arange(len(counts))[ok] + 0.5
    prof = sums[ok] / counts[ok]
    if np.count_nonzero(prof > prof.max() * 1e-6) < 3:
        raise DimensionFitError("distribution is delta-like; no radial profile to fit")
    try:
        (a, s), _ = curve_fit(
            _gauss, radii, prof, p0=(prof.max(), max(s_mom, 1.0)),
            sigma=1.0 / np.sqrt(counts[ok]), maxfev=10000,
        )
    except (RuntimeError, ValueError) as exc:
        raise DimensionFitError(f"radial Gaussian fit failed: {exc}") from exc
    s = abs(float(s))
    if not np.isfinite(s) or s < 0.5 or a <= 0:
        raise DimensionFitError(f"radial Gaussian fit is degenerate (sigma={s})")
    return s, (cy, cx)


def conservative_dimension(avg: np.ndarray, geometry: DetectorGeometry | float,
                           method: str = "fit", radius_sigmas: float = 4.0) -> tuple[float, float]:
    """Return ``(d, sigma_eve)``.

    ``geometry`` may also be a bare lens radius in Fourier pixels.
    """
    radius = geometry.radius if isinstance(geometry, DetectorGeometry) else float(geometry)
    s, (cy, cx) = spread(avg, method)
    yy, xx = np.indices(avg.shape)
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= (radius_sigmas * s) ** 2
    return float(np.count_nonzero(inside)) / (math.pi * radius**2), s


@dataclass(frozen=True)
class DimensionEstimate:
    d_practical: int
    d_mean: float
    d_stderr: float
    repetitions: int
    trials: int
    alpha: float
    sigma: float
    pitch: float
    lens_radius: float
    sigma_eve: float
    rounding_step: int = 10
    samples: tuple[float, ...] = ()

    @property
    def d_rounded(self) -> int:
        return round_dimension(self.d_mean, self.rounding_step)

    def as_row(self) -> dict:
        row = asdict(self)
        row["d_rounded"] = self.d_rounded
        return row


def estimate_dimension(
    sigma: float = DEFAULT_SIGMA,
    trials: int = DEFAULT_TRIALS,
    repetitions: int = 10,
    seed: int = 0,
    alpha: float = 0.0,
    n: int = DEFAULT_GRID,
    pad: int = DEFAULT_PAD,
    pitch_spots: float = DEFAULT_PITCH_SPOTS,
    method: str = "fit",
    rounding_step: int = 10,
    precision: str = "single",
) -> DimensionEstimate:
    """Repeat the conservative estimate with seeds ``derive(seed, r)``."""
    phases, geom = default_geometry(sigma, n, pad, pitch_spots)
    ds, ss = [], []
    for rep in range(repetitions):
        avg = eve_average_distribution(sigma, trials, derive(seed, rep), phases, n, pad,
                                       alpha=alpha, precision=precision)
        d, s = conservative_dimension(avg, geom, method)
        ds.append(d)
        ss.append(s)
    ds = np.array(ds)
    stderr = float(ds.std(ddof=1) / math.sqrt(len(ds))) if len(ds) > 1 else float("nan")
    pitch = float(np.diff(np.unique(geom.centers[:, 1]))[0]) if geom.shape[1] > 1 else float("nan")
    return DimensionEstimate(
        d_practical=practical_dimension(geom),
        d_mean=float(ds.mean()),
        d_stderr=stderr,
        repetitions=repetitions,
        trials=trials,
        alpha=alpha,
        sigma=sigma,
        pitch=pitch,
        lens_radius=geom.radius,
        sigma_eve=float(np.mean(ss)),
        rounding_step=rounding_step,
        samples=tuple(float(v) for v in ds),
    )


def misfocus_crosstalk(alpha: float, sigma: float = DEFAULT_SIGMA, n: int = DEFAULT_GRID,
                       pad: int = DEFAULT_PAD, pitch_spots: float = DEFAULT_PITCH_SPOTS) -> float:
    phases, geom = default_geometry(sigma, n, pad, pitch_spots)
    return LensProjector(phases, geom, sigma, alpha).crosstalk()


def max_misfocus(crosstalk: float = 0.5, sigma: float = DEFAULT_SIGMA, n: int = DEFAULT_GRID,
                 pad: int = DEFAULT_PAD, pitch_spots: float = DEFAULT_PITCH_SPOTS) -> float:
    """Largest alpha whose crosstalk stays at or below ``crosstalk`` (bisection)."""
    lo, hi = 0.0, 1e-6
    while misfocus_crosstalk(hi, sigma, n, pad, pitch_spots) < crosstalk:
        lo, hi = hi, hi * 2
        if hi > 1.0:
            raise ValueError("crosstalk target not reached")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if misfocus_crosstalk(mid, sigma, n, pad, pitch_spots) <= crosstalk:
            lo = mid
        else:
            hi = mid
    return lo


def misfocus_sweep(
    sigma: float = DEFAULT_SIGMA,
    alphas: Sequence[float] | None = None,
    trials: int = 20,
    repetitions: int = 3,
    seed: int = 0,
    max_crosstalk: float = 0.5,
    **kwargs,
) -> list[DimensionEstimate]:
    """One estimate per misfocus value, all sharing the same mask seeds."""
    n = kwargs.get("n", DEFAULT_GRID)
    pad = kwargs.get("pad", DEFAULT_PAD)
    pitch_spots = kwargs.get("pitch_spots", DEFAULT_PITCH_SPOTS)
    if alphas is None:
        top = max_misfocus(max_crosstalk, sigma, n, pad, pitch_spots)
        alphas = [top * f for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
    for a in alphas:
        if misfocus_crosstalk(a, sigma, n, pad, pitch_spots) > max_crosstalk + 1e-12:
            raise ValueError(f"alpha={a} exceeds the {max_crosstalk:.0%} crosstalk bound")
    return [estimate_dimension(sigma, trials, repetitions, seed, alpha=a, **kwargs) for a in alphas]


def write_report(path_csv, estimates: Sequence[DimensionEstimate]) -> str:
    cols = ["sigma", "pitch", "lens_radius", "trials", "repetitions", "alpha",
            "d_practical", "d_mean", "d_stderr", "sigma_eve", "d_rounded"]
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for e in estimates:
            row = e.as_row()
            w.writerow([f"{row[c]:.10g}" if isinstance(row[c], float) else row[c] for c in cols])
    return format_report(estimates)


def format_report(estimates: Sequence[DimensionEstimate]) -> str:
    lines = []
    for e in estimates:
        lines.append(
            f"sigma={e.sigma:g}px pitch={e.pitch:g}px lens_radius={e.lens_radius:g}px "
            f"trials={e.trials} reps={e.repetitions} alpha={e.alpha:.4g} "
            f"d_practical={e.d_practical} d={e.d_mean:.1f}+-{e.d_stderr:.1f} "
            f"-> rounded up to {e.d_rounded}"
        )
    return "\n".join(lines)
