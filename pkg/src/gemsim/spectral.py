"""
Frequency-domain models of the photon source and the filter chain.

All frequencies are detunings in Hz from the probe transition.  Every
element returns a power transmissivity in [0, 1]; a chain multiplies its
elements pointwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid

from .errors import InvalidParameterError, ResolutionError

# Largest finite suppression reported, in dB; avoids log10(0).
SATURATION_DB = 300.0
# sinc^2(u) = 1/2 at u = SINC2_HALF (numpy's normalised sinc)
SINC2_HALF = 0.44294647162
# Neighbouring comb modes summed explicitly on each side; the rest of the
# comb enters through the closed-form periodic Lorentzian sum.
NEIGHBOUR_MODES = 8
# Minimum samples per narrowest linewidth before aliasing is declared.
SAMPLES_PER_LINEWIDTH = 4

ArrayLike = Union[float, np.ndarray]


# =============================================================================
# Frequency axis and comb source
# =============================================================================


@dataclass(frozen=True)
class FrequencyGrid:
    points: np.ndarray
    center: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or len(pts) < 2:
            raise InvalidParameterError("grid needs at least two points")
        d = np.diff(pts)
        if np.any(d <= 0):
            raise InvalidParameterError("grid points must be strictly increasing")
        # 1e-9 relative, plus float rounding of large absolute offsets
        tol = 1e-9 * d.mean() + 4 * np.finfo(float).eps * np.max(np.abs(pts))
        if np.max(np.abs(d - d.mean())) > tol:
            raise InvalidParameterError("grid spacing must be uniform")

    @classmethod
    def uniform(cls, span: float, step: float, center: float = 0.0) -> "FrequencyGrid":
        if span <= 0 or step <= 0:
            raise InvalidParameterError("span and step must be positive")
        n = int(round(span / step)) + 1
        return cls(center + np.linspace(-span / 2, span / 2, n), center)

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    @property
    def step(self) -> float:
        return self.span / (len(self.points) - 1)


@dataclass(frozen=True)
class SpdcCombSpec:
    """Cavity-enhanced SPDC output: Lorentzian modes under a phase-matching envelope."""

    mode_spacing: float
    mode_linewidth: float
    envelope_fwhm: float
    center_offset: float = 0.0
    envelope: str = "sinc2"  # or "gaussian"

    def __post_init__(self):
        if min(self.mode_spacing, self.mode_linewidth, self.envelope_fwhm) <= 0:
            raise InvalidParameterError("comb parameters must be positive")
        if self.mode_linewidth >= self.mode_spacing:
            raise InvalidParameterError("mode_linewidth must be below mode_spacing")
        if self.envelope_fwhm <= self.mode_spacing:
            raise InvalidParameterError("envelope_fwhm must exceed mode_spacing")
        if self.envelope not in ("sinc2", "gaussian"):
            raise InvalidParameterError(f"unknown envelope shape {self.envelope!r}")

    def envelope_weight(self, f: ArrayLike) -> np.ndarray:
        x = (np.asarray(f, dtype=float) - self.center_offset) / self.envelope_fwhm
        if math.isinf(self.envelope_fwhm):
            return np.ones_like(x)
        if self.envelope == "gaussian":
            return np.exp(-4.0 * math.log(2.0) * x**2)
        return np.sinc(2.0 * SINC2_HALF * x) ** 2

    def mode_index(self, f: ArrayLike) -> np.ndarray:
        return np.rint((np.asarray(f, dtype=float) - self.center_offset) / self.mode_spacing).astype(np.int64)

    def mode_frequency(self, k: ArrayLike) -> np.ndarray:
        return self.center_offset + np.asarray(k) * self.mode_spacing

    def significant_modes(self, threshold: float = 0.01, extent: float = 5.0) -> int:
        """Number of modes within ``extent`` envelope FWHM whose weight exceeds ``threshold`` of the peak."""
        kmax = int(math.ceil(0.5 * extent * self.envelope_fwhm / self.mode_spacing))
        w = self.envelope_weight(self.mode_frequency(np.arange(-kmax, kmax + 1)))
        return int(np.count_nonzero(w > threshold * w.max()))


def lorentzian(f: ArrayLike, fwhm: float) -> np.ndarray:
    """Area-normalised Lorentzian."""
    g = 0.5 * fwhm
    return (g / math.pi) / (np.asarray(f, dtype=float) ** 2 + g * g)


def periodic_lorentzian(f: ArrayLike, fwhm: float, period: float) -> np.ndarray:
    """sum_n lorentzian(f - n*period, fwhm), in closed form."""
    a = math.pi * fwhm / period
    theta = 2.0 * math.pi * np.asarray(f, dtype=float) / period
    return (1.0 / period) * math.sinh(a) / (math.cosh(a) - np.cos(theta))


def comb_density(spec: SpdcCombSpec, f: ArrayLike, neighbours: int = NEIGHBOUR_MODES) -> np.ndarray:
    """Unnormalised comb power density: sum_k w_k L(f - f_k).

    Modes within ``neighbours`` of the nearest one carry their own envelope
    weight; the far tails of the rest are taken from the periodic sum scaled
    by the local weight (the envelope varies over ~1000 modes).
    """
    f = np.asarray(f, dtype=float)
    k0 = spec.mode_index(f)
    local = spec.envelope_weight(spec.mode_frequency(k0))
    rel = f - spec.mode_frequency(k0)
    total = local * periodic_lorentzian(rel, spec.mode_linewidth, spec.mode_spacing)
    for j in range(-neighbours, neighbours + 1):
        lj = lorentzian(rel - j * spec.mode_spacing, spec.mode_linewidth)
        wj = spec.envelope_weight(spec.mode_frequency(k0 + j))
        total += (wj - local) * lj
    return np.maximum(total, 0.0)


def spdc_spectrum(spec: SpdcCombSpec, grid: FrequencyGrid) -> np.ndarray:
    """Comb power density on ``grid``, normalised to unit integral over the grid."""
    if grid.step > spec.mode_linewidth / SAMPLES_PER_LINEWIDTH:
        raise ResolutionError(
            f"grid step {grid.step:.4g} Hz exceeds mode_linewidth/{SAMPLES_PER_LINEWIDTH} "
            f"= {spec.mode_linewidth / SAMPLES_PER_LINEWIDTH:.4g} Hz"
        )
    s = comb_density(spec, grid.points)
    norm = trapezoid(s, grid.points)
    if norm <= 0:
        raise InvalidParameterError("grid carries no comb power")
    return s / norm


# =============================================================================
# Elements
# =============================================================================


def airy_transmission(fsr: float, finesse: float, detuning: ArrayLike) -> np.ndarray:
    """Lossless Fabry-Perot etalon: 1 / (1 + (2F/pi)^2 sin^2(pi f / FSR))."""
    if fsr <= 0 or finesse <= 1:
        raise InvalidParameterError(f"need fsr > 0 and finesse > 1, got fsr={fsr}, finesse={finesse}")
    coeff = (2.0 * finesse / math.pi) ** 2
    s = np.sin(math.pi * np.asarray(detuning, dtype=float) / fsr)
    return 1.0 / (1.0 + coeff * s * s)


def lorentzian_cavity_transmission(fsr: float, linewidth: float, detuning: ArrayLike) -> np.ndarray:
    """Comb of Lorentzian resonances spaced by ``fsr``, scaled to unit peak.

    Evaluated as the closed-form periodic sum divided by its on-resonance
    value, so all resonances overlap correctly and the peak is exactly 1.
    """
    if not 0 < linewidth < fsr:
        raise InvalidParameterError(f"need 0 < linewidth < fsr, got linewidth={linewidth}, fsr={fsr}")
    a = math.pi * linewidth / fsr
    theta = 2.0 * math.pi * np.asarray(detuning, dtype=float) / fsr
    # (cosh a - 1) / (cosh a - cos theta), written to avoid cancellation
    num = 2.0 * math.sinh(0.5 * a) ** 2
    return num / (num + 2.0 * np.sin(0.5 * theta) ** 2)


def absorption_cell_transmission(
    peak_od: float, line_center: float, doppler_width: float, detuning: ArrayLike
) -> np.ndarray:
    """Beer-Lambert attenuation through one Gaussian (Doppler) line."""
    if peak_od < 0 or doppler_width <= 0:
        raise InvalidParameterError("need peak_od >= 0 and doppler_width > 0")
    x = (np.asarray(detuning, dtype=float) - line_center) / doppler_width
    return np.exp(-peak_od * np.exp(-4.0 * math.log(2.0) * x * x))


def od_for_isolation(db: float) -> float:
    """Peak optical depth giving ``db`` of on-resonance suppression."""
    return db * math.log(10.0) / 10.0


KINDS = ("airy_etalon", "lorentzian_cavity", "absorption_cell", "edge_filter", "flat_attenuator")


@dataclass(frozen=True)
class FilterElement:
    """One spectral element; which fields matter depends on ``kind``.

    ``lines`` holds ``(peak_od, line_center, doppler_width)`` triples for
    absorption cells.  ``center`` shifts the resonance comb of etalons and
    cavities.  Edge filters pass everything below ``cutoff`` and fall off at
    ``slope`` dB/Hz above it (a long-pass in wavelength).
    """

    kind: str
    fsr: Optional[float] = None
    finesse: Optional[float] = None
    linewidth: Optional[float] = None
    lines: tuple = ()
    cutoff: Optional[float] = None
    slope: Optional[float] = None
    attenuation_db: Optional[float] = None
    center: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown filter kind {self.kind!r}")
        object.__setattr__(self, "lines", tuple(tuple(float(v) for v in ln) for ln in self.lines))
        k = self.kind
        if k == "airy_etalon":
            if self.fsr is None or self.finesse is None or self.fsr <= 0 or self.finesse <= 1:
                raise InvalidParameterError("etalon needs fsr > 0 and finesse > 1")
        elif k == "lorentzian_cavity":
            if self.fsr is None or self.linewidth is None or not 0 < self.linewidth < self.fsr:
                raise InvalidParameterError("cavity needs 0 < linewidth < fsr")
        elif k == "absorption_cell":
            if not self.lines:
                raise InvalidParameterError("absorption cell needs at least one line")
            for od, _, width in self.lines:
                if od < 0 or width <= 0:
                    raise InvalidParameterError("cell lines need peak_od >= 0 and doppler_width > 0")
        elif k == "edge_filter":
            if self.cutoff is None or self.slope is None or self.slope < 0:
                raise InvalidParameterError("edge filter needs cutoff and slope >= 0")
        elif k == "flat_attenuator":
            if self.attenuation_db is None or self.attenuation_db < 0:
                raise InvalidParameterError("flat attenuator needs attenuation_db >= 0")

    def transmission(self, f: ArrayLike) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        k = self.kind
        if k == "airy_etalon":
            return airy_transmission(self.fsr, self.finesse, f - self.center)
        if k == "lorentzian_cavity":
            return lorentzian_cavity_transmission(self.fsr, self.linewidth, f - self.center)
        if k == "absorption_cell":
            out = np.ones_like(f)
            for od, c, w in self.lines:
                out = out * absorption_cell_transmission(od, c, w, f)
            return out
        if k == "edge_filter":
            excess = np.maximum(f - self.cutoff, 0.0)
            return 10.0 ** (-self.slope * excess / 10.0)
        return np.full_like(f, 10.0 ** (-self.attenuation_db / 10.0))

    def narrowest_feature(self) -> float:
        """Smallest spectral width this element imposes (inf if none)."""
        if self.kind == "airy_etalon":
            return self.fsr / self.finesse
        if self.kind == "lorentzian_cavity":
            return self.linewidth
        if self.kind == "absorption_cell":
            return min(w for _, _, w in self.lines)
        return math.inf

    def to_dict(self) -> dict:
        keys = {
            "airy_etalon": ("fsr", "finesse", "center"),
            "lorentzian_cavity": ("fsr", "linewidth", "center"),
            "absorption_cell": ("lines",),
            "edge_filter": ("cutoff", "slope"),
            "flat_attenuator": ("attenuation_db",),
        }[self.kind]
        d = {"kind": self.kind}
        if self.label:
            d["label"] = self.label
        for key in keys:
            v = getattr(self, key)
            d[key] = [list(ln) for ln in v] if key == "lines" else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FilterElement":
        d = dict(d)
        if "kind" not in d:
            raise InvalidParameterError("filter element needs a 'kind'")
        if d["kind"] == "absorption_cell" and "lines" not in d:
            d["lines"] = [(d.pop("peak_od"), d.pop("line_center", 0.0), d.pop("doppler_width"))]
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise InvalidParameterError(f"unknown filter fields {sorted(unknown)}")
        return cls(**d)


def etalon(fsr, finesse, center=0.0, label="etalon"):
    return FilterElement("airy_etalon", fsr=fsr, finesse=finesse, center=center, label=label)


def cavity(fsr, linewidth, center=0.0, label="cavity"):
    return FilterElement("lorentzian_cavity", fsr=fsr, linewidth=linewidth, center=center, label=label)


def absorption_cell(peak_od, line_center, doppler_width, label="cell"):
    return FilterElement("absorption_cell", lines=((peak_od, line_center, doppler_width),), label=label)


def edge_filter(cutoff, slope, label="edge"):
    return FilterElement("edge_filter", cutoff=cutoff, slope=slope, label=label)


def flat_attenuator(db, label="flat"):
    return FilterElement("flat_attenuator", attenuation_db=db, label=label)


@dataclass(frozen=True)
class FilterChain:
    elements: tuple
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    def __add__(self, other: "FilterChain") -> "FilterChain":
        """Cascade: the coincidence basis sees both arms' filters."""
        label = " * ".join(x for x in (self.label, other.label) if x)
        return FilterChain(self.elements + other.elements, label)

    def narrowest_feature(self) -> float:
        return min((e.narrowest_feature() for e in self.elements), default=math.inf)

    def to_dict(self) -> dict:
        return {"label": self.label, "elements": [e.to_dict() for e in self.elements]}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterChain":
        return cls(tuple(FilterElement.from_dict(e) for e in d.get("elements", [])), d.get("label", ""))


def chain_transmission(chain: FilterChain, grid: Union[FrequencyGrid, ArrayLike]) -> np.ndarray:
    if not chain.elements:
        raise InvalidParameterError("filter chain is empty")
    f = grid.points if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float)
    out = np.ones_like(f, dtype=float)
    for e in chain.elements:
        out = out * e.transmission(f)
    return np.clip(out, 0.0, 1.0)


def suppression_db(chain: FilterChain, at: float) -> float:
    t = float(chain_transmission(chain, np.array([at]))[0])
    if t <= 10.0 ** (-SATURATION_DB / 10.0):
        return SATURATION_DB
    return -10.0 * math.log10(t) + 0.0  # no signed zero


def solve_flat_attenuation(chain: FilterChain, at: float, target_db: float, index: Optional[int] = None) -> FilterChain:
    """Set the chain's flat attenuator so the total suppression at ``at`` is ``target_db``."""
    if index is None:
        flats = [i for i, e in enumerate(chain.elements) if e.kind == "flat_attenuator"]
        if len(flats) != 1:
            raise InvalidParameterError("chain must contain exactly one flat attenuator to solve for")
        index = flats[0]
    others = FilterChain(chain.elements[:index] + chain.elements[index + 1:])
    rest = suppression_db(others, at) if others.elements else 0.0
    needed = target_db - rest
    if needed < 0:
        raise InvalidParameterError(
            f"other elements already give {rest:.2f} dB > target {target_db:.2f} dB; no passive solution"
        )
    elems = list(chain.elements)
    elems[index] = replace(elems[index], attenuation_db=needed)
    return FilterChain(tuple(elems), chain.label)


# =============================================================================
# Mode isolation
# =============================================================================


@dataclass(frozen=True)
class ModeFraction:
    fraction: float
    central_power: float
    total_power: float
    aligned: bool
    extent: float  # Hz, full width of the frequency range integrated


def central_mode_fraction(
    spdc: SpdcCombSpec,
    chain: FilterChain,
    *,
    extent: Optional[float] = None,
    samples_per_linewidth: int = SAMPLES_PER_LINEWIDTH,
    chunk: int = 256,
) -> ModeFraction:
    """Share of the filtered comb power within half a mode spacing of the centre.

    The integration runs over ``extent`` (default five envelope FWHM) cell
    by cell, one cell per comb mode, with a midpoint rule fine enough to
    resolve the narrowest of the comb lines and the chain features.
    """
    if not chain.elements:
        raise InvalidParameterError("filter chain is empty")
    if extent is None:
        if math.isinf(spdc.envelope_fwhm):
            raise InvalidParameterError("a flat envelope needs an explicit extent")
        extent = 5.0 * spdc.envelope_fwhm
    s = spdc.mode_spacing
    kmax = int(math.ceil(0.5 * extent / s))
    width = min(spdc.mode_linewidth, chain.narrowest_feature())
    m = int(math.ceil(samples_per_linewidth * s / width))
    m += m % 2 == 0  # odd, so a sample sits on every mode centre
    offsets = (np.arange(m) - (m - 1) / 2) * (s / m)
    weight = s / m

    central = 0.0
    total = 0.0
    ks = np.arange(-kmax, kmax + 1)
    for i in range(0, len(ks), chunk):
        block = ks[i:i + chunk]
        f = (spdc.center_offset + block[:, None] * s + offsets[None, :]).ravel()
        p = (comb_density(spdc, f) * chain_transmission(chain, f)).reshape(len(block), m).sum(axis=1) * weight
        total += float(p.sum())
        hit = np.nonzero(block == 0)[0]
        if hit.size:
            central = float(p[hit[0]])

    f0 = spdc.center_offset
    probe = chain_transmission(chain, np.array([f0 - 0.1 * width, f0, f0 + 0.1 * width]))
    aligned = bool(probe[1] >= probe.max() * (1 - 1e-9))
    return ModeFraction(central / total if total > 0 else 0.0, central, total, aligned, 2 * kmax * s + s)
