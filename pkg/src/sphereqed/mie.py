"""Scattering coefficients and partial-wave sums for a dispersing sphere.

This module is the Green-function layer of the package: it evaluates the
per-order scattering and interior coefficients, the TE/TM characteristic
functions whose complex roots are the sphere resonances, the mode-summed
source series that drive decay rates and frequency shifts, the far-zone
factor arrays behind emission patterns, the radial profile of the
ground-state field fluctuation spectrum, and an argument-principle root
counter used to certify resonance searches.

Units: frequencies are measured in the material reference frequency and
lengths in the corresponding reference wavelength, so the size parameters
of a sphere of radius R at frequency omega are z1 = 2*pi*omega*R and
z2 = n(omega)*z1.

Numerics: partial waves far beyond the turning point involve Bessel
magnitudes far outside double range, so every coefficient and series term
is assembled from (mantissa, power-of-two exponent) pairs and collapsed to
an ordinary complex number only once the physical cancellation has
happened.  Mantissas are renormalized to order unity between operations;
exponents are exact integers.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .material import MaterialModel, eps_value
from .specfun import (
    RENORM_LIMIT,
    RENORM_SCALE,
    RENORM_SHIFT,
    SpecialFunctionRangeError,
    scaled_sub,
    sph_h1_scaled,
    sph_j_scaled,
)

__all__ = [
    "MieCoefficientSet",
    "CharacteristicValue",
    "FieldPoint",
    "ModeSumsGrid",
    "ModeSums",
    "FarFactors",
    "WindingCertificate",
    "size_parameters",
    "refractive_index_branch",
    "truncation_order",
    "mie_coefficients",
    "mie_denominator",
    "characteristic",
    "mode_sums",
    "mode_sums_grid",
    "far_factors",
    "fluctuation_prr",
    "fluctuation_profile",
    "root_count_certificate",
]

TWO_PI = 2.0 * math.pi

# Relative size at which three consecutive partial-wave terms stop a sum.
TAIL_RTOL = 1e-12
# Hard per-point cap on the summation order; sums that still fail the tail
# test here are returned with an honest (large) tail estimate.
L_HARD_CAP = 1 << 19
# Memory budget for the (order, point) work tables, in elements per table.
_TABLE_BUDGET = 6_000_000
# Fluctuation scans reject points closer to the surface than this (in
# reference wavelengths); macroscopic electrodynamics has no business there.
SURFACE_GUARD = 1e-4


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class MieCoefficientSet:
    """Scattering (bm, bn) and interior (cm, cn) coefficients of order l.

    bm/cm belong to the transverse-electric family, bn/cn to the
    transverse-magnetic one; each pair shares one denominator.
    """

    l: int
    bm: complex
    bn: complex
    cm: complex
    cn: complex
    at_frequency: complex
    size_params: tuple[complex, complex]


@dataclass(frozen=True)
class CharacteristicValue:
    """Value of the TE or TM characteristic function at one frequency."""

    value: complex
    polarization: str
    l: int


@dataclass(frozen=True)
class FieldPoint:
    """Observation point in spherical coordinates (lengths in reference
    wavelengths, angles in radians)."""

    r: float
    theta: float
    phi: float

    def __post_init__(self) -> None:
        if not self.r > 0.0:
            raise ValueError(f"r must be > 0, got {self.r}")
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must be in [0, pi], got {self.theta}")
        if not 0.0 <= self.phi < TWO_PI:
            raise ValueError(f"phi must be in [0, 2*pi), got {self.phi}")


@dataclass(frozen=True)
class ModeSums:
    """Partial-wave source sums at one (omega, r_a).

    s_perp drives the radial-dipole rate/shift, s_par the tangential ones,
    s_rad (optional) the radiated-energy sum.  Tail estimates are the
    magnitudes of the last three-term block of each series.
    """

    s_perp: complex
    s_par: complex
    s_rad: float | None
    l_max_used: int
    tail_perp: float
    tail_par: float
    tail_rad: float | None


@dataclass(frozen=True)
class ModeSumsGrid:
    """Vectorized ModeSums over a grid of (omega, r_a) points."""

    s_perp: np.ndarray
    s_par: np.ndarray
    s_rad: np.ndarray | None
    l_max_used: int
    tail_perp: np.ndarray
    tail_par: np.ndarray
    tail_rad: np.ndarray | None


@dataclass(frozen=True)
class FarFactors:
    """Per-order far-zone factors, order l = 1..lmax along axis 0.

    For a radial dipole the field components are assembled as
        S_r     = sum_l rad_r[l] * P_l(cos theta)
        S_theta = -sum_l rad_th[l] * sin(theta) * P_l'(cos theta)
    and for a tangential dipole (in the x-z plane) as
        S_r     = cos(phi) * sum_l tan_r[l] * sin(theta) * P_l'
        S_theta = cos(phi) * sum_l (tan_m[l] * P_l' + tan_n[l] * tau_l)
        S_phi   = -sin(phi) * sum_l (tan_m[l] * tau_l + tan_n[l] * P_l')
    with tau_l = l(l+1) P_l - cos(theta) P_l'.  Arrays have shape
    (lmax, n) for n frequencies.
    """

    lmax: int
    rad_r: np.ndarray
    rad_th: np.ndarray
    tan_r: np.ndarray
    tan_m: np.ndarray
    tan_n: np.ndarray


@dataclass(frozen=True)
class WindingCertificate:
    """Argument-principle root count inside a rectangle of complex frequency."""

    l: int
    polarization: str
    count: int
    corner_lo: complex
    corner_hi: complex
    phase_defect: float


# ---------------------------------------------------------------------------
# material plumbing


def refractive_index_branch(eps: complex) -> complex:
    """Interior index n = sqrt(eps) on the branch with Im n >= 0.

    For real frequencies of an absorbing material this coincides with the
    half-angle form used by the material module; for complex frequencies it
    continues that branch.  Every quantity this module feeds to root
    finding is even in n, so the residual branch ambiguity on the negative
    real eps axis is harmless there.
    """
    n = cmath.sqrt(eps)
    if n.imag < 0.0 or (n.imag == 0.0 and n.real < 0.0):
        n = -n
    return n


def size_parameters(
    model: MaterialModel, radius: float, omega: complex
) -> tuple[complex, complex, complex]:
    """(z1, z2, eps) for a sphere of the given radius at frequency omega."""
    if not radius > 0.0:
        raise ValueError(f"radius must be > 0, got {radius}")
    om = complex(omega)
    if not om.real > 0.0:
        raise ValueError(f"frequency must have positive real part, got {omega}")
    eps = eps_value(model, om)
    z1 = TWO_PI * om * radius
    z2 = refractive_index_branch(eps) * z1
    return z1, z2, eps


def truncation_order(x: float) -> int:
    """Default summation order for size parameter x (before tail testing)."""
    return math.ceil(x + 4.0 * x ** (1.0 / 3.0) + 2.0) + 10


# ---------------------------------------------------------------------------
# scalar scaled arithmetic (tuples of (complex mantissa, int exponent))

_Sc = tuple[complex, int]


def _snorm(m: complex, e: int) -> _Sc:
    if m == 0:
        return 0.0j, 0
    ex = math.frexp(abs(m))[1]
    return complex(math.ldexp(m.real, -ex), math.ldexp(m.imag, -ex)), e + ex


def _smul(a: _Sc, b: _Sc) -> _Sc:
    return _snorm(a[0] * b[0], a[1] + b[1])


def _sdiv(a: _Sc, b: _Sc) -> _Sc:
    if b[0] == 0:
        raise ZeroDivisionError("scaled division by an exact zero")
    return _snorm(a[0] / b[0], a[1] - b[1])


def _ssub(a: _Sc, b: _Sc) -> _Sc:
    return _snorm(*scaled_sub(a[0], a[1], b[0], b[1]))


def _sscale(c: complex, a: _Sc) -> _Sc:
    return _snorm(c * a[0], a[1])


def _scollapse(a: _Sc, context: str) -> complex:
    try:
        return complex(math.ldexp(a[0].real, a[1]), math.ldexp(a[0].imag, a[1]))
    except OverflowError as exc:
        raise SpecialFunctionRangeError(
            f"{context} overflows double precision"
        ) from exc


def _riccati_pair(z: complex, f: tuple[complex, int, complex, int], l: int) -> _Sc:
    """[z f_l]' = z f_{l-1} - l f_l from a scaled (f_l, f_{l-1}) pair."""
    fm, fe, fm1, fe1 = f
    return _snorm(*scaled_sub(z * fm1, fe1, l * fm, fe))


# ---------------------------------------------------------------------------
# Mie coefficients and characteristic functions


def _coefficient_parts(
    model: MaterialModel, radius: float, omega: complex, l: int
) -> dict:
    """Scaled numerators/denominators shared by the coefficient ops."""
    z1, z2, eps = size_parameters(model, radius, omega)
    j1 = sph_j_scaled(l, z1)
    j2 = sph_j_scaled(l, z2)
    h1 = sph_h1_scaled(l, z1)
    h2 = sph_h1_scaled(l, z2)
    pj1 = _riccati_pair(z1, j1, l)
    pj2 = _riccati_pair(z2, j2, l)
    ph1 = _riccati_pair(z1, h1, l)
    ph2 = _riccati_pair(z2, h2, l)
    sj1: _Sc = _snorm(j1[0], j1[1])
    sj2: _Sc = _snorm(j2[0], j2[1])
    sh1: _Sc = _snorm(h1[0], h1[1])
    sh2: _Sc = _snorm(h2[0], h2[1])
    den_te = _ssub(_smul(pj2, sh1), _smul(sj2, ph1))
    den_tm = _ssub(_sscale(eps, _smul(sj2, ph1)), _smul(pj2, sh1))
    return {
        "z1": z1,
        "z2": z2,
        "eps": eps,
        "j1": sj1,
        "j2": sj2,
        "h1": sh1,
        "h2": sh2,
        "pj1": pj1,
        "pj2": pj2,
        "ph1": ph1,
        "ph2": ph2,
        "den_te": den_te,
        "den_tm": den_tm,
    }


def mie_coefficients(
    model: MaterialModel, radius: float, omega: complex, l: int
) -> MieCoefficientSet:
    """All four order-l coefficients of the sphere at one frequency.

    Accepts complex frequencies so the same code path serves root finding.

    Parameters
    ----------
    model : MaterialModel
        Dispersing material of the sphere.
    radius : float
        Sphere radius in reference wavelengths.
    omega : complex
        Frequency in reference-frequency units, Re(omega) > 0.
    l : int
        Partial-wave order, l >= 1.
    """
    if l < 1:
        raise ValueError(f"order must be >= 1, got {l}")
    p = _coefficient_parts(model, radius, omega, l)
    eps = p["eps"]
    ctx = f"Mie coefficient at l={l}, omega={omega}"
    num_bm = _ssub(_smul(p["pj2"], p["j1"]), _smul(p["pj1"], p["j2"]))
    num_bn = _ssub(_sscale(eps, _smul(p["j2"], p["pj1"])), _smul(p["j1"], p["pj2"]))
    num_cm = _ssub(_smul(p["ph2"], p["h1"]), _smul(p["ph1"], p["h2"]))
    num_cn = _ssub(_sscale(eps, _smul(p["h2"], p["ph1"])), _smul(p["h1"], p["ph2"]))
    bm = -_scollapse(_sdiv(num_bm, p["den_te"]), ctx)
    bn = -_scollapse(_sdiv(num_bn, p["den_tm"]), ctx)
    cm = -_scollapse(_sdiv(num_cm, p["den_te"]), ctx)
    cn = -_scollapse(_sdiv(num_cn, p["den_tm"]), ctx)
    return MieCoefficientSet(
        l=l,
        bm=bm,
        bn=bn,
        cm=cm,
        cn=cn,
        at_frequency=complex(omega),
        size_params=(p["z1"], p["z2"]),
    )


def mie_denominator(
    model: MaterialModel, radius: float, omega: complex, l: int, pol: str
) -> complex:
    """Shared TE or TM coefficient denominator (collapsed to a complex).

    Its zeros in complex frequency are the sphere resonances; use only at
    moderate orders where the collapsed value is representable.
    """
    pol = pol.upper()
    p = _coefficient_parts(model, radius, omega, l)
    if pol == "TE":
        return _scollapse(p["den_te"], f"TE denominator at l={l}")
    if pol == "TM":
        return _scollapse(p["den_tm"], f"TM denominator at l={l}")
    raise ValueError(f"polarization must be 'TE' or 'TM', got {pol!r}")


def _ratio_j(l: int, z: complex) -> complex:
    """j_{l-1}(z)/j_l(z) by downward ratio recurrence."""
    l_start = l + max(20, math.ceil(10.0 * abs(z) ** (1.0 / 3.0)))
    if abs(z) > l:
        l_start = max(l_start, int(1.05 * abs(z)) + 20)
    r = (2 * l_start + 1) / z
    for k in range(l_start - 1, l - 1, -1):
        r = (2 * k + 1) / z - 1.0 / r
        if r == 0:
            r = 1e-300
    return r


def _ratio_h(l: int, z: complex) -> complex:
    """h1_{l-1}(z)/h1_l(z) by upward ratio recurrence."""
    rho = 1j  # h1_{-1}/h1_0
    for k in range(l):
        rho = 1.0 / ((2 * k + 1) / z - rho)
    return rho


def characteristic(
    model: MaterialModel, radius: float, omega: complex, l: int, pol: str
) -> CharacteristicValue:
    """TE or TM characteristic function M(omega) whose roots are resonances.

    M vanishes exactly where the corresponding coefficient denominator
    does; it is built from log-derivative ratios, so it stays O(1) even for
    orders far beyond the turning point and is smooth across the real axis.
    The TM branch carries the extra (1/(2 z1)) (1 - 1/eps) offset relative
    to the bare log-derivative difference.
    """
    pol = pol.upper()
    if l < 1:
        raise ValueError(f"order must be >= 1, got {l}")
    z1, z2, eps = size_parameters(model, radius, omega)
    lj = z2 * _ratio_j(l, z2) - l
    lh = z1 * _ratio_h(l, z1) - l
    if pol == "TE":
        value = (lh - lj) / z1
    elif pol == "TM":
        value = (eps * lh - lj) / (eps * z1)
    else:
        raise ValueError(f"polarization must be 'TE' or 'TM', got {pol!r}")
    return CharacteristicValue(value=value, polarization=pol, l=l)


# ---------------------------------------------------------------------------
# vectorized scaled arithmetic over (order, point) tables


def _ldexp_c(m: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Complex mantissa times 2**e; exponents saturate harmlessly."""
    ec = np.clip(e, -2200, 2200).astype(np.int32)
    return np.ldexp(m.real, ec) + 1j * np.ldexp(m.imag, ec)


def _vnorm(m: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Renormalize mantissas to order unity (zeros pass through)."""
    mag = np.abs(m)
    ex = np.zeros(mag.shape, dtype=np.int64)
    pos = mag > 0.0
    ex[pos] = np.frexp(mag[pos])[1].astype(np.int64)
    return _ldexp_c(m, -ex), e + ex


def _vmul(a, b):
    return _vnorm(a[0] * b[0], a[1] + b[1])


def _vdiv(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        m = a[0] / b[0]
    return _vnorm(m, a[1] - b[1])


def _vsub(a, b):
    e = np.maximum(a[1], b[1])
    return _vnorm(_ldexp_c(a[0], a[1] - e) - _ldexp_c(b[0], b[1] - e), e)


def _vadd(a, b):
    e = np.maximum(a[1], b[1])
    return _vnorm(_ldexp_c(a[0], a[1] - e) + _ldexp_c(b[0], b[1] - e), e)


def _vscale(c, a):
    return _vnorm(c * a[0], a[1])


def _vcollapse(a) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore"):
        return _ldexp_c(a[0], a[1])


def _h1_table(lmax: int, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scaled h1_l(z) for l = 0..lmax over a point array z."""
    n = z.shape[0]
    mant = np.empty((lmax + 1, n), dtype=complex)
    expo = np.zeros((lmax + 1, n), dtype=np.int64)
    if n == 1:
        zs = complex(z[0])
        ez = cmath.exp(1j * zs)
        fp = -1j * ez / zs
        fh = -ez * (1.0 / zs + 1j / (zs * zs))
        mant[0, 0] = fp
        if lmax >= 1:
            mant[1, 0] = fh
        shift = 0
        for k in range(1, lmax):
            fp, fh = fh, (2 * k + 1) / zs * fh - fp
            if abs(fh.real) > RENORM_LIMIT or abs(fh.imag) > RENORM_LIMIT:
                fh *= RENORM_SCALE
                fp *= RENORM_SCALE
                shift += RENORM_SHIFT
            mant[k + 1, 0] = fh
            expo[k + 1, 0] = shift
        return _vnorm(mant, expo)
    ez = np.exp(1j * z)
    fp = -1j * ez / z
    fh = -ez * (1.0 / z + 1j / (z * z))
    mant[0] = fp
    if lmax >= 1:
        mant[1] = fh
    shift = np.zeros(n, dtype=np.int64)
    for k in range(1, lmax):
        fp, fh = fh, (2 * k + 1) / z * fh - fp
        big = (np.abs(fh.real) > RENORM_LIMIT) | (np.abs(fh.imag) > RENORM_LIMIT)
        if big.any():
            fh[big] *= RENORM_SCALE
            fp[big] *= RENORM_SCALE
            shift[big] += RENORM_SHIFT
        mant[k + 1] = fh
        expo[k + 1] = shift
    return _vnorm(mant, expo)


def _j_table(lmax: int, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scaled j_l(z) for l = 0..lmax over a point array z (downward pass)."""
    n = z.shape[0]
    z_big = float(np.max(np.abs(z)))
    l_start = lmax + max(20, math.ceil(10.0 * z_big ** (1.0 / 3.0)))
    l_start = max(l_start, int(1.05 * z_big) + 20)
    mant = np.empty((lmax + 1, n), dtype=complex)
    expo = np.zeros((lmax + 1, n), dtype=np.int64)
    if n == 1:
        zs = complex(z[0])
        inv_z = 1.0 / zs
        fa = 0.0j
        fh = 1.0 + 0.0j
        shift = 0
        for k in range(l_start, 0, -1):
            fa, fh = fh, (2 * k + 1) * inv_z * fh - fa
            if abs(fh.real) > RENORM_LIMIT or abs(fh.imag) > RENORM_LIMIT:
                fh *= RENORM_SCALE
                fa *= RENORM_SCALE
                shift += RENORM_SHIFT
            if k - 1 <= lmax:
                mant[k - 1, 0] = fh
                expo[k - 1, 0] = shift
    else:
        inv_z = 1.0 / z
        fa = np.zeros(n, dtype=complex)
        fh = np.ones(n, dtype=complex)
        shift = np.zeros(n, dtype=np.int64)
        for k in range(l_start, 0, -1):
            fa, fh = fh, (2 * k + 1) * inv_z * fh - fa
            big = (np.abs(fh.real) > RENORM_LIMIT) | (np.abs(fh.imag) > RENORM_LIMIT)
            if big.any():
                fh[big] *= RENORM_SCALE
                fa[big] *= RENORM_SCALE
                shift[big] += RENORM_SHIFT
            if k - 1 <= lmax:
                mant[k - 1] = fh
                expo[k - 1] = shift
    # Fix the overall scale of the trial solution against the closed-form
    # j_0 or j_1, whichever is larger (their zeros interlace, so never both
    # are small at once).  Renormalize the raw rows first so the mantissa
    # products cannot under- or overflow.
    mant, expo = _vnorm(mant, expo)
    sz, cz = np.sin(z), np.cos(z)
    j0 = sz / z
    j1 = sz / (z * z) - cz / z
    use0 = np.abs(j0) >= np.abs(j1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c_m = np.where(use0, j0 / mant[0], j1 / mant[1])
    c_e = np.where(use0, -expo[0], -expo[1])
    return _vnorm(mant * c_m[None, :], expo + c_e[None, :])


def _psi_table(z: np.ndarray, table) -> tuple[np.ndarray, np.ndarray]:
    """Riccati derivatives [z f_l]' for l = 1..lmax from an f table."""
    mant, expo = table
    lmax = mant.shape[0] - 1
    orders = np.arange(1, lmax + 1, dtype=float)[:, None]
    return _vsub((z[None, :] * mant[:-1], expo[:-1]), (orders * mant[1:], expo[1:]))


def _row_slice(table, lo: int = 1):
    return table[0][lo:], table[1][lo:]


def _eps_array(model: MaterialModel, omega: np.ndarray) -> np.ndarray:
    return eps_value(model, omega.astype(complex))


def _index_branch_array(eps: np.ndarray) -> np.ndarray:
    n = np.sqrt(eps.astype(complex))
    flip = (n.imag < 0.0) | ((n.imag == 0.0) & (n.real < 0.0))
    return np.where(flip, -n, n)


def _tail_stop(series: list[tuple[np.ndarray, np.ndarray]]) -> tuple[int, bool]:
    """First order at which all series pass the three-term tail test.

    Each entry pairs |term_l| with |partial_l| (shapes (lmax, n)).  Returns
    (row index of the stopping order, whether every point converged).
    """
    lmax = series[0][0].shape[0]
    ok = np.ones(series[0][0].shape, dtype=bool)
    for term_abs, part_abs in series:
        ok &= term_abs <= TAIL_RTOL * part_abs
    ok3 = np.zeros_like(ok)
    if lmax >= 3:
        ok3[2:] = ok[2:] & ok[1:-1] & ok[:-2]
    found = ok3.any(axis=0)
    if not found.all():
        return lmax - 1, False
    return int(np.argmax(ok3, axis=0).max()), True


def _block_tail(term_abs: np.ndarray, stop: int) -> np.ndarray:
    lo = max(stop - 2, 0)
    return term_abs[lo : stop + 1].sum(axis=0)


def _bn_pairs(eps, j1, j2, h1, pj1, pj2, ph1):
    """Scaled TM scattering coefficient B^N over (order, point) tables."""
    num = _vsub(_vmul(_vscale(eps, j2), pj1), _vmul(j1, pj2))
    den = _vsub(_vmul(_vscale(eps, j2), ph1), _vmul(pj2, h1))
    return _vscale(-1.0, _vdiv(num, den))


def _bm_pairs(j1, j2, h1, pj1, pj2, ph1):
    """Scaled TE scattering coefficient B^M over (order, point) tables."""
    num = _vsub(_vmul(pj2, j1), _vmul(pj1, j2))
    den = _vsub(_vmul(pj2, h1), _vmul(j2, ph1))
    return _vscale(-1.0, _vdiv(num, den))


def _mode_sums_core(
    model: MaterialModel,
    radius: float,
    omega: np.ndarray,
    r_a: np.ndarray,
    include_radiated: bool,
) -> ModeSumsGrid:
    n = omega.shape[0]
    eps = _eps_array(model, omega)
    index = _index_branch_array(eps)
    z1 = (TWO_PI * radius) * omega.astype(complex)
    z2 = index * z1
    w = (TWO_PI * omega * r_a).astype(complex)
    x_scale = max(
        float(np.max(np.abs(z1))), float(np.max(np.abs(z2))), float(np.max(np.abs(w)))
    )
    l_hi = max(truncation_order(x_scale), 64)

    while True:
        if (l_hi + 1) * n > _TABLE_BUDGET and n > 1:
            half = n // 2
            lo = _mode_sums_core(model, radius, omega[:half], r_a[:half], include_radiated)
            hi = _mode_sums_core(model, radius, omega[half:], r_a[half:], include_radiated)
            return ModeSumsGrid(
                s_perp=np.concatenate([lo.s_perp, hi.s_perp]),
                s_par=np.concatenate([lo.s_par, hi.s_par]),
                s_rad=
                    np.concatenate([lo.s_rad, hi.s_rad]) if include_radiated else None,
                l_max_used=max(lo.l_max_used, hi.l_max_used),
                tail_perp=np.concatenate([lo.tail_perp, hi.tail_perp]),
                tail_par=np.concatenate([lo.tail_par, hi.tail_par]),
                tail_rad=
                    np.concatenate([lo.tail_rad, hi.tail_rad]) if include_radiated else None,
            )

        orders = np.arange(1, l_hi + 1, dtype=float)[:, None]
        weight_n = orders * (orders + 1.0) * (2.0 * orders + 1.0)
        weight_m = 2.0 * orders + 1.0

        tab_j1 = _j_table(l_hi, z1)
        tab_j2 = _j_table(l_hi, z2)
        tab_h1 = _h1_table(l_hi, z1)
        tab_hw = _h1_table(l_hi, w)
        pj1 = _psi_table(z1, tab_j1)
        pj2 = _psi_table(z2, tab_j2)
        ph1 = _psi_table(z1, tab_h1)
        phw = _psi_table(w, tab_hw)
        j1 = _row_slice(tab_j1)
        j2 = _row_slice(tab_j2)
        h1 = _row_slice(tab_h1)
        hw = _row_slice(tab_hw)

        bn = _bn_pairs(eps, j1, j2, h1, pj1, pj2, ph1)
        bm = _bm_pairs(j1, j2, h1, pj1, pj2, ph1)

        w2 = (w.real * w.real)[None, :]
        hw2 = _vmul(hw, hw)
        pw2 = _vmul(phw, phw)
        t_perp = weight_n * _vcollapse(_vmul(bn, hw2)) / w2
        t_par = weight_m * (
            _vcollapse(_vmul(bm, hw2)) + _vcollapse(_vmul(bn, pw2)) / w2
        )
        s_perp = np.cumsum(t_perp, axis=0)
        s_par = np.cumsum(t_par, axis=0)
        series = [
            (np.abs(t_perp), np.abs(s_perp)),
            (np.abs(t_par), np.abs(s_par)),
        ]
        if include_radiated:
            tab_jw = _j_table(l_hi, w)
            jw = _row_slice(tab_jw)
            out = _vcollapse(_vadd(jw, _vmul(bn, hw)))
            t_rad = weight_n * (out.real**2 + out.imag**2) / w2
            s_rad = np.cumsum(t_rad, axis=0)
            series.append((np.abs(t_rad), np.abs(s_rad)))

        stop, converged = _tail_stop(series)
        if converged or l_hi >= L_HARD_CAP:
            if not np.isfinite(s_perp[stop]).all() or not np.isfinite(s_par[stop]).all():
                raise ArithmeticError(
                    "partial-wave sum lost finiteness; check material and geometry"
                )
            return ModeSumsGrid(
                s_perp=s_perp[stop],
                s_par=s_par[stop],
                s_rad=s_rad[stop] if include_radiated else None,
                l_max_used=stop + 1,
                tail_perp=_block_tail(np.abs(t_perp), stop),
                tail_par=_block_tail(np.abs(t_par), stop),
                tail_rad=_block_tail(np.abs(t_rad), stop) if include_radiated else None,
            )
        l_hi = min(2 * l_hi, L_HARD_CAP)


def mode_sums_grid(
    model: MaterialModel,
    radius: float,
    omega,
    r_a,
    include_radiated: bool = False,
) -> ModeSumsGrid:
    """Partial-wave source sums over broadcast arrays of omega and r_a.

    omega is the (real, positive) evaluation frequency and r_a > radius the
    source radius, both broadcastable to a common shape.  The summation
    order is grown geometrically until three consecutive terms of every
    requested series fall below 1e-12 of its partial sum.
    """
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    ra = np.atleast_1d(np.asarray(r_a, dtype=float))
    om, ra = np.broadcast_arrays(om, ra)
    om = om.ravel().copy()
    ra = ra.ravel().copy()
    if not (om > 0.0).all():
        raise ValueError("all frequencies must be > 0")
    if not (ra > radius).all():
        raise ValueError("all source radii must lie outside the sphere")
    return _mode_sums_core(model, radius, om, ra, include_radiated)


def mode_sums(
    model: MaterialModel,
    radius: float,
    omega: float,
    r_a: float,
    include_radiated: bool = False,
) -> ModeSums:
    """Scalar wrapper around mode_sums_grid for a single (omega, r_a)."""
    g = mode_sums_grid(model, radius, omega, r_a, include_radiated)
    return ModeSums(
        s_perp=complex(g.s_perp[0]),
        s_par=complex(g.s_par[0]),
        s_rad=float(g.s_rad[0]) if include_radiated else None,
        l_max_used=g.l_max_used,
        tail_perp=float(g.tail_perp[0]),
        tail_par=float(g.tail_par[0]),
        tail_rad=float(g.tail_rad[0]) if include_radiated else None,
    )


# ---------------------------------------------------------------------------
# far-zone factors


def far_factors(
    model: MaterialModel,
    radius: float,
    omega,
    r_a: float,
    r: float,
) -> FarFactors:
    """Per-order factors of the far-zone field of a dipole near the sphere.

    omega may be a scalar or an array of frequencies; r_a is the dipole
    radius and r > r_a the observation radius (reference wavelengths).
    The angular assembly is left to the caller, see FarFactors.
    """
    om = np.atleast_1d(np.asarray(omega, dtype=float)).ravel()
    if not (om > 0.0).all():
        raise ValueError("all frequencies must be > 0")
    if not r_a > radius:
        raise ValueError("the dipole must sit outside the sphere")
    if not r > r_a:
        raise ValueError("the observation radius must exceed the dipole radius")
    n = om.shape[0]
    eps = _eps_array(model, om)
    index = _index_branch_array(eps)
    z1 = (TWO_PI * radius) * om.astype(complex)
    z2 = index * z1
    w = (TWO_PI * r_a) * om.astype(complex)
    v = (TWO_PI * r) * om.astype(complex)
    x_scale = max(
        float(np.max(np.abs(z1))), float(np.max(np.abs(z2))), float(np.max(np.abs(w)))
    )
    l_hi = max(truncation_order(x_scale), 48)

    while True:
        orders = np.arange(1, l_hi + 1, dtype=float)[:, None]
        ll1 = orders * (orders + 1.0)
        w21 = 2.0 * orders + 1.0

        tab_j1 = _j_table(l_hi, z1)
        tab_j2 = _j_table(l_hi, z2)
        tab_h1 = _h1_table(l_hi, z1)
        tab_hw = _h1_table(l_hi, w)
        tab_jw = _j_table(l_hi, w)
        tab_hv = _h1_table(l_hi, v)
        pj1 = _psi_table(z1, tab_j1)
        pj2 = _psi_table(z2, tab_j2)
        ph1 = _psi_table(z1, tab_h1)
        phw = _psi_table(w, tab_hw)
        pjw = _psi_table(w, tab_jw)
        phv = _psi_table(v, tab_hv)
        j1 = _row_slice(tab_j1)
        j2 = _row_slice(tab_j2)
        h1 = _row_slice(tab_h1)
        hw = _row_slice(tab_hw)
        jw = _row_slice(tab_jw)
        hv = _row_slice(tab_hv)

        bn = _bn_pairs(eps, j1, j2, h1, pj1, pj2, ph1)
        bm = _bm_pairs(j1, j2, h1, pj1, pj2, ph1)

        winv = (1.0 / w)[None, :]
        vinv = (1.0 / v)[None, :]
        u_n = _vadd(jw, _vmul(bn, hw))  # [j(w) + B^N h(w)]
        t_n = _vadd(pjw, _vmul(bn, phw))  # [psi_j(w) + B^N psi_h(w)]
        t_m = _vadd(jw, _vmul(bm, hw))  # [j(w) + B^M h(w)]
        hv_v = (hv[0] * vinv, hv[1])
        pv_v = (phv[0] * vinv, phv[1])

        rad_r = w21 * ll1 * _vcollapse(_vmul(u_n, hv_v)) * winv
        rad_th = w21 * _vcollapse(_vmul(u_n, pv_v)) * winv
        tan_r = w21 * _vcollapse(_vmul(t_n, hv_v)) * winv
        tan_m = (w21 / ll1) * _vcollapse(_vmul(t_m, hv))
        tan_n = (w21 / ll1) * _vcollapse(_vmul(t_n, pv_v)) * winv

        # Tail test on the factor magnitudes, weighted by the worst-case
        # polynomial growth of the angular functions.
        gauge = (orders + 1.0) ** 2 * (
            np.abs(rad_r)
            + np.abs(rad_th)
            + np.abs(tan_r)
            + np.abs(tan_m)
            + np.abs(tan_n)
        )
        peak = np.maximum.accumulate(gauge, axis=0)
        small = gauge <= TAIL_RTOL * peak
        ok3 = np.zeros_like(small)
        if l_hi >= 3:
            ok3[2:] = small[2:] & small[1:-1] & small[:-2]
        if ok3.any(axis=0).all() or l_hi >= (1 << 15):
            if ok3.any(axis=0).all():
                stop = int(np.argmax(ok3, axis=0).max())
            else:
                stop = l_hi - 1
            keep = slice(0, stop + 1)
            return FarFactors(
                lmax=stop + 1,
                rad_r=rad_r[keep],
                rad_th=rad_th[keep],
                tan_r=tan_r[keep],
                tan_m=tan_m[keep],
                tan_n=tan_n[keep],
            )
        l_hi = min(2 * l_hi, 1 << 15)


# ---------------------------------------------------------------------------
# ground-state fluctuation spectrum profile


def fluctuation_profile(
    model: MaterialModel, radius: float, omega: float, r
) -> np.ndarray:
    """Radial-radial fluctuation spectrum (scattering part, arbitrary units)
    at frequency omega over an array of radii.

    Outside the sphere the sum runs over the scattered outgoing waves,
    inside over the interior coefficients with regular waves; points within
    SURFACE_GUARD of the surface are rejected (the macroscopic description
    breaks down at the surface, where the profile is singular).
    """
    if not omega > 0.0:
        raise ValueError(f"omega must be > 0, got {omega}")
    rr = np.atleast_1d(np.asarray(r, dtype=float)).ravel()
    if not (rr > 0.0).all():
        raise ValueError("all radii must be > 0")
    if (np.abs(rr - radius) < SURFACE_GUARD).any():
        raise ValueError(
            f"points closer than {SURFACE_GUARD} reference wavelengths to the "
            "surface are rejected (surface singularity)"
        )
    z1, z2, eps = size_parameters(model, radius, omega)
    k1 = TWO_PI * omega
    k2 = refractive_index_branch(eps) * k1
    out = rr > radius
    values = np.empty(rr.shape, dtype=float)

    if out.any():
        x = (k1 * rr[out]).astype(complex)
        s = _fluct_sum(model, radius, omega, x, outside=True)
        values[out] = omega * omega * np.imag(1j * k1 * s)
    if (~out).any():
        y = k2 * rr[~out].astype(complex)
        s = _fluct_sum(model, radius, omega, y, outside=False)
        values[~out] = omega * omega * np.imag(1j * k2 * s)
    return values


def _fluct_sum(
    model: MaterialModel,
    radius: float,
    omega: float,
    arg: np.ndarray,
    outside: bool,
) -> np.ndarray:
    """sum_l l(l+1)(2l+1) X_l [f_l(arg)/arg]^2 with (X, f) = (B^N, h1)
    outside and (C^N, j) inside."""
    z1, z2, eps = size_parameters(model, radius, omega)
    zs = np.array([z1], dtype=complex)
    zi = np.array([z2], dtype=complex)
    x_scale = max(abs(z1), abs(z2), float(np.max(np.abs(arg))))
    l_hi = max(truncation_order(x_scale), 48)
    n = arg.shape[0]

    while True:
        if (l_hi + 1) * n > _TABLE_BUDGET and n > 1:
            half = n // 2
            lo = _fluct_sum(model, radius, omega, arg[:half], outside)
            hi = _fluct_sum(model, radius, omega, arg[half:], outside)
            return np.concatenate([lo, hi])
        orders = np.arange(1, l_hi + 1, dtype=float)[:, None]
        weight = orders * (orders + 1.0) * (2.0 * orders + 1.0)

        tab_j1 = _j_table(l_hi, zs)
        tab_j2 = _j_table(l_hi, zi)
        tab_h1 = _h1_table(l_hi, zs)
        pj1 = _psi_table(zs, tab_j1)
        pj2 = _psi_table(zi, tab_j2)
        ph1 = _psi_table(zs, tab_h1)
        j1 = _row_slice(tab_j1)
        j2 = _row_slice(tab_j2)
        h1 = _row_slice(tab_h1)

        if outside:
            coeff = _bn_pairs(eps, j1, j2, h1, pj1, pj2, ph1)
            tab_f = _h1_table(l_hi, arg)
        else:
            tab_h2 = _h1_table(l_hi, zi)
            ph2 = _psi_table(zi, tab_h2)
            h2 = _row_slice(tab_h2)
            num = _vsub(_vmul(_vscale(eps, h2), ph1), _vmul(h1, ph2))
            den = _vsub(_vmul(_vscale(eps, j2), ph1), _vmul(pj2, h1))
            coeff = _vscale(-1.0, _vdiv(num, den))
            tab_f = _j_table(l_hi, arg)
        f = _row_slice(tab_f)
        f2 = _vmul(f, f)
        terms = weight * _vcollapse(_vmul(coeff, f2)) / (arg * arg)[None, :]
        partial = np.cumsum(terms, axis=0)
        stop, converged = _tail_stop([(np.abs(terms), np.abs(partial))])
        if converged or l_hi >= L_HARD_CAP:
            return partial[stop]
        l_hi = min(2 * l_hi, L_HARD_CAP)


def fluctuation_prr(model: MaterialModel, radius: float, omega: float, r: float) -> float:
    """Scalar radial-radial fluctuation spectrum at one radius."""
    return float(fluctuation_profile(model, radius, omega, [r])[0])


# ---------------------------------------------------------------------------
# argument-principle root counting


def _wrap_angle(x: float) -> float:
    return (x + math.pi) % (2.0 * math.pi) - math.pi


def _den_phase(model: MaterialModel, radius: float, omega: complex, l: int, pol: str) -> float:
    """Phase of the branch-free reduced denominator D(omega)/z2^l.

    Dividing out z2^l removes the only branch-dependent factor, so the
    phase is continuous wherever the denominator is nonzero and its
    winding counts exactly the resonance roots.
    """
    z1, z2, eps = size_parameters(model, radius, omega)
    j2 = sph_j_scaled(l, z2)
    h1 = sph_h1_scaled(l, z1)
    pj2 = _riccati_pair(z2, j2, l)
    ph1 = _riccati_pair(z1, h1, l)
    sj2: _Sc = _snorm(j2[0], j2[1])
    sh1: _Sc = _snorm(h1[0], h1[1])
    if pol == "TM":
        den = _ssub(_sscale(eps, _smul(sj2, ph1)), _smul(pj2, sh1))
    else:
        den = _ssub(_smul(pj2, sh1), _smul(sj2, ph1))
    if den[0] == 0:
        raise ArithmeticError(
            f"denominator vanished on the contour at omega={omega}"
        )
    return cmath.phase(den[0]) - l * cmath.phase(z2)


def root_count_certificate(
    model: MaterialModel,
    radius: float,
    l: int,
    pol: str,
    re_lo: float,
    re_hi: float,
    im_lo: float,
    im_hi: float,
) -> WindingCertificate:
    """Count characteristic-function roots inside a complex-frequency box.

    Integrates the phase of the reduced coefficient denominator around the
    rectangle [re_lo, re_hi] x [im_lo, im_hi], subdividing each edge until
    every phase step is small.  The box must keep clear of the material
    pole near the lower gap edge, where the denominator is not meromorphic.
    """
    pol = pol.upper()
    if pol not in ("TE", "TM"):
        raise ValueError(f"polarization must be 'TE' or 'TM', got {pol!r}")
    if not (0.0 < re_lo < re_hi and im_lo < im_hi):
        raise ValueError("rectangle corners are not ordered")
    if model.omega_t > 0.0:
        pole = complex(
            math.sqrt(max(model.omega_t**2 - 0.25 * model.gamma**2, 0.0)),
            -0.5 * model.gamma,
        )
        margin = 0.01 * model.omega_t
        if (re_lo - margin <= pole.real <= re_hi + margin) and (
            im_lo - margin <= pole.imag <= im_hi + margin
        ):
            raise ValueError(
                "rectangle must keep clear of the material pole at "
                f"omega ~ {pole:.6g}"
            )

    def phase(om: complex) -> float:
        return _den_phase(model, radius, om, l, pol)

    def edge_total(p0: complex, p1: complex, phi0: float, phi1: float, depth: int) -> float:
        d = _wrap_angle(phi1 - phi0)
        if abs(d) <= 0.5:
            return d
        if depth >= 48:
            raise ArithmeticError(
                f"phase subdivision exhausted between {p0} and {p1}"
            )
        pm = 0.5 * (p0 + p1)
        phim = phase(pm)
        return edge_total(p0, pm, phi0, phim, depth + 1) + edge_total(
            pm, p1, phim, phi1, depth + 1
        )

    corners = [
        complex(re_lo, im_lo),
        complex(re_hi, im_lo),
        complex(re_hi, im_hi),
        complex(re_lo, im_hi),
    ]
    n0 = 16 + 2 * l
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        pts = [a + (b - a) * k / n0 for k in range(n0 + 1)]
        phis = [phase(p) for p in pts]
        for (p0, p1, f0, f1) in zip(pts[:-1], pts[1:], phis[:-1], phis[1:]):
            total += edge_total(p0, p1, f0, f1, 0)
    winding = total / (2.0 * math.pi)
    count = int(round(winding))
    return WindingCertificate(
        l=l,
        polarization=pol,
        count=count,
        corner_lo=complex(re_lo, im_lo),
        corner_hi=complex(re_hi, im_hi),
        phase_defect=abs(winding - count),
    )
