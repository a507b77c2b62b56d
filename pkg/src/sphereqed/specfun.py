"""Spherical Bessel/Hankel functions, Legendre functions and Airy roots.

The spherical functions are computed by recurrence with an explicit
power-of-two exponent carried alongside the mantissa, so orders far beyond
the turning point (l >> |z|) neither overflow nor underflow before they are
combined into the O(1) ratios the physics actually needs.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import airy as _scipy_airy

__all__ = [
    "SphericalFunctionValue",
    "AngularFunctions",
    "SpecialFunctionRangeError",
    "sph_bessel",
    "legendre",
    "airy_neg_roots",
]

# Renormalization threshold for scaled recurrences: mantissas are kept below
# 2**500 in magnitude so double precision never saturates mid-recurrence.
RENORM_LIMIT = 2.0**500
RENORM_SCALE = 2.0**-500
RENORM_SHIFT = 500


class SpecialFunctionRangeError(ValueError):
    """A requested function value is not representable in double precision."""


@dataclass(frozen=True)
class SphericalFunctionValue:
    """j_l, y_l, h1_l at argument z plus the Riccati derivatives [z f_l(z)]'."""

    j: complex
    y: complex
    h1: complex
    riccati_j_prime: complex
    riccati_h1_prime: complex


@dataclass(frozen=True)
class AngularFunctions:
    """Associated Legendre data at (l, m, theta), Condon-Shortley-free.

    pi_term is m*P_l^m(cos theta)/sin(theta); tilde_p is the m-independent
    combination l(l+1)*P_l - cos(theta)*dP_l/dx driving the tangential
    far-field sum, equal to d/dtheta[sin(theta)*dP_l/dx].
    """

    p: float
    dp_dtheta: float
    pi_term: float
    tilde_p: float


def miller_start(l: int, z_abs: float) -> int:
    """Starting order for the downward Miller recurrence targeting order l."""
    return l + max(20, math.ceil(10.0 * z_abs ** (1.0 / 3.0)))


def scaled_collapse(mant: complex, exp2: int) -> complex:
    """mant * 2**exp2 as plain complex; underflow flushes to zero.

    Raises OverflowError when the true value exceeds double range.
    """
    return complex(math.ldexp(mant.real, exp2), math.ldexp(mant.imag, exp2))


def scaled_sub(am: complex, ae: int, bm: complex, be: int) -> tuple[complex, int]:
    """a - b as a scaled pair, for a = am*2**ae and b = bm*2**be."""
    e = max(ae, be)
    return scaled_collapse(am, ae - e) - scaled_collapse(bm, be - e), e


def _j_closed_pair(z: complex) -> tuple[complex, complex]:
    """Closed-form (j_0, j_1)."""
    sz, cz = cmath.sin(z), cmath.cos(z)
    return sz / z, sz / (z * z) - cz / z


def h1_seeds(z: complex) -> tuple[complex, complex]:
    """Closed-form (h1_0, h1_1)."""
    ez = cmath.exp(1j * z)
    return -1j * ez / z, -ez * (1.0 / z + 1j / (z * z))


def y_seeds(z: complex) -> tuple[complex, complex]:
    """Closed-form (y_0, y_1)."""
    sz, cz = cmath.sin(z), cmath.cos(z)
    return -cz / z, -cz / (z * z) - sz / z


def _upward_scaled(
    l: int, f0: complex, f1: complex, z: complex
) -> tuple[complex, int, complex, int]:
    """Scaled (f_l, f_{l-1}) from seeds f_0, f_1 by the standard recurrence."""
    if l == 1:
        return f1, 0, f0, 0
    inv_z = 1.0 / z
    f_prev, f_here = f0, f1
    shift = 0
    for k in range(1, l):
        f_next = (2 * k + 1) * inv_z * f_here - f_prev
        f_prev = f_here
        f_here = f_next
        if abs(f_here.real) > RENORM_LIMIT or abs(f_here.imag) > RENORM_LIMIT:
            f_here *= RENORM_SCALE
            f_prev *= RENORM_SCALE
            shift += RENORM_SHIFT
    return f_here, shift, f_prev, shift


def _frexp_norm(m: complex, e: int) -> tuple[complex, int]:
    """Rescale a (mantissa, exp2) pair so |mantissa| lands in [0.5, 1)."""
    if m == 0:
        return 0.0 + 0.0j, 0
    ex = math.frexp(abs(m))[1]
    return complex(math.ldexp(m.real, -ex), math.ldexp(m.imag, -ex)), e + ex


def _sph_j_down(l: int, z: complex) -> tuple[complex, int, complex, int]:
    """Scaled (j_l, j_{l-1}) by downward Miller recurrence, l >= 1.

    The trial solution seeded above the target order converges onto j_l as
    it descends; the scale is fixed afterwards against the closed-form j_0
    or j_1, whichever is larger in magnitude (they cannot both be small).
    """
    l_start = miller_start(l, abs(z))
    inv_z = 1.0 / z
    f_above = 0.0 + 0.0j  # trial j_{k+1}
    f_here = 1.0 + 0.0j  # trial j_k at k = l_start
    shift = 0
    m_l = m_lm1 = m_0 = m_1 = 0.0 + 0.0j
    e_l = e_lm1 = e_0 = e_1 = 0
    for k in range(l_start, 0, -1):
        f_below = (2 * k + 1) * inv_z * f_here - f_above
        f_above = f_here
        f_here = f_below
        if abs(f_here.real) > RENORM_LIMIT or abs(f_here.imag) > RENORM_LIMIT:
            f_here *= RENORM_SCALE
            f_above *= RENORM_SCALE
            shift += RENORM_SHIFT
        if k - 1 == l:
            m_l, e_l = f_here, shift
        elif k - 1 == l - 1:
            m_lm1, e_lm1 = f_here, shift
        if k - 1 == 0:
            m_0, e_0 = f_here, shift
        elif k - 1 == 1:
            m_1, e_1 = f_here, shift
    # Renormalize every stored row to an order-unity mantissa before the
    # scale fix, so the mantissa products below cannot under- or overflow.
    m_l, e_l = _frexp_norm(m_l, e_l)
    m_lm1, e_lm1 = _frexp_norm(m_lm1, e_lm1)
    m_0, e_0 = _frexp_norm(m_0, e_0)
    m_1, e_1 = _frexp_norm(m_1, e_1)
    j0, j1 = _j_closed_pair(z)
    if abs(j0) >= abs(j1):
        c_m, c_e = j0 / m_0, -e_0
    else:
        c_m, c_e = j1 / m_1, -e_1
    return m_l * c_m, e_l + c_e, m_lm1 * c_m, e_lm1 + c_e


def sph_j_scaled(l: int, z: complex) -> tuple[complex, int, complex, int]:
    """Scaled (j_l mantissa, exp2, j_{l-1} mantissa, exp2) for l >= 1."""
    if l > abs(z):
        return _sph_j_down(l, z)
    j0, j1 = _j_closed_pair(z)
    return _upward_scaled(l, j0, j1, z)


def sph_h1_scaled(l: int, z: complex) -> tuple[complex, int, complex, int]:
    """Scaled (h1_l, h1_{l-1}) by upward recurrence, l >= 1."""
    h0, h1 = h1_seeds(z)
    return _upward_scaled(l, h0, h1, z)


def sph_bessel(l: int, z: complex) -> SphericalFunctionValue:
    """Spherical j_l, y_l, h1_l and Riccati derivatives at order l >= 0.

    j is computed downward (Miller) beyond the turning point and upward
    below it; y and h1 are always computed upward from their closed-form
    seeds. Underflowing values flush to zero; an overflowing y or h1 raises
    SpecialFunctionRangeError carrying (l, z).

    Parameters
    ----------
    l : int
        Order, l >= 0.
    z : complex
        Argument, z != 0.
    """
    if l < 0 or l != int(l):
        raise ValueError(f"order must be a non-negative integer, got {l}")
    z = complex(z)
    if z == 0:
        raise ValueError("argument z must be nonzero")
    l = int(l)
    if l == 0:
        j0, _ = _j_closed_pair(z)
        y0, _ = y_seeds(z)
        h0, _ = h1_seeds(z)
        # [z f_0]' = z f_{-1} with j_{-1} = cos(z)/z, h1_{-1} = exp(iz)/z.
        return SphericalFunctionValue(
            j=j0,
            y=y0,
            h1=h0,
            riccati_j_prime=cmath.cos(z),
            riccati_h1_prime=cmath.exp(1j * z),
        )
    jm, je, jm1, je1 = sph_j_scaled(l, z)
    y0, y1 = y_seeds(z)
    h0, h1 = h1_seeds(z)
    ym, ye, _, _ = _upward_scaled(l, y0, y1, z)
    hm, he, hm1, he1 = _upward_scaled(l, h0, h1, z)
    try:
        j_l = scaled_collapse(jm, je)
        y_l = scaled_collapse(ym, ye)
        h_l = scaled_collapse(hm, he)
        # [z f_l]' = z f_{l-1} - l f_l.
        rjm, rje = scaled_sub(z * jm1, je1, l * jm, je)
        rhm, rhe = scaled_sub(z * hm1, he1, l * hm, he)
        ricc_j = scaled_collapse(rjm, rje)
        ricc_h = scaled_collapse(rhm, rhe)
    except OverflowError as exc:
        raise SpecialFunctionRangeError(
            f"spherical function overflows double precision at l={l}, z={z}"
        ) from exc
    return SphericalFunctionValue(
        j=j_l, y=y_l, h1=h_l, riccati_j_prime=ricc_j, riccati_h1_prime=ricc_h
    )


def legendre_p_dp(lmax: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tables P_l(x) and dP_l/dx for l = 0..lmax (vectorized over x).

    The derivative uses dP_l/dx = dP_{l-2}/dx + (2l-1) P_{l-1}, which is
    polynomial-exact and stays finite at x = +-1.
    """
    x = np.asarray(x, dtype=float)
    p = np.empty((lmax + 1,) + x.shape, dtype=float)
    dp = np.empty_like(p)
    p[0] = 1.0
    dp[0] = 0.0
    if lmax >= 1:
        p[1] = x
        dp[1] = 1.0
    for l in range(2, lmax + 1):
        p[l] = ((2 * l - 1) * x * p[l - 1] - (l - 1) * p[l - 2]) / l
        dp[l] = dp[l - 2] + (2 * l - 1) * p[l - 1]
    return p, dp


def legendre(l: int, m: int, theta: float) -> AngularFunctions:
    """Associated Legendre P_l^m(cos theta) and the derived angular terms.

    Uses the physics convention without the Condon-Shortley phase,
    P_l^m = (1-x^2)^{m/2} d^m P_l/dx^m. Pole values at theta = 0, pi are
    the analytic limits (only m = 1 survives in pi_term and dp_dtheta).

    Parameters
    ----------
    l : int
        Degree, l >= 1.
    m : int
        Order, 0 <= m <= l.
    theta : float
        Polar angle in radians.
    """
    if l < 1:
        raise ValueError(f"degree must be >= 1, got {l}")
    if not 0 <= m <= l:
        raise ValueError(f"order must satisfy 0 <= m <= l, got m={m}, l={l}")
    x = math.cos(theta)
    s = math.sin(theta)
    pl, dpl = legendre_p_dp(l, np.array(x))
    p_l = float(pl[l])
    dp_l = float(dpl[l])
    tilde_p = l * (l + 1) * p_l - x * dp_l

    if m == 0:
        p_here = p_l
    elif m == l:
        p_here = 1.0
        for k in range(1, m + 1):
            p_here *= (2 * k - 1) * s
    else:
        # Ascend in degree from the diagonal seed P_m^m.
        pmm = 1.0
        for k in range(1, m + 1):
            pmm *= (2 * k - 1) * s
        p_prev = pmm
        p_here = (2 * m + 1) * x * pmm
        for k in range(m + 1, l):
            p_next = ((2 * k + 1) * x * p_here - (k + m) * p_prev) / (k - m + 1)
            p_prev = p_here
            p_here = p_next

    if m == 0:
        pi_term = 0.0
        dp_dtheta = -s * dp_l
    elif m == 1:
        # Exact relations: P_l^1 = sin(theta) dP_l/dx, so pi_term is dP_l/dx
        # itself and the theta-derivative is cos*P_l' - sin^2*P_l'',
        # both finite at the poles.
        d2 = np.zeros(l + 1)
        for k in range(2, l + 1):
            d2[k] = d2[k - 2] + (2 * k - 1) * float(dpl[k - 1])
        pi_term = dp_l
        dp_dtheta = x * dp_l - s * s * float(d2[l])
    else:
        if abs(s) < 1e-12:
            # P_l^m ~ sin^m(theta), so both vanish at the poles for m >= 2.
            pi_term = 0.0
            dp_dtheta = 0.0
        else:
            p_below = p_prev if m < l else 0.0
            pi_term = m * p_here / s
            dp_dtheta = (l * x * p_here - (l + m) * p_below) / s
    return AngularFunctions(
        p=p_here, dp_dtheta=dp_dtheta, pi_term=pi_term, tilde_p=tilde_p
    )


def airy_neg_roots(count: int) -> list[float]:
    """First `count` positive numbers a with Ai(-a) = 0, ascending.

    Seeds come from the large-order asymptotic a_i ~ [3 pi (4 i - 1)/8]^(2/3)
    and are polished by bisection to ~1e-12.
    """
    if not 1 <= count <= 20:
        raise ValueError(f"count must be in 1..20, got {count}")

    def f(t: float) -> float:
        return float(_scipy_airy(-t)[0])

    roots = []
    for i in range(1, count + 1):
        seed = (3.0 * math.pi * (4 * i - 1) / 8.0) ** (2.0 / 3.0)
        width = 0.2
        lo, hi = seed - width, seed + width
        while f(lo) * f(hi) > 0.0:
            width *= 2.0
            lo, hi = seed - width, seed + width
            if width > 2.0:
                raise RuntimeError(f"could not bracket Airy root {i}")
        flo = f(lo)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
            if hi - lo < 1e-13:
                break
        roots.append(0.5 * (lo + hi))
    return roots
