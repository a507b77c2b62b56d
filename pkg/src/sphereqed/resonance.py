"""Resonance search for the dispersing sphere.

Whispering-gallery (WG) modes live below the band gap and are seeded by a
large-order asymptotic expansion in the Airy-function zeros; surface-guided
(SG) modes live inside the gap (TM only, at most one per order) and are
seeded by the flat-interface surface-wave expansion.  Seeds are refined by
Newton iteration on the characteristic function, linewidths are split into
radiative and absorptive parts by re-solving with an absorption-free clone
of the material, and the closed-form absorption quality factors are
provided for comparison.

Frequencies are in reference-frequency units and radii in reference
wavelengths throughout.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .material import (
    MaterialModel,
    RefractiveIndex,
    band_gap,
    eps_value,
    refractive_index_value,
)
from .mie import characteristic
from .specfun import airy_neg_roots

__all__ = [
    "Resonance",
    "ResonanceError",
    "SeedConvergenceError",
    "NoResonanceError",
    "RootRejectedError",
    "wg_seed",
    "sg_seed",
    "refine_root",
    "split_linewidth",
    "linewidth_taylor",
    "q_abs_closed_form",
    "find_resonance",
    "resonance_table",
]

TWO_PI = 2.0 * math.pi

# A refined root must stay this close to its seed (frequency units);
# anything farther has escaped the intended basin.
BASIN_RADIUS = 0.05
# Seeds for the same l count as duplicates of a known root within this
# multiple of the known linewidth.
DEFLATION_WIDTHS = 10.0


class ResonanceError(RuntimeError):
    """Base class for resonance-search failures."""


class SeedConvergenceError(ResonanceError):
    """The self-consistent seed equation failed to converge."""


class NoResonanceError(ResonanceError):
    """No resonance of the requested kind exists for this order."""


class RootRejectedError(ResonanceError):
    """Newton refinement diverged, escaped the basin, or landed in the
    upper half plane."""


@dataclass(frozen=True)
class Resonance:
    """One complex sphere resonance with its width decomposition.

    omega_c = Omega - i*delta_tot; q_tot = Omega/(2*delta_tot); q_abs is
    inf when the absorptive width underflows to zero (lossless material).
    """

    omega_c: complex
    pol: str
    l: int
    radial_order: int | None
    kind: str
    delta_rad: float
    delta_abs: float
    q_tot: float
    q_rad: float
    q_abs: float

    @property
    def omega(self) -> float:
        return self.omega_c.real

    @property
    def delta_tot(self) -> float:
        return -self.omega_c.imag


def _index_at(model: MaterialModel, omega: float) -> complex:
    return refractive_index_value(eps_value(model, complex(omega)))


def _wg_map(model: MaterialModel, radius: float, l: int, alpha: float,
            pol: str, omega: float) -> complex:
    """Asymptotic WG frequency f_{l,i}[n(omega)] (complex)."""
    nu = l + 0.5
    n = _index_at(model, omega)
    p = n if pol == "TE" else 1.0 / n
    root = cmath.sqrt(n * n - 1.0)
    bracket = (
        nu
        + 2.0 ** (-1.0 / 3.0) * alpha * nu ** (1.0 / 3.0)
        - p / root
        + 0.3 * 2.0 ** (-2.0 / 3.0) * alpha * alpha * nu ** (-1.0 / 3.0)
        - 2.0 ** (-1.0 / 3.0) * p * (n * n - 2.0 * p * p / 3.0) / root**3
        * alpha * nu ** (-2.0 / 3.0)
    )
    return bracket / (TWO_PI * radius * n)


def _sg_map(model: MaterialModel, radius: float, l: int, omega: float) -> complex:
    """Surface-wave frequency expansion (complex), valid for eps_R < -1."""
    nu = l + 0.5
    eps = eps_value(model, complex(omega))
    term1 = nu * cmath.sqrt(1.0 + 1.0 / eps)
    term2 = (eps * eps + eps + 1.0) / (2.0 * eps * cmath.sqrt(-eps - 1.0))
    return (term1 + term2) / (TWO_PI * radius)


def _rightmost_bracket(
    g, grid: np.ndarray, vals: np.ndarray | None = None
) -> tuple[float, float] | None:
    if vals is None:
        vals = np.array([g(x) for x in grid])
    sign = np.sign(vals)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if len(flips) == 0:
        return None
    k = int(flips[-1])
    return float(grid[k]), float(grid[k + 1])


def wg_seed(model: MaterialModel, radius: float, l: int, i: int, pol: str) -> complex:
    """Asymptotic seed for the WG resonance of order l and radial order i.

    Solves the self-consistency omega = Re f_{l,i}[n(omega)] below the gap
    by bracketing and Brent iteration (the bare successive-substitution map
    diverges near the gap edge where |df/domega| > 1), then evaluates the
    complex map once at the solution so the seed carries a first estimate
    of the linewidth.
    """
    pol = pol.upper()
    if pol not in ("TE", "TM"):
        raise ValueError(f"polarization must be 'TE' or 'TM', got {pol!r}")
    if l < 1:
        raise ValueError(f"order must be >= 1, got {l}")
    if not 1 <= i <= 20:
        raise ValueError(f"radial order must be in [1, 20], got {i}")
    if model.is_metal:
        raise NoResonanceError("a metal has no below-gap region, so no WG modes")
    alpha = airy_neg_roots(i)[i - 1]
    lo = 1e-6 * model.omega_t
    hi = model.omega_t * (1.0 - 1e-9)

    def g(om: float) -> float:
        return om - _wg_map(model, radius, l, alpha, pol, om).real

    grid = np.linspace(lo, hi, 257)
    bracket = _rightmost_bracket(g, grid)
    if bracket is None:
        raise SeedConvergenceError(
            f"WG seed map has no below-gap fixed point for l={l}, i={i}, {pol}"
        )
    try:
        om_star = brentq(g, bracket[0], bracket[1], xtol=1e-14, rtol=1e-15,
                         maxiter=50)
    except RuntimeError as exc:
        raise SeedConvergenceError(
            f"WG seed iteration failed for l={l}, i={i}, {pol}: {exc}"
        ) from exc
    seed = _wg_map(model, radius, l, alpha, pol, float(om_star))
    return complex(om_star, min(seed.imag, 0.0))


def sg_seed(model: MaterialModel, radius: float, l: int) -> complex:
    """Surface-wave seed for the (TM-only) in-gap resonance of order l.

    The expansion is valid only where eps_R < -1; orders whose fixed point
    would fall outside that window are refused.  The self-consistency
    curve omega - Re f(omega) rises to +inf at both window edges, so it
    crosses zero twice when a resonance exists; the left crossing is an
    artifact of the expansion blowing up at the lower edge and the right
    crossing is the physical one.
    """
    if l < 1:
        raise ValueError(f"order must be >= 1, got {l}")
    gap = band_gap(model)
    lo = max(model.omega_t * (1.0 + 1e-9), 1e-4 * gap.sg_bound)
    hi = gap.sg_bound * (1.0 - 1e-9)
    # Roots crowd against the upper edge as l grows (the gap closes like
    # 1/nu^2), so augment a uniform scan grid with one clustered
    # quadratically toward hi, or the bracket slips between grid points
    # for l of a few hundred.
    u = np.linspace(1.0, 0.0, 513)
    grid = np.unique(
        np.concatenate([np.linspace(lo, hi, 513), hi - (hi - lo) * u * u])
    )
    eps_grid = eps_value(model, grid.astype(complex))
    mask = eps_grid.real < -1.0
    if not mask.any():
        raise NoResonanceError(
            "the surface-wave window eps_R < -1 is empty for this material"
        )
    grid = grid[mask]
    eps_grid = eps_grid[mask]

    def g(om: float) -> float:
        return om - _sg_map(model, radius, l, om).real

    nu = l + 0.5
    term1 = nu * np.sqrt(1.0 + 1.0 / eps_grid)
    term2 = (eps_grid * eps_grid + eps_grid + 1.0) / (
        2.0 * eps_grid * np.sqrt(-eps_grid - 1.0)
    )
    gvals = grid - ((term1 + term2) / (TWO_PI * radius)).real
    bracket = _rightmost_bracket(g, grid, gvals)
    if bracket is None:
        raise NoResonanceError(
            f"no surface-wave fixed point below the existence bound for l={l}"
        )
    try:
        om_star = brentq(g, bracket[0], bracket[1], xtol=1e-14, rtol=1e-15,
                         maxiter=50)
    except RuntimeError as exc:
        raise SeedConvergenceError(
            f"SG seed iteration failed for l={l}: {exc}"
        ) from exc
    if not eps_value(model, complex(float(om_star))).real < -1.0:
        raise NoResonanceError(
            f"SG fixed point for l={l} violates the existence condition"
        )
    seed = _sg_map(model, radius, l, float(om_star))
    # Near the upper window edge the square root in the expansion turns
    # steep and its imaginary part stops tracking the physical linewidth
    # (which is bounded by the collision rate); clamp so Newton starts
    # inside the basin instead of a half-linewidth of 0.08 deep.
    im = min(seed.imag, 0.0)
    if model.gamma > 0.0:
        im = max(im, -model.gamma)
    return complex(om_star, im)


def refine_root(
    model: MaterialModel, radius: float, l: int, pol: str, seed: complex
) -> complex:
    """Newton-refine a characteristic-function root from a seed.

    Central-difference derivative with step 1e-7*max(1, |omega|);
    converged when |M| < 1e-10*|M'|*|omega| and the last step is below
    1e-12.  Roots that diverge, land in the upper half plane, or end up
    farther than 0.05 from the seed are rejected.
    """
    pol = pol.upper()
    om = complex(seed)
    if om.imag > 0.0:
        om = complex(om.real, -abs(om.imag))
    last_step = math.inf
    for _ in range(80):
        f = characteristic(model, radius, om, l, pol).value
        h = 1e-7 * max(1.0, abs(om))
        fp = (
            characteristic(model, radius, om + h, l, pol).value
            - characteristic(model, radius, om - h, l, pol).value
        ) / (2.0 * h)
        if fp == 0 or not (cmath.isfinite(f) and cmath.isfinite(fp)):
            raise RootRejectedError(
                f"Newton diverged for l={l} {pol} from seed {seed:.6g}"
            )
        step = f / fp
        om -= step
        last_step = abs(step)
        if not cmath.isfinite(om) or abs(om - seed) > 10.0 * BASIN_RADIUS:
            raise RootRejectedError(
                f"Newton diverged for l={l} {pol} from seed {seed:.6g}"
            )
        if abs(f) < 1e-10 * abs(fp) * abs(om) and last_step < 1e-12:
            break
    else:
        raise RootRejectedError(
            f"Newton did not converge for l={l} {pol} from seed {seed:.6g}"
        )
    if om.imag >= 0.0:
        raise RootRejectedError(
            f"root {om:.6g} for l={l} {pol} lies in the upper half plane"
        )
    if abs(om - seed) > BASIN_RADIUS:
        raise RootRejectedError(
            f"root {om:.6g} for l={l} {pol} escaped the seed basin ({seed:.6g})"
        )
    return om


def _real_axis_radiative_width(
    model: MaterialModel, radius: float, l: int, pol: str, omega_guess: float
) -> float | None:
    """Radiative width of a lossless mode from the real axis.

    For a lossless material at real frequency the interior log-derivative
    is real, so Im M comes entirely from the outgoing wave and the width
    delta = Im M / Re M' stays accurate long after the complex root's
    imaginary part has fallen below Newton's resolution.  Returns None
    when the local crossing of Re M is not resonance-like.
    """

    def re_m(om: float) -> float:
        return characteristic(model, radius, om, l, pol).value.real

    h0 = 1e-4 * max(1.0, omega_guess)
    a, b = omega_guess - h0, omega_guess + h0
    fa, fb = re_m(a), re_m(b)
    grow = 0
    while fa * fb > 0 and grow < 20:
        a -= h0
        b += h0
        fa, fb = re_m(a), re_m(b)
        grow += 1
    if fa * fb > 0:
        return None
    omega0 = brentq(re_m, a, b, xtol=1e-15, rtol=1e-15)
    h = 1e-7 * max(1.0, omega0)
    m0 = characteristic(model, radius, omega0, l, pol).value
    mp = (
        characteristic(model, radius, omega0 + h, l, pol).value
        - characteristic(model, radius, omega0 - h, l, pol).value
    ) / (2.0 * h)
    if mp.real == 0.0:
        return None
    delta = m0.imag / mp.real
    return delta if delta > 0.0 else None


def split_linewidth(
    model: MaterialModel, radius: float, l: int, pol: str, resonance
) -> tuple[float, float]:
    """(delta_rad, delta_abs) for a converged resonance.

    The radiative part is the linewidth of the same mode with the material
    absorption switched off (gamma -> 0, keeping the dispersion of the
    real permittivity); the absorptive part is the remainder, floored at
    zero.  Accepts a Resonance or a bare complex root.
    """
    omega_c = complex(getattr(resonance, "omega_c", resonance))
    delta_tot = -omega_c.imag
    lossless = model.lossless()
    try:
        om_ll = refine_root(lossless, radius, l, pol, omega_c)
        delta_rad = -om_ll.imag
    except ResonanceError as exc:
        raise RootRejectedError(
            f"lossless re-solve failed for l={l} {pol}: {exc}"
        ) from exc
    if delta_rad < 1e-11 * abs(om_ll):
        # The complex root is too shallow for Newton to resolve; use the
        # real-axis route, which is exact in the lossless case.
        better = _real_axis_radiative_width(lossless, radius, l, pol, om_ll.real)
        if better is not None:
            delta_rad = better
    delta_rad = max(delta_rad, 0.0)
    delta_abs = max(delta_tot - delta_rad, 0.0)
    return delta_rad, delta_abs


def linewidth_taylor(
    model: MaterialModel, radius: float, l: int, pol: str, omega: float
) -> float:
    """First-order total-linewidth estimate at a real frequency.

    Uses the characteristic value at omega with the closed-form derivative
    approximation: M' ~ eps - 1 for TE waves and
    M' ~ (eps - 1)[(1 + 1/eps)(nu/(2 pi R omega))^2 - 1] for TM waves.
    Both closed forms are derivatives with respect to the vacuum size
    parameter 2*pi*R*omega (at the root the Bessel-equation terms cancel
    in pairs and only these survive), so the quotient is divided by
    2*pi*R to express the width as a frequency.

    The derivative freezes the permittivity at its value at omega, which
    is exact for a flat index.  Where the index disperses strongly (near
    the gap edge) the true dM/domega picks up a d(eps)/domega term this
    estimate lacks, and the estimate overshoots the converged width by
    the same factor.  Far from any resonance the estimate is large and
    unreliable, which callers detect by comparing against the exact root.
    """
    pol = pol.upper()
    nu = l + 0.5
    eps = eps_value(model, complex(omega))
    m = characteristic(model, radius, omega, l, pol).value
    if pol == "TE":
        mp = eps - 1.0
    else:
        ratio = nu / (TWO_PI * radius * omega)
        mp = (eps - 1.0) * ((1.0 + 1.0 / eps) * ratio * ratio - 1.0)
    return (m / mp).imag / (TWO_PI * radius)


def q_abs_closed_form(
    n: RefractiveIndex, nu: float, pol: str, kind: str
) -> float:
    """Closed-form absorption quality factor.

    WG (below gap, needs n_I << n_R):
        Q_abs = n_R/(2 n_I) + n_R (2 n_R - P) / (2 n_I (n_R^2 - 1)^{3/2}) / nu
    with P = n_R for TE and 1/n_R for TM.  SG (in gap, needs n_R << n_I):
        Q_abs = n_I (n_I^2 - 1) / (2 n_R).
    """
    pol = pol.upper()
    kind = kind.upper()
    if kind == "WG":
        if not n.n_i < n.n_r:
            raise ValueError(
                "the WG closed form needs weak absorption (n_I < n_R), got "
                f"n = {n.n_r} + {n.n_i}i"
            )
        if not n.n_r > 1.0:
            raise ValueError(f"the WG closed form needs n_R > 1, got {n.n_r}")
        if n.n_i == 0.0:
            return math.inf
        p = n.n_r if pol == "TE" else 1.0 / n.n_r
        lead = n.n_r / (2.0 * n.n_i)
        corr = (
            n.n_r * (2.0 * n.n_r - p)
            / (2.0 * n.n_i * (n.n_r**2 - 1.0) ** 1.5)
            / nu
        )
        return lead + corr
    if kind == "SG":
        if not n.n_r < n.n_i:
            raise ValueError(
                "the SG closed form needs a gap-like index (n_R < n_I), got "
                f"n = {n.n_r} + {n.n_i}i"
            )
        if n.n_r == 0.0:
            return math.inf
        return n.n_i * (n.n_i**2 - 1.0) / (2.0 * n.n_r)
    raise ValueError(f"kind must be 'WG' or 'SG', got {kind!r}")


def find_resonance(
    model: MaterialModel,
    radius: float,
    l: int,
    pol: str = "TM",
    kind: str = "WG",
    radial_order: int = 1,
) -> Resonance:
    """Seed, refine, and width-split one resonance."""
    kind = kind.upper()
    pol = pol.upper()
    if kind == "WG":
        seed = wg_seed(model, radius, l, radial_order, pol)
        order: int | None = radial_order
    elif kind == "SG":
        if pol != "TM":
            raise NoResonanceError("surface-guided modes are TM-only")
        seed = sg_seed(model, radius, l)
        order = None
    else:
        raise ValueError(f"kind must be 'WG' or 'SG', got {kind!r}")
    omega_c = refine_root(model, radius, l, pol, seed)
    delta_rad, delta_abs = split_linewidth(model, radius, l, pol, omega_c)
    omega = omega_c.real
    delta_tot = -omega_c.imag
    q_tot = omega / (2.0 * delta_tot) if delta_tot > 0 else math.inf
    q_rad = omega / (2.0 * delta_rad) if delta_rad > 0 else math.inf
    q_abs = omega / (2.0 * delta_abs) if delta_abs > 0 else math.inf
    return Resonance(
        omega_c=omega_c,
        pol=pol,
        l=l,
        radial_order=order,
        kind=kind,
        delta_rad=delta_rad,
        delta_abs=delta_abs,
        q_tot=q_tot,
        q_rad=q_rad,
        q_abs=q_abs,
    )


def resonance_table(
    model: MaterialModel,
    radius: float,
    l_values,
    pol: str = "TM",
    kind: str = "WG",
    radial_orders=(1,),
) -> list[Resonance]:
    """Resonances over a range of orders, skipping absent ones.

    Roots for the same l that land within ten linewidths of an already
    accepted root are treated as duplicates of that root and dropped.
    """
    found: list[Resonance] = []
    for l in l_values:
        known: list[complex] = []
        orders = radial_orders if kind.upper() == "WG" else (1,)
        for i in orders:
            try:
                res = find_resonance(model, radius, int(l), pol, kind, int(i))
            except ResonanceError:
                continue
            dup = any(
                abs(res.omega_c - prev) < DEFLATION_WIDTHS * res.delta_tot
                for prev in known
            )
            if dup:
                continue
            known.append(res.omega_c)
            found.append(res)
    return found
