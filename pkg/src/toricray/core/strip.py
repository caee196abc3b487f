"""Harmonic analysis on strips: Poisson kernels, Fourier multipliers and Paley-Wiener tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.signal.windows import tukey

from toricray.core.convex import gradient
from toricray.core.hj import hopf_lax_value
from toricray.core.toric import CauchyData
from toricray.errors import DomainError, NumericalError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 64
DEFAULT_TAPER = 0.2
DEFAULT_BAND = (0.1, 0.6)
DEFAULT_PW_MARGIN = 0.02
SPECTRAL_FLOOR = 1e-13
MIN_BAND_POINTS = 8
# Upper-half decay rate this many times the lower-half rate marks super-exponential decay.
SUPER_EXPONENTIAL_FACTOR = 1.5


@dataclass(frozen=True, eq=False)
class LineFn:
    """Samples of f(t) at t_k = -L + k dt, dt = 2L/N, on the periodic window [-L, L)."""

    half_width: float
    values: np.ndarray
    taper: float = 0.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        n = values.size
        if n < MIN_SAMPLES or n & (n - 1):
            raise DomainError(f"sample count must be a power of two >= {MIN_SAMPLES}, got {n}")
        if not self.half_width > 0:
            raise DomainError("half_width must be positive")
        if not np.all(np.isfinite(values)):
            raise DomainError("LineFn values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(
        cls,
        func: Callable[[np.ndarray], np.ndarray],
        half_width: float,
        samples: int,
        *,
        taper: float = DEFAULT_TAPER,
    ) -> LineFn:
        """Sample ``func`` on the window and multiply by a Tukey taper of width ``taper``."""
        t = -half_width + np.arange(samples) * (2.0 * half_width / samples)
        values = np.broadcast_to(np.asarray(func(t), dtype=float), t.shape)
        if taper > 0:
            values = values * tukey(samples, alpha=taper)
        return cls(half_width, values, taper)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def dt(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def t(self) -> np.ndarray:
        return -self.half_width + np.arange(self.n) * self.dt

    @property
    def central(self) -> np.ndarray:
        """Mask of the central half-window |t| <= L/2."""
        return np.abs(self.t) <= 0.5 * self.half_width

    def with_values(self, values: np.ndarray) -> LineFn:
        return LineFn(self.half_width, values, self.taper)

    def same_window(self, other: LineFn) -> bool:
        return self.n == other.n and np.isclose(self.half_width, other.half_width)


@dataclass
class SpectralFn:
    """Fourier coefficients with the convention f^(xi) = integral of exp(-i t xi) f(t) dt."""

    xi: np.ndarray
    coeffs: np.ndarray = field(repr=False)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    def rows(self) -> list[list[float]]:
        """CSV rows: xi, re, im, log_abs."""
        with np.errstate(divide="ignore"):
            log_abs = np.log(self.magnitude)
        return [
            [float(x), float(c.real), float(c.imag), float(la)]
            for x, c, la in zip(self.xi, self.coeffs, log_abs)
        ]


def fourier(f: LineFn) -> SpectralFn:
    """Discrete approximation of f^(xi) at the FFT frequencies xi = 2 pi k / (N dt)."""
    xi = 2.0 * np.pi * np.fft.fftfreq(f.n, d=f.dt)
    coeffs = f.dt * np.exp(1j * f.half_width * xi) * np.fft.fft(f.values)
    return SpectralFn(xi, coeffs)


def inverse_fourier(spec: SpectralFn, half_width: float) -> LineFn:
    n = spec.xi.size
    dt = 2.0 * half_width / n
    values = np.fft.ifft(spec.coeffs * np.exp(-1j * half_width * spec.xi)) / dt
    return LineFn(half_width, values.real)


def _rfreq(f: LineFn) -> np.ndarray:
    return 2.0 * np.pi * np.fft.rfftfreq(f.n, d=f.dt)


def _apply(f: LineFn, symbol: np.ndarray) -> LineFn:
    return f.with_values(np.fft.irfft(symbol * np.fft.rfft(f.values), n=f.n))


def _coth_symbol(xi: np.ndarray, T: float) -> np.ndarray:
    out = np.full(xi.shape, 1.0 / T)
    nz = xi != 0
    out[nz] = xi[nz] / np.tanh(T * xi[nz])
    return out


def _csch_symbol(xi: np.ndarray, T: float) -> np.ndarray:
    out = np.full(xi.shape, 1.0 / T)
    nz = xi != 0
    a = np.abs(xi[nz])
    out[nz] = 2.0 * a * np.exp(-T * a) / -np.expm1(-2.0 * T * a)
    return out


def multiplier_AT(f: LineFn, T: float) -> LineFn:
    """A_T = D coth(T D), symbol xi coth(T xi) with limit 1/T at xi = 0."""
    return _apply(f, _coth_symbol(_rfreq(f), T))


def multiplier_DsinhTD(f: LineFn, T: float) -> LineFn:
    """D / sinh(T D), symbol xi / sinh(T xi) with limit 1/T at xi = 0."""
    return _apply(f, _csch_symbol(_rfreq(f), T))


def hilbert(f: LineFn) -> LineFn:
    """Hilbert transform, symbol -i sign(xi); the Nyquist mode is dropped."""
    xi = _rfreq(f)
    symbol = -1j * np.sign(xi)
    if f.n % 2 == 0:
        symbol[-1] = 0.0
    return _apply(f, symbol)


def positive_projection(f: LineFn) -> np.ndarray:
    """(I + i Hilb) f as complex samples: doubles positive frequencies and removes negative ones."""
    coeffs = np.fft.fft(f.values)
    freq = np.fft.fftfreq(f.n)
    symbol = 1.0 + np.sign(freq)
    symbol[f.n // 2] = 0.0
    return np.fft.ifft(symbol * coeffs)


def multiplier_identity_defects(
    half_width: float, samples: int, T: float, *, modes: tuple[int, ...] = (1, 4, 16)
) -> dict[str, float]:
    """
    Sup errors of the multipliers on cos(xi t) at grid frequencies xi = pi k / L.

    A_T and D/sinh(TD) must scale it by their symbols, Hilb must turn it into sin(xi t) and
    the positive projection into exp(i xi t).
    """
    base = LineFn(half_width, np.zeros(samples))
    t = base.t
    out = {"A_T": 0.0, "DsinhTD": 0.0, "hilbert": 0.0, "positive_projection": 0.0}
    for k in modes:
        xi = np.pi * k / half_width
        f = base.with_values(np.cos(xi * t))
        coth = xi / np.tanh(T * xi)
        csch = xi / np.sinh(T * xi)
        errors = {
            "A_T": multiplier_AT(f, T).values - coth * f.values,
            "DsinhTD": multiplier_DsinhTD(f, T).values - csch * f.values,
            "hilbert": hilbert(f).values - np.sin(xi * t),
            "positive_projection": positive_projection(f) - np.exp(1j * xi * t),
        }
        for name, err in errors.items():
            out[name] = max(out[name], float(np.max(np.abs(err))))
    return out


@dataclass
class StripField:
    """Samples u(s, t) on [0, T] x window, rows indexed by s."""

    s_grid: np.ndarray
    t: np.ndarray
    values: np.ndarray = field(repr=False)
    half_width: float

    @property
    def central(self) -> np.ndarray:
        return np.abs(self.t) <= 0.5 * self.half_width

    def to_dict(self) -> dict:
        return {
            "s_min": float(self.s_grid[0]),
            "s_max": float(self.s_grid[-1]),
            "n_s": int(self.s_grid.size),
            "n_t": int(self.t.size),
            "half_width": self.half_width,
        }


def poisson_kernel(s, t, width: float = np.pi) -> np.ndarray:
    """
    Dirichlet Poisson kernel of the strip 0 < s < width.

    P_W(s, t) = (pi/W) sin(pi s/W) / (cosh(pi t/W) - cos(pi s/W)); for W = pi this is
    sin s / (cosh t - cos s).
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any((s <= 0) | (s >= width)):
        raise DomainError(f"s must lie strictly inside (0, {width:g})")
    a = np.pi / width
    with np.errstate(over="ignore"):
        return a * np.sin(a * s) / (np.cosh(a * t) - np.cos(a * s))


def poisson_mass(s: float, width: float = np.pi) -> float:
    """(1/2 pi) times the t-integral of the Poisson kernel, by adaptive quadrature."""
    value, _ = quad(lambda t: float(poisson_kernel(s, t, width)), -np.inf, np.inf, limit=200)
    return value / (2.0 * np.pi)


def widder_extend(a: LineFn, b: LineFn, T: float, s_grid) -> StripField:
    """
    Bounded harmonic extension to the strip with u(0, .) = a and u(T, .) = b.

    Spectrally u^(s, xi) = sinh((T-s) xi)/sinh(T xi) a^ + sinh(s xi)/sinh(T xi) b^, evaluated
    in overflow-free exponential form.
    """
    if not a.same_window(b):
        raise DomainError("boundary data must share the same window and sample count")
    s = np.asarray(s_grid, dtype=float).reshape(-1)
    if np.any((s < 0) | (s > T)):
        raise DomainError(f"s_grid must lie in [0, {T:g}]")
    xi = np.abs(_rfreq(a))[np.newaxis, :]
    ss = s[:, np.newaxis]
    denom = -np.expm1(-2.0 * T * xi)
    with np.errstate(invalid="ignore", divide="ignore"):
        left = np.exp(-ss * xi) * -np.expm1(-2.0 * (T - ss) * xi) / denom
        right = np.exp(-(T - ss) * xi) * -np.expm1(-2.0 * ss * xi) / denom
    left[:, 0] = (T - s) / T
    right[:, 0] = s / T
    spec = left * np.fft.rfft(a.values)[np.newaxis] + right * np.fft.rfft(b.values)[np.newaxis]
    values = np.fft.irfft(spec, n=a.n, axis=-1)
    return StripField(s, a.t, values, a.half_width)


def laplacian_residual(field_: StripField) -> float:
    """Sup of the five-point Laplacian over interior rows on the central half-window."""
    u = field_.values
    ds = float(field_.s_grid[1] - field_.s_grid[0])
    dt = float(field_.t[1] - field_.t[0])
    lap = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / ds**2 + (
        np.roll(u, -1, axis=1) - 2.0 * u + np.roll(u, 1, axis=1)
    )[1:-1] / dt**2
    return float(np.max(np.abs(lap[:, field_.central])))


def neumann_identity_defect(a: LineFn, b: LineFn, T: float, ds: float | None = None) -> float:
    """
    Sup on the central half of |d_s u(0, .) + A_T a - (D/sinh TD) b| for the Widder extension.

    The s-derivative is the second-order one-sided difference over rows 0, ds, 2 ds.
    """
    if ds is None:
        ds = 1e-3 * T
    u = widder_extend(a, b, T, [0.0, ds, 2.0 * ds]).values
    d_s = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * ds)
    expected = -multiplier_AT(a, T).values + multiplier_DsinhTD(b, T).values
    return float(np.max(np.abs(d_s - expected)[a.central]))


@dataclass
class PWResult:
    """Outcome of a Paley-Wiener membership test."""

    passed: bool
    fitted_rate: float
    T: float
    band: tuple[float, float]
    margin: float
    super_exponential: bool = False
    spectrum: SpectralFn | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "fitted_rate": self.fitted_rate if np.isfinite(self.fitted_rate) else "inf",
            "T": self.T,
            "band": list(self.band),
            "margin": self.margin,
            "super_exponential": self.super_exponential,
        }


def _decay_rate(xi: np.ndarray, log_mag: np.ndarray) -> float:
    slope = np.polyfit(xi, log_mag, 1)[0]
    return float(-slope)


def pw_test(
    f: LineFn,
    T: float,
    *,
    band: tuple[float, float] = DEFAULT_BAND,
    margin: float = DEFAULT_PW_MARGIN,
    floor: float = SPECTRAL_FLOOR,
) -> PWResult:
    """
    Test |f^(xi)| = o(exp(-T |xi|)) by fitting the decay rate of log |f^| over a band.

    Args:
        f: Tapered samples.
        T: Strip width.
        band: Fit band as fractions of the Nyquist frequency; halved while the spectrum
            falls below ``floor`` inside it.
        margin: Relative margin; pass iff the rate is at least T (1 + margin).
        floor: Spectral floor.

    Returns:
        PWResult; the zero function and super-exponentially decaying inputs pass every T.
    """
    spec = fourier(f)
    pos = spec.xi > 0
    xi = spec.xi[pos]
    mag = spec.magnitude[pos]
    scale = float(np.max(spec.magnitude)) if spec.xi.size else 0.0
    if scale <= floor:
        return PWResult(True, np.inf, T, (0.0, 0.0), margin, True, spec)
    nyquist = np.pi / f.dt
    lo, hi = band[0] * nyquist, band[1] * nyquist
    while True:
        sel = (xi >= lo) & (xi <= hi)
        if np.count_nonzero(sel) < MIN_BAND_POINTS:
            raise NumericalError(
                "insufficient resolution: spectral floor reached inside the fit band"
            )
        if np.min(mag[sel]) >= floor * max(1.0, scale):
            break
        logger.warning("spectral floor inside band [%.3g, %.3g]; shrinking", lo, hi)
        lo, hi = 0.5 * lo, 0.5 * hi
    x_band, log_band = xi[sel], np.log(mag[sel])
    rate = _decay_rate(x_band, log_band)
    half = x_band.size // 2
    lower = _decay_rate(x_band[:half], log_band[:half])
    upper = _decay_rate(x_band[half:], log_band[half:])
    super_exp = lower > 0 and upper >= SUPER_EXPONENTIAL_FACTOR * lower
    passed = super_exp or rate >= T * (1.0 + margin)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            "pw_test rate %.4g on [%.3g, %.3g] (lower %.4g, upper %.4g)", rate, lo, hi, lower, upper
        )
    return PWResult(bool(passed), rate, T, (float(lo), float(hi)), margin, bool(super_exp), spec)


@dataclass
class LeafSolution:
    """Leafwise Cauchy solution chi_z on the strip with its obstruction data."""

    z: list[float]
    strip_field: StripField
    q: LineFn
    p: LineFn
    gap: float
    gap_variation: float
    trivial: bool
    identity_defect: float
    pw: PWResult

    @property
    def obstruction_vanishes(self) -> bool:
        return self.pw.passed

    def to_dict(self) -> dict:
        return {
            "z": self.z,
            "gap": self.gap,
            "gap_variation": self.gap_variation,
            "trivial": self.trivial,
            "identity_defect": self.identity_defect,
            "obstruction_vanishes": self.obstruction_vanishes,
            "pw": self.pw.to_dict(),
        }


def toric_leaf_solution(
    data: CauchyData,
    z,
    T: float,
    s_grid,
    *,
    half_width: float = 40.0,
    samples: int = 64,
) -> LeafSolution:
    """
    Leafwise solution chi_z on the strip, read off the Legendre potential along the leaf.

    The leaf through z is zeta(s + it) = z + (s + it) w with y = grad psi0(z) and
    w = grad udot0(y). At each strip node chi_z(s, t) = psi_L(s, Re zeta), the pointwise
    Legendre potential, which equals <y, grad u_s(y)> - u_s(y). The obstruction data are
    q_z(t) = psidot0(Re zeta(0, t)) and p_z = q_z - d_s chi_z(0, .); their difference is
    tested for Paley-Wiener membership after centring.
    """
    z_pt = np.atleast_1d(np.asarray(z, dtype=float))
    y = data.grad_psi0(z_pt)
    if not np.all(data.u0.inside(y, margin_cells=1.0)):
        raise DomainError(f"grad psi0({z_pt.tolist()}) is outside the dual grid interior")
    w = gradient(data.udot0, y)
    trivial = bool(np.max(np.abs(w)) <= 1e-12 * max(1.0, float(np.max(np.abs(data.udot0.values)))))
    if trivial:
        logger.warning("leaf through z=%s is trivial (stationary)", z_pt.tolist())

    s = np.asarray(s_grid, dtype=float).reshape(-1)
    if s.size < 2 or s[0] != 0.0:
        raise DomainError("the leaf s-grid must start at 0 with at least two nodes")
    line = LineFn(half_width, np.zeros(samples))
    tau = s[:, np.newaxis] + 1j * line.t[np.newaxis, :]
    zeta = z_pt + tau[..., np.newaxis] * w
    values = np.stack([hopf_lax_value(data, float(sk), zeta[k].real) for k, sk in enumerate(s)])
    strip_field = StripField(s, line.t, values, half_width)

    q = line.with_values(data.psidot0_value(zeta[0].real))
    d_s = np.gradient(values, s, axis=0, edge_order=2 if s.size >= 3 else 1)[0]
    p = line.with_values(q.values - d_s)
    diff = q.values - p.values
    gap = float(np.mean(diff))
    variation = float(np.max(diff) - np.min(diff))
    centred = diff - gap
    # Roundoff between t-samples that share a real part.
    centred[np.abs(centred) <= 1e-12 * max(1.0, abs(gap))] = 0.0
    pw = pw_test(line.with_values(centred), T)
    start = line.with_values(values[0])
    defect = neumann_identity_defect(start, start.with_values(values[0] + T * diff), T)
    return LeafSolution(
        z=z_pt.tolist(),
        strip_field=strip_field,
        q=q,
        p=p,
        gap=gap,
        gap_variation=variation,
        trivial=trivial,
        identity_defect=defect,
        pw=pw,
    )
