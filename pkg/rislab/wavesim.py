"""
Coupled-dipole engine.

Every entity of the enclosure is a z-oriented point dipole in the x-y plane.
At each frequency the dipoles interact through the matrix

    W_ii = 1/alpha_i(f)
    W_ij = -k^2 G(r_i, r_j, f)            (i != j)

and the end-to-end channel between two dipole sets is a block of W^-1.
Units are arbitrary: propagation speed, permittivity and permeability are 1,
so the wavelength at the center frequency f = 1 is 1.
"""
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, get_lapack_funcs, lu_factor, lu_solve

from .errors import (
    CoincidentPointsError,
    DomainError,
    PlacementError,
    ShapeMismatchError,
    SingularSystemError,
    ValidationFailure,
)
from .labels import COLLISION_TOL, COND_LIMIT, ROLE_BS, ROLE_RIS, ROLE_SENSE, ROLE_UE, ROLES, TRANSCEIVER_PROPS
from .schemas import DipoleProperties, FrequencyGrid

logger = logging.getLogger(__name__)

_EULER_GAMMA = 0.57721566490153286
_TWO_OVER_PI = 2.0 / math.pi

# power series below the switch, Hankel asymptotic expansion above it.
# At x = 12 both branches stay within 1e-10 of reference values; switching at
# x = 8 leaves about 1e-8 of asymptotic truncation error.
_ASYMPTOTIC_SWITCH = 12.0
_SERIES_TERMS = 60
_ASYMPTOTIC_TERMS = 24


# ============================================================
# SPECIAL FUNCTIONS
# ============================================================

def _series_j0_y0(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = 0.25 * x * x
    term = np.ones_like(x)
    j0 = np.ones_like(x)
    ysum = np.zeros_like(x)
    harmonic = 0.0
    for k in range(1, _SERIES_TERMS):
        # term_k = (-q)^k / (k!)^2
        term = term * (-q) / (k * k)
        harmonic += 1.0 / k
        j0 = j0 + term
        ysum = ysum - harmonic * term
    with np.errstate(divide="ignore"):
        y0 = _TWO_OVER_PI * ((np.log(0.5 * x) + _EULER_GAMMA) * j0 + ysum)
    return j0, y0


def _asymptotic_j0_y0(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # c_k = a_k(0) / x^k with a_k(0) = prod_{j<=k} -(2j-1)^2 / (8j)
    p = np.ones_like(x)
    q = np.zeros_like(x)
    c = np.ones_like(x)
    for k in range(1, _ASYMPTOTIC_TERMS):
        c = c * (-((2 * k - 1) ** 2)) / (8.0 * k * x)
        sign = 1.0 if (k // 2) % 2 == 0 else -1.0
        if k % 2 == 0:
            p = p + sign * c
        else:
            q = q + sign * c
        if np.max(np.abs(c)) < 1e-18:
            break
    chi = x - 0.25 * math.pi
    amp = np.sqrt(_TWO_OVER_PI / x)
    cos_chi = np.cos(chi)
    sin_chi = np.sin(chi)
    return amp * (p * cos_chi - q * sin_chi), amp * (p * sin_chi + q * cos_chi)


def _j0_y0(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    j0 = np.empty_like(x)
    y0 = np.empty_like(x)
    small = x <= _ASYMPTOTIC_SWITCH
    if np.any(small):
        j0[small], y0[small] = _series_j0_y0(x[small])
    large = ~small
    if np.any(large):
        j0[large], y0[large] = _asymptotic_j0_y0(x[large])
    return j0, y0


def _as_output(values: np.ndarray, scalar: bool):
    return float(values) if scalar else values


def bessel_j0(x):
    """J0 for x >= 0 (J0(0) = 1)."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < 0):
        raise DomainError("bessel_j0 requires x >= 0")
    j0, _ = _j0_y0(arr)
    return _as_output(j0.reshape(np.shape(x)), scalar)


def bessel_j0_y0(x):
    """(J0(x), Y0(x)) for x > 0; Y0 diverges at the origin."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(~(arr > 0)):
        raise DomainError("bessel_j0_y0 requires x > 0 (Y0 is singular at 0)")
    j0, y0 = _j0_y0(arr)
    shape = np.shape(x)
    return _as_output(j0.reshape(shape), scalar), _as_output(y0.reshape(shape), scalar)


# ============================================================
# GREEN'S FUNCTION / POLARIZABILITY
# ============================================================

def wavenumber(f: float) -> float:
    return 2.0 * math.pi * f


def _greens_of_distance(d: np.ndarray, k: float) -> np.ndarray:
    j0, y0 = _j0_y0(k * d)
    # (i/4) (J0 + i Y0)
    return -0.25 * y0 + 0.25j * j0


def greens_2d(r1, r2, f: float) -> complex:
    """2D free-space Green's function (i/4) H0^(1)(k |r1 - r2|)."""
    d = math.hypot(float(r1[0]) - float(r2[0]), float(r1[1]) - float(r2[1]))
    if d == 0.0:
        raise CoincidentPointsError("greens_2d is undefined for coincident points")
    return complex(_greens_of_distance(np.array([d]), wavenumber(f))[0])


def _inv_polarizability(f_res, chi, gamma_l, f: float):
    k = wavenumber(f)
    return (f_res * f_res - f * f) / chi - 1j * (0.25 * k * k + gamma_l)


def inv_polarizability(p: DipoleProperties, f: float) -> complex:
    if not f > 0:
        raise DomainError(f"frequency must be positive (got {f})")
    return complex(_inv_polarizability(p.f_res, p.chi, p.gamma_l, f))


# ============================================================
# SCENES / CHANNELS
# ============================================================

@dataclass(frozen=True)
class SceneInstance:
    positions: np.ndarray
    f_res: np.ndarray
    chi: np.ndarray
    gamma_l: np.ndarray
    roles: tuple[str, ...]

    def __post_init__(self):
        n = len(self.roles)
        if self.positions.shape != (n, 2):
            raise ShapeMismatchError(f"positions shape {self.positions.shape} does not match {n} dipoles")
        for name in ("f_res", "chi", "gamma_l"):
            if getattr(self, name).shape != (n,):
                raise ShapeMismatchError(f"{name} must have one entry per dipole")
        unknown = set(self.roles) - set(ROLES)
        if unknown:
            raise ValidationFailure(f"unknown dipole role(s): {sorted(unknown)}")

    @classmethod
    def from_dipoles(cls, dipoles: list[tuple[tuple[float, float], DipoleProperties, str]]) -> "SceneInstance":
        return cls(
            positions=np.array([pos for pos, _, _ in dipoles], dtype=np.float64).reshape(-1, 2),
            f_res=np.array([p.f_res for _, p, _ in dipoles], dtype=np.float64),
            chi=np.array([p.chi for _, p, _ in dipoles], dtype=np.float64),
            gamma_l=np.array([p.gamma_l for _, p, _ in dipoles], dtype=np.float64),
            roles=tuple(role for _, _, role in dipoles),
        )

    @property
    def n(self) -> int:
        return len(self.roles)

    @property
    def props(self) -> list[DipoleProperties]:
        return [
            DipoleProperties(f_res=float(a), chi=float(b), gamma_l=float(c))
            for a, b, c in zip(self.f_res, self.chi, self.gamma_l)
        ]

    def indices(self, role: str) -> np.ndarray:
        # sensing elements are RIS elements too
        wanted = {ROLE_RIS, ROLE_SENSE} if role == ROLE_RIS else {role}
        return np.array([i for i, r in enumerate(self.roles) if r in wanted], dtype=np.intp)

    def validate(self) -> None:
        for role in (ROLE_BS, ROLE_UE):
            if len(self.indices(role)) == 0:
                raise ValidationFailure(f"scene has no {role} dipole")


@dataclass(frozen=True)
class ChannelResponse:
    values: np.ndarray  # (rx, tx, F)
    grid: FrequencyGrid
    rx_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    tx_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    def transposed(self) -> "ChannelResponse":
        return ChannelResponse(
            values=np.transpose(self.values, (1, 0, 2)),
            grid=self.grid,
            rx_index=self.tx_index,
            tx_index=self.rx_index,
        )


def _pair_distances(positions: np.ndarray) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray]:
    iu = np.triu_indices(len(positions), 1)
    diff = positions[iu[0]] - positions[iu[1]]
    d = np.hypot(diff[:, 0], diff[:, 1])
    if d.size and d.min() < COLLISION_TOL:
        bad = int(np.argmin(d))
        raise CoincidentPointsError(
            f"dipoles {int(iu[0][bad])} and {int(iu[1][bad])} coincide (distance {d[bad]:.3e})"
        )
    return iu, d


def _coupling(n: int, iu, d: np.ndarray, f: float) -> np.ndarray:
    k = wavenumber(f)
    w = np.zeros((n, n), dtype=np.complex128)
    off = -(k * k) * _greens_of_distance(d, k)
    # one evaluation per pair keeps W exactly symmetric
    w[iu] = off
    w[(iu[1], iu[0])] = off
    return w


def assemble_interaction(scene: SceneInstance, f: float) -> np.ndarray:
    if not f > 0:
        raise DomainError(f"frequency must be positive (got {f})")
    iu, d = _pair_distances(scene.positions)
    w = _coupling(scene.n, iu, d, f)
    w[np.diag_indices(scene.n)] = _inv_polarizability(scene.f_res, scene.chi, scene.gamma_l, f)
    return w


def _factor(w: np.ndarray, f: float):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(w)
    gecon, = get_lapack_funcs(("gecon",), (lu,))
    anorm = np.linalg.norm(w, 1)
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond <= 0.0 or 1.0 / rcond > COND_LIMIT:
        cond = math.inf if not rcond > 0 else 1.0 / rcond
        raise SingularSystemError(f, cond)
    return lu, piv


def _run_indexed(task, n_items: int, workers: int) -> None:
    # every task writes its own output slot, so scheduling never changes results
    if workers <= 1 or n_items <= 1:
        for i in range(n_items):
            task(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(task, range(n_items)))


def channel(
    scene: SceneInstance,
    tx_role: str,
    rx_role: str,
    grid: FrequencyGrid,
    workers: int = 1,
) -> ChannelResponse:
    tx = scene.indices(tx_role)
    rx = scene.indices(rx_role)
    for role, idx in ((tx_role, tx), (rx_role, rx)):
        if len(idx) == 0:
            raise ValidationFailure(f"scene has no {role} dipole")

    freqs = grid.frequencies()
    iu, d = _pair_distances(scene.positions)
    rhs = np.zeros((scene.n, len(tx)), dtype=np.complex128)
    rhs[tx, np.arange(len(tx))] = 1.0
    out = np.empty((len(rx), len(tx), len(freqs)), dtype=np.complex128)

    def solve_at(fi: int) -> None:
        f = float(freqs[fi])
        w = _coupling(scene.n, iu, d, f)
        w[np.diag_indices(scene.n)] = _inv_polarizability(scene.f_res, scene.chi, scene.gamma_l, f)
        x = lu_solve(_factor(w, f), rhs)
        out[:, :, fi] = x[rx, :]

    _run_indexed(solve_at, len(freqs), workers)
    return ChannelResponse(values=out, grid=grid, rx_index=rx, tx_index=tx)


def _variant_rows(bases: list[SceneInstance]) -> list[np.ndarray]:
    """Per base, the dipoles whose properties differ from bases[0]."""
    ref = bases[0]
    return [
        np.nonzero((b.f_res != ref.f_res) | (b.chi != ref.chi) | (b.gamma_l != ref.gamma_l))[0]
        for b in bases
    ]


def _sweep(
    bases: list[SceneInstance],
    sites: np.ndarray,
    site_props: DipoleProperties,
    grid: FrequencyGrid,
    workers: int,
):
    if not bases:
        raise ValidationFailure("site_sweep needs at least one base scene")
    ref = bases[0]
    for b in bases[1:]:
        if not np.array_equal(b.positions, ref.positions) or b.roles != ref.roles:
            raise ShapeMismatchError("site_sweep bases must share dipole positions and roles")
    bs_idx = ref.indices(ROLE_BS)
    if len(bs_idx) != 1:
        raise ValidationFailure(f"site_sweep needs exactly one BS dipole (found {len(bs_idx)})")
    if len(ref.indices(ROLE_UE)):
        raise ValidationFailure("site_sweep bases must not contain a UE dipole")
    bs = int(bs_idx[0])
    sense = ref.indices(ROLE_SENSE)

    sites = np.asarray(sites, dtype=np.float64).reshape(-1, 2)
    diff = ref.positions[:, None, :] - sites[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])  # (n, M)
    if dist.size and dist.min() < COLLISION_TOL:
        i, s = np.unravel_index(int(np.argmin(dist)), dist.shape)
        raise PlacementError(f"UE site {int(s)} collides with dipole {int(i)}")

    freqs = grid.frequencies()
    n, m, v = ref.n, len(sites), len(bases)
    iu, d = _pair_distances(ref.positions)
    rows = _variant_rows(bases)
    changed = np.unique(np.concatenate(rows)) if v > 1 else np.array([], dtype=np.intp)
    col_of = {int(r): j for j, r in enumerate(changed)}

    h_ue = np.empty((v, m, len(freqs)), dtype=np.complex128)
    h_sense = np.empty((v, m, len(sense), len(freqs)), dtype=np.complex128)
    h_free = np.empty((v, len(sense), len(freqs)), dtype=np.complex128)

    def solve_at(fi: int) -> None:
        f = float(freqs[fi])
        k = wavenumber(f)
        w = _coupling(n, iu, d, f)
        d_ref = _inv_polarizability(ref.f_res, ref.chi, ref.gamma_l, f)
        w[np.diag_indices(n)] = d_ref
        border = -(k * k) * _greens_of_distance(dist, k)  # (n, M)
        d_site = _inv_polarizability(site_props.f_res, site_props.chi, site_props.gamma_l, f)

        # columns: BS source, one border per site, unit vectors on changed dipoles
        rhs = np.zeros((n, 1 + m + len(changed)), dtype=np.complex128)
        rhs[bs, 0] = 1.0
        rhs[:, 1:1 + m] = border
        rhs[changed, 1 + m + np.arange(len(changed))] = 1.0
        sol_ref = lu_solve(_factor(w, f), rhs)
        g_cols = sol_ref[:, 1 + m:]
        y_ref = sol_ref[:, :1 + m]

        for vi, base in enumerate(bases):
            r = rows[vi]
            if len(r) == 0:
                sol = y_ref
            else:
                # (W + E diag(delta) E^T)^-1 = G - G E (I + diag(delta) E^T G E)^-1 diag(delta) E^T G
                delta = _inv_polarizability(base.f_res[r], base.chi[r], base.gamma_l[r], f) - d_ref[r]
                g_r = g_cols[:, [col_of[int(i)] for i in r]]
                small = np.eye(len(r)) + delta[:, None] * g_r[r, :]
                if np.linalg.cond(small) > COND_LIMIT:
                    raise SingularSystemError(f, float(np.linalg.cond(small)))
                sol = y_ref - g_r @ np.linalg.solve(small, delta[:, None] * y_ref[r, :])
            a_bs = sol[:, 0]
            y = sol[:, 1:]
            h_free[vi, :, fi] = a_bs[sense]
            if m == 0:
                continue
            schur = d_site - np.sum(border * y, axis=0)
            if np.any(np.abs(schur) <= 1e-14 * abs(d_site)):
                raise SingularSystemError(f, math.inf)
            ratio = y[bs, :] / schur
            h_ue[vi, :, fi] = -ratio
            h_sense[vi, :, :, fi] = a_bs[sense][None, :] + y[sense, :].T * ratio[:, None]

    _run_indexed(solve_at, len(freqs), workers)
    return h_ue, h_sense, h_free


def site_sweep(
    bases: list[SceneInstance],
    sites: np.ndarray,
    site_props: DipoleProperties,
    grid: FrequencyGrid,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """
    H_BS-UE and H_BS-S with the UE dipole placed at each site in turn.

    All bases share dipole positions (they may differ in dipole properties,
    e.g. RIS configurations) and contain no UE dipole. One factorization per
    frequency serves every (base, site) pair: sites enter through the
    bordered-matrix identity
        X[ue, bs]    = -(A^-1 b)_bs / s
        X[sense, bs] = A^-1[sense, bs] + (A^-1 b)_sense (A^-1 b)_bs / s
    with s = alpha_ue^-1 - b^T A^-1 b, and bases other than the first enter
    as a low-rank change of the diagonal.

    Returns arrays of shape (V, M, F) and (V, M, S, F).
    """
    h_ue, h_sense, _ = _sweep(bases, sites, site_props, grid, workers)
    return h_ue, h_sense


def sense_sweep(bases: list[SceneInstance], grid: FrequencyGrid, workers: int = 1) -> np.ndarray:
    """H_BS-S of each UE-free base, shape (V, S, F)."""
    _, _, h_free = _sweep(bases, np.empty((0, 2)), DipoleProperties.of(TRANSCEIVER_PROPS), grid, workers)
    return h_free


# ============================================================
# TIME DOMAIN
# ============================================================

WINDOWS = ("rect", "raised-cosine")


def _taper(window: str, n: int) -> np.ndarray:
    if window == "rect":
        return np.ones(n)
    if window == "raised-cosine":
        return np.hanning(n)
    raise DomainError(f"unknown window {window!r} (expected one of {WINDOWS})")


def impulse_response(h: ChannelResponse, window: str = "rect") -> np.ndarray:
    """Inverse DFT over the frequency axis; output energy = windowed input energy / F."""
    n = h.values.shape[-1]
    if n < 2:
        raise DomainError("impulse_response needs at least 2 frequency points")
    return np.fft.ifft(h.values * _taper(window, n), axis=-1)


def delay_axis(grid: FrequencyGrid) -> np.ndarray:
    freqs = grid.frequencies()
    step = freqs[1] - freqs[0]
    return np.arange(grid.n_points) / (grid.n_points * step)
