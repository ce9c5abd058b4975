import numpy as np
import pytest
from scipy.special import hankel1, j0, y0

from rislab.errors import CoincidentPointsError, DomainError, PlacementError
from rislab.labels import ROLE_BS, ROLE_SENSE, ROLE_UE, ROLE_WALL
from rislab.scene import ENVIRONMENT, TRANSCEIVER, RISConfig, SOState, default_template, realize
from rislab.schemas import DipoleProperties, FrequencyGrid
from rislab.wavesim import (
    ChannelResponse,
    SceneInstance,
    assemble_interaction,
    bessel_j0,
    bessel_j0_y0,
    channel,
    delay_axis,
    greens_2d,
    impulse_response,
    inv_polarizability,
    sense_sweep,
    WINDOWS,
    site_sweep,
    wavenumber,
)


def test_bessel_matches_scipy_on_log_grid():
    x = np.logspace(-3, 2, 1000)
    jv, yv = bessel_j0_y0(x)
    assert np.max(np.abs(jv - j0(x))) < 1e-8
    assert np.max(np.abs(yv - y0(x))) < 1e-8


def test_bessel_both_sides_of_switch():
    x = np.array([8.0, 10.0, 11.9, 12.0, 12.1, 30.0])
    jv, yv = bessel_j0_y0(x)
    assert np.allclose(jv, j0(x), rtol=0, atol=1e-10)
    assert np.allclose(yv, y0(x), rtol=0, atol=1e-10)


def test_bessel_scalar_and_domain():
    assert bessel_j0(0.0) == 1.0
    jv, yv = bessel_j0_y0(1.0)
    assert isinstance(jv, float) and isinstance(yv, float)
    with pytest.raises(DomainError):
        bessel_j0_y0(0.0)
    with pytest.raises(DomainError):
        bessel_j0(-1.0)


def test_greens_function_is_scaled_hankel():
    f = 1.05
    r1, r2 = (0.3, -0.2), (1.7, 0.9)
    d = np.hypot(1.4, 1.1)
    expected = 0.25j * hankel1(0, wavenumber(f) * d)
    assert abs(greens_2d(r1, r2, f) - expected) < 1e-10 * abs(expected)
    assert greens_2d(r1, r2, f) == greens_2d(r2, r1, f)
    with pytest.raises(CoincidentPointsError):
        greens_2d(r1, r1, f)


def test_inverse_polarizability_formula():
    p = DipoleProperties(f_res=1.0, chi=0.5, gamma_l=0.0)
    f = 1.0
    k = wavenumber(f)
    assert inv_polarizability(p, f) == pytest.approx(complex(0.0, -(k * k / 4.0)))


def _pair(d=(1.3, 0.4)):
    return SceneInstance.from_dipoles([((0.0, 0.0), TRANSCEIVER, ROLE_BS), (d, TRANSCEIVER, ROLE_UE)])


def test_two_dipole_closed_form():
    scene = _pair()
    grid = FrequencyGrid(n_points=64)
    h = channel(scene, ROLE_BS, ROLE_UE, grid).values[0, 0]
    dist = np.hypot(1.3, 0.4)
    for fi, f in enumerate(grid.frequencies()):
        k = wavenumber(f)
        a = inv_polarizability(TRANSCEIVER, f)
        g = -(k * k) * 0.25j * hankel1(0, k * dist)
        expected = -g / (a * a - g * g)
        assert abs(h[fi] - expected) < 1e-10 * abs(expected)


def test_interaction_matrix_is_symmetric(tiny_tpl):
    scene = realize(tiny_tpl, RISConfig.zeros(tiny_tpl.n_ris), SOState(t=(0.3,)), 0)
    w = assemble_interaction(scene, 0.97)
    assert np.array_equal(w, w.T)


@pytest.mark.parametrize("seed", range(10))
def test_reciprocity_random_scenes(seed):
    rng = np.random.default_rng(seed)
    dipoles = []
    for i in range(30):
        role = ROLE_BS if i == 0 else ROLE_UE if i == 1 else ROLE_WALL
        props = TRANSCEIVER if i < 2 else DipoleProperties(f_res=float(rng.uniform(0.8, 1.5)), chi=0.3, gamma_l=0.05)
        dipoles.append(((float(rng.uniform(0, 5)), float(rng.uniform(0, 5))), props, role))
    scene = SceneInstance.from_dipoles(dipoles)
    grid = FrequencyGrid(n_points=8)
    fwd = channel(scene, ROLE_BS, ROLE_UE, grid).values
    back = channel(scene, ROLE_UE, ROLE_BS, grid).values
    assert np.max(np.abs(fwd - back)) < 1e-9


def test_site_sweep_agrees_with_direct_solve(tiny_tpl):
    p = SOState(t=(0.42,))
    configs = [RISConfig.zeros(tiny_tpl.n_ris), RISConfig.from_string("1011")]
    bases = [realize(tiny_tpl, c, p, None) for c in configs]
    h_ue, h_sense = site_sweep(bases, tiny_tpl.ue_sites, TRANSCEIVER, tiny_tpl.grid)
    assert h_ue.shape == (2, 4, tiny_tpl.grid.n_points)
    assert h_sense.shape == (2, 4, 2, tiny_tpl.grid.n_points)
    for v, c in enumerate(configs):
        for s in range(4):
            scene = realize(tiny_tpl, c, p, s)
            direct_ue = channel(scene, ROLE_BS, ROLE_UE, tiny_tpl.grid).values[0, 0]
            direct_sense = channel(scene, ROLE_BS, ROLE_SENSE, tiny_tpl.grid).values[:, 0]
            assert np.max(np.abs(h_ue[v, s] - direct_ue)) < 1e-9 * np.max(np.abs(direct_ue))
            assert np.max(np.abs(h_sense[v, s] - direct_sense)) < 1e-9 * np.max(np.abs(direct_sense))


def test_sense_sweep_is_ue_free_response(tiny_tpl):
    p = SOState(t=(0.1,))
    configs = [RISConfig.zeros(tiny_tpl.n_ris), RISConfig.from_string("0110")]
    bases = [realize(tiny_tpl, c, p, None) for c in configs]
    free = sense_sweep(bases, tiny_tpl.grid)
    for v, base in enumerate(bases):
        direct = channel(base, ROLE_BS, ROLE_SENSE, tiny_tpl.grid).values[:, 0]
        assert np.max(np.abs(free[v] - direct)) < 1e-9 * np.max(np.abs(direct))


def test_site_sweep_rejects_colliding_site(tiny_tpl):
    base = realize(tiny_tpl, RISConfig.zeros(tiny_tpl.n_ris), SOState(t=(0.0,)), None)
    with pytest.raises(PlacementError):
        site_sweep([base], base.positions[3:4], TRANSCEIVER, tiny_tpl.grid)


def test_impulse_response_of_flat_channel_is_a_delta():
    grid = FrequencyGrid(n_points=16)
    h = ChannelResponse(values=np.ones((1, 1, 16), dtype=complex), grid=grid)
    ir = impulse_response(h)[0, 0]
    assert ir[0] == pytest.approx(1.0)
    assert np.allclose(ir[1:], 0.0)
    assert len(delay_axis(grid)) == 16
    with pytest.raises(DomainError):
        impulse_response(h, window="triangle")


def test_bessel_reference_values():
    jv, yv = bessel_j0_y0(1.0)
    assert jv == pytest.approx(0.76519769, abs=1e-8)
    assert yv == pytest.approx(0.08825696, abs=1e-8)
    # first zero of J0
    assert abs(bessel_j0(2.40482556)) < 1e-7


def test_greens_function_at_unit_argument():
    g = greens_2d((0.0, 0.0), (1.0 / (2.0 * np.pi), 0.0), 1.0)
    assert g.real == pytest.approx(-0.02206424, abs=1e-8)
    assert g.imag == pytest.approx(0.19129942, abs=1e-8)


def test_environment_dipole_inverse_polarizability():
    a = inv_polarizability(ENVIRONMENT, 1.0)
    assert a.real == pytest.approx(1.98, abs=1e-12)
    assert a.imag == pytest.approx(-10009.8696044, abs=1e-6)


def test_inverse_polarizability_is_passive():
    rng = np.random.default_rng(11)
    for _ in range(500):
        p = DipoleProperties(
            f_res=float(rng.uniform(0.1, 10.0)),
            chi=float(rng.uniform(0.01, 50.0)),
            gamma_l=float(rng.choice([0.0, rng.uniform(0.0, 1e4)])),
        )
        f = float(rng.uniform(0.05, 5.0))
        k = wavenumber(f)
        assert inv_polarizability(p, f).imag <= -k * k / 4.0


def _dense_channel(scene: SceneInstance, f: float) -> np.ndarray:
    """BS -> UE response by explicit inversion of an independently built W."""
    k = 2.0 * np.pi * f
    n = scene.n
    w = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            if i == j:
                w[i, i] = (scene.f_res[i] ** 2 - f * f) / scene.chi[i] - 1j * (k * k / 4.0 + scene.gamma_l[i])
            else:
                d = np.linalg.norm(scene.positions[i] - scene.positions[j])
                w[i, j] = -(k * k) * 0.25j * hankel1(0, k * d)
    x = np.linalg.inv(w)
    return x[scene.indices(ROLE_UE)][:, scene.indices(ROLE_BS)]


@pytest.mark.parametrize("n_dipoles", [2, 3, 4])
def test_channel_matches_dense_inversion(n_dipoles):
    rng = np.random.default_rng(n_dipoles)
    points: list[np.ndarray] = []
    while len(points) < n_dipoles:
        q = rng.uniform(0.0, 3.0, size=2)
        if all(np.linalg.norm(q - r) > 0.3 for r in points):
            points.append(q)
    dipoles = []
    for i, q in enumerate(points):
        role = ROLE_BS if i == 0 else ROLE_UE if i == 1 else ROLE_WALL
        props = TRANSCEIVER if i < 2 else DipoleProperties(f_res=float(rng.uniform(0.8, 1.5)), chi=0.3, gamma_l=0.5)
        dipoles.append(((float(q[0]), float(q[1])), props, role))
    scene = SceneInstance.from_dipoles(dipoles)
    grid = FrequencyGrid(n_points=9)
    h = channel(scene, ROLE_BS, ROLE_UE, grid).values
    for fi, f in enumerate(grid.frequencies()):
        oracle = _dense_channel(scene, float(f))
        assert np.max(np.abs(h[:, :, fi] - oracle)) < 1e-10 * np.max(np.abs(oracle))


def test_far_lossy_dipole_barely_changes_channel():
    grid = FrequencyGrid(n_points=16)
    near = _pair()
    far = SceneInstance.from_dipoles(
        [((0.0, 0.0), TRANSCEIVER, ROLE_BS), ((1.3, 0.4), TRANSCEIVER, ROLE_UE), ((30.0, 30.0), ENVIRONMENT, ROLE_WALL)]
    )
    h0 = channel(near, ROLE_BS, ROLE_UE, grid).values[0, 0]
    h1 = channel(far, ROLE_BS, ROLE_UE, grid).values[0, 0]
    assert np.max(np.abs(h1 - h0) / np.abs(h0)) < 0.01


def _default_scene_parts():
    tpl = default_template(20)
    p = SOState(t=(0.0, 0.0, 0.0, 0.0))
    return tpl, p


def test_default_enclosure_is_frequency_selective():
    tpl, p = _default_scene_parts()
    scene = realize(tpl, RISConfig.zeros(tpl.n_ris), p, 0)
    mag = np.abs(channel(scene, ROLE_BS, ROLE_UE, tpl.grid).values[0, 0])
    assert mag.std() / mag.mean() > 0.05


def test_single_ris_flips_change_the_channel():
    tpl, p = _default_scene_parts()
    rng = np.random.default_rng(4)
    configs = [RISConfig.zeros(tpl.n_ris), RISConfig(bits=tuple(int(b) for b in rng.integers(0, 2, tpl.n_ris)))]
    changed = 0
    total = 0
    for config in configs:
        flips = [
            RISConfig(bits=tuple(1 - b if j == i else b for j, b in enumerate(config.bits)))
            for i in range(tpl.n_ris)
        ]
        bases = [realize(tpl, c, p, None) for c in [config, *flips]]
        h_ue, _ = site_sweep(bases, tpl.ue_sites[:1], TRANSCEIVER, tpl.grid)
        ref = np.linalg.norm(h_ue[0, 0])
        for v in range(1, len(bases)):
            total += 1
            if abs(np.linalg.norm(h_ue[v, 0]) - ref) > 1e-6 * ref:
                changed += 1
    assert changed >= 0.9 * total


def test_impulse_response_keeps_energy():
    rng = np.random.default_rng(8)
    grid = FrequencyGrid(n_points=32)
    values = rng.normal(size=(2, 3, 32)) + 1j * rng.normal(size=(2, 3, 32))
    h = ChannelResponse(values=values, grid=grid)
    m = np.arange(32)
    tapers = {"rect": np.ones(32), "raised-cosine": 0.5 - 0.5 * np.cos(2.0 * np.pi * m / 31)}
    assert set(tapers) == set(WINDOWS)
    for window, taper in tapers.items():
        ir = impulse_response(h, window)
        assert ir.shape == values.shape
        energy_t = np.sum(np.abs(ir) ** 2, axis=-1)
        energy_f = np.sum(np.abs(values * taper) ** 2, axis=-1) / 32
        assert np.max(np.abs(energy_t - energy_f) / energy_f) < 1e-10


def test_linear_phase_peaks_at_nearest_delay_bin():
    grid = FrequencyGrid(n_points=32)
    tau = 5.3 * delay_axis(grid)[1]
    values = np.exp(-2j * np.pi * grid.frequencies() * tau).reshape(1, 1, -1)
    ir = impulse_response(ChannelResponse(values=values, grid=grid))[0, 0]
    assert int(np.argmax(np.abs(ir))) == 5


def test_raised_cosine_window_on_flat_channel():
    n = 16
    grid = FrequencyGrid(n_points=n)
    h = ChannelResponse(values=np.ones((1, 1, n), dtype=complex), grid=grid)
    ir = impulse_response(h, window="raised-cosine")[0, 0]
    taper = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))
    assert ir[0] == pytest.approx(taper.mean(), abs=1e-14)
    assert np.allclose(ir, np.fft.ifft(taper), rtol=0, atol=1e-14)
