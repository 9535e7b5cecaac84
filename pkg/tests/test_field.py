import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

import field
from field import FieldError, GridSpec, ScalarField
from conftest import params_1d, random_field


@pytest.mark.parametrize("dim, n, L", [(1, 8, 1.0), (2, 16, 3.0), (3, 8, 2.0)])
def test_fft_round_trip_and_parseval(dim, n, L, rng):
    grid = GridSpec(dim, n, L)
    f = random_field(grid, rng, complex_=True)
    back = field.ifft(field.fft(f))
    assert_allclose(back.values, f.values, atol=1e-12)
    assert field.parseval_defect(f) < 1e-12


@pytest.mark.parametrize("dim, n, L", [(0, 8, 1.0), (4, 8, 1.0), (1, 12, 1.0), (1, 4, 1.0), (1, 8, 0.0)])
def test_gridspec_rejects_bad_shapes(dim, n, L):
    with pytest.raises(FieldError):
        GridSpec(dim, n, L)


def test_field_rejects_nan_and_wrong_shape():
    grid = GridSpec(1, 8, 1.0)
    with pytest.raises(FieldError):
        ScalarField(grid, np.full(8, np.nan))
    with pytest.raises(FieldError):
        ScalarField(grid, np.zeros(16))


def test_grid_geometry():
    grid = GridSpec(2, 16, 4.0)
    assert grid.h == 0.5
    assert grid.axis[0] == -4.0
    assert grid.axis[grid.n // 2] == 0.0
    assert grid.cell_volume == 0.25


def test_spectral_derivatives_of_plane_wave():
    grid = GridSpec(1, 32, math.pi)
    x = grid.axis
    f = ScalarField(grid, np.sin(3.0 * x))
    (d,) = field.gradient(f)
    assert_allclose(d.values, 3.0 * np.cos(3.0 * x), atol=1e-12)
    assert_allclose(field.laplacian(f).values, -9.0 * np.sin(3.0 * x), atol=1e-11)
    assert d.is_real


def test_divergence_of_gradient_is_laplacian(rng):
    # гауссиана должна быть ограничена по спектру: градиент и дивергенция обнуляют моду Найквиста
    grid = GridSpec(2, 64, 8.0)
    f = field.gaussian(grid, 1.0, center=(0.3, -0.2))
    div = field.divergence(field.gradient(f))
    assert_allclose(div.values, field.laplacian(f).values, atol=1e-10)


def test_charge_of_gaussian():
    grid = GridSpec(3, 32, 6.0)
    f = field.gaussian(grid, 1.0)
    # ∫ exp(-|x|^2) = π^{3/2}
    assert field.charge(f) == pytest.approx(math.pi ** 1.5, rel=1e-12)


def test_charge_phase_invariant(rng):
    grid = GridSpec(2, 16, 3.0)
    f = random_field(grid, rng, complex_=True)
    g = f.scaled(np.exp(0.7j))
    assert field.charge(g) == pytest.approx(field.charge(f), rel=1e-14)


def test_barycenter_of_shifted_gaussian():
    grid = GridSpec(2, 64, 8.0)
    f = field.gaussian(grid, 0.8, center=(1.25, -0.5))
    assert_allclose(field.barycenter(f), [1.25, -0.5], atol=1e-12)
    with pytest.raises(FieldError):
        field.barycenter(field.zeros(grid))


def test_shift_by_grid_step_is_roll():
    grid = GridSpec(1, 64, 8.0)
    f = field.gaussian(grid, 1.0)
    moved = field.shift(f, [4 * grid.h])
    assert_allclose(moved.values, np.roll(f.values, 4), atol=1e-13)


def test_mass_outside_ball_gaussian_3d():
    grid = GridSpec(3, 64, 4.0)
    f = field.gaussian(grid, 1.0 / math.sqrt(2.0))
    # |f|^2 = exp(-2|x|^2): радиальная масса стандартной нормальной с σ = 1/2
    frac = field.mass_outside_ball(f, (0.0, 0.0, 0.0), 1.0)
    expected = stats.chi2.sf((1.0 / 0.5) ** 2, df=3)
    assert frac == pytest.approx(expected, abs=1e-2)
    assert field.mass_outside_ball(f, (0.0, 0.0, 0.0), 0.0) == 1.0
    assert field.mass_outside_ball(f, (0.0, 0.0, 0.0), 100.0) == 0.0


def test_mass_outside_ball_radius_two_quadrature():
    grid = GridSpec(3, 64, 4.0)
    f = field.gaussian(grid, 1.0)
    # |f|^2 = exp(-|x|^2), доля вне радиуса 2
    inner, _ = integrate.quad(lambda r: 4.0 * math.pi * r * r * math.exp(-r * r), 0.0, 2.0)
    expected = 1.0 - inner / math.pi ** 1.5
    assert field.mass_outside_ball(f, (0.0, 0.0, 0.0), 2.0) == pytest.approx(expected, abs=1e-2)


def test_momentum_of_plane_wave_packet():
    grid = GridSpec(1, 256, 8.0)
    eps, v = 0.5, 0.75
    prm = params_1d(eps, v=(v,))
    env = field.gaussian(grid, 0.7)
    psi = ScalarField(grid, env.values * np.exp(1j * v * grid.axis / eps))
    # ∫p_ε = ε^{-N} ‖ψ‖² v
    expected = eps ** -1 * field.charge(psi) * v
    assert field.momentum_integral(psi, prm)[0] == pytest.approx(expected, rel=1e-10)


def test_momentum_of_real_field_is_zero():
    grid = GridSpec(2, 16, 3.0)
    f = field.gaussian(grid, 1.0)
    prm = type("P", (), {"eps": 0.5})()
    assert_allclose(field.momentum_integral(f, prm), [0.0, 0.0])


def test_continuity_residual_small_for_translating_packet():
    grid = GridSpec(1, 256, 8.0)
    eps, v, dt = 0.5, 0.5, 1e-3
    x = grid.axis

    def packet(t):
        # свободный пакет, бегущий со скоростью v без расплывания на малых t
        env = np.exp(-((x - v * t) ** 2) / (2 * 0.6 ** 2))
        return ScalarField(grid, env * np.exp(1j * v * x / eps))

    assert field.continuity_residual(packet(0.0), packet(dt), dt, eps) < 1e-2


def test_half_width_of_gaussian():
    grid = GridSpec(1, 1024, 8.0)
    f = field.gaussian(grid, 1.0)
    assert field.half_width(f) == pytest.approx(math.sqrt(2 * math.log(2)), rel=1e-4)


def test_resample_identity_and_scaling():
    src = GridSpec(1, 256, 8.0)
    f = field.gaussian(src, 1.0)
    assert_allclose(field.resample(f, src).values, f.values)
    # g(x) = f(2x) на сетке вдвое меньшего размера совпадает в узлах
    target = GridSpec(1, 256, 4.0)
    g = field.resample(f, target, scale=2.0)
    assert_allclose(g.values, f.values, atol=1e-12)


def test_resample_zero_outside_source_chart():
    src = GridSpec(1, 64, 2.0)
    f = ScalarField(src, np.ones(64))
    target = GridSpec(1, 64, 4.0)
    g = field.resample(f, target)
    outside = np.abs(target.axis) > 2.0
    assert np.all(g.values[outside] == 0.0)


def test_snapshot_round_trip(tmp_path, rng):
    grid = GridSpec(2, 16, 3.0)
    for f in (random_field(grid, rng), random_field(grid, rng, complex_=True)):
        path = str(tmp_path / "f.chqf")
        field.save_snapshot(f, path)
        g = field.load_snapshot(path)
        assert g.grid == grid
        assert g.is_real == f.is_real
        assert np.array_equal(g.values, f.values)
        assert (tmp_path / "f.chqf").stat().st_size == 64 + f.values.size * (8 if f.is_real else 16)


def test_snapshot_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.chqf"
    path.write_bytes(b"XXXX" + b"\0" * 60)
    with pytest.raises(FieldError):
        field.load_snapshot(str(path))


def test_set_workers_floor():
    field.set_workers(0)
    assert field.workers() == 1
    field.set_workers(1)
