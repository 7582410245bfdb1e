import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from micromacro import tables as tb
from micromacro.models import DoubleWellModel, ThreeAtomModel, ThetaRC, identity_rc

A_PI_HALF = 104.0 * 0.3838**4


def table(values, z_min=0.0, z_max=1.0):
    return tb.TabulatedFunction1D(z_min, z_max, np.asarray(values, dtype=float))


def tilted_drift_oracle(model, z, lam, beta=1.0):
    """Mean of ``-V'(x)`` under ``exp(-beta V - beta lam (x - z)^2 / 2)`` by quadrature."""
    s = 1.0 / math.sqrt(lam * beta)
    u = np.linspace(z - 12 * s, z + 12 * s, 20001)
    w = np.exp(-beta * model.free_energy(u) - 0.5 * beta * lam * (u - z) ** 2)
    return trapezoid(model.drift(u) * w, u) / trapezoid(w, u)


class TestInterpolation:
    def test_nodes_exact(self):
        t = table([0.3, -1.0, 2.5, 7.0], 0.0, 3.0)
        for j, z in enumerate(t.nodes):
            assert tb.interpolate(t, z) == t.values[j]

    def test_midpoint(self):
        t = table([0.3, -1.0, 2.5, 7.0], 0.0, 3.0)
        assert t(1.5) == pytest.approx(0.5 * (-1.0 + 2.5))

    def test_clamp_and_counter(self):
        t = table([1.0, 2.0])
        assert t(-5.0) == 1.0
        assert t(9.0) == 2.0
        assert t.out_of_range == 2
        t(0.5)
        assert t.out_of_range == 2

    def test_vectorized(self):
        t = table([0.0, 1.0])
        np.testing.assert_allclose(t(np.array([[0.25, 0.5], [0.75, 1.0]])), [[0.25, 0.5], [0.75, 1.0]])

    @pytest.mark.parametrize("args", [(0.0, 1.0, [1.0]), (1.0, 1.0, [1.0, 2.0]), (0.0, 1.0, [1.0, np.nan])])
    def test_validation(self, args):
        with pytest.raises(ValueError):
            tb.TabulatedFunction1D(*args)

    def test_macro_tables_validation(self):
        a = table([0.0, 1.0])
        with pytest.raises(ValueError):
            tb.MacroTables(a, a, table([1.0, 0.0]), table([1.0, 1.0]), 1.0, 1.0)
        with pytest.raises(ValueError):
            tb.MacroTables(a, a, table([1.0, 1.0]), table([1.0, -1.0]), 1.0, 1.0)
        with pytest.raises(ValueError):
            tb.MacroTables(a, a, table([1.0, 1.0]), table([1.0, 1.0], 0.0, 2.0), 1.0, 1.0)
        with pytest.raises(ValueError):
            tb.MacroTables(a, a, table([1.0, 1.0]), table([1.0, 1.0]), 1.0, 1.0, off_grid="wrap")

    def test_zero_off_grid(self):
        a = table([0.0, 1.0])
        t = tb.MacroTables(a, a, table([1.0, 1.0]), table([1.0, 1.0]), 1.0, 2.0, off_grid="zero")
        assert t.log_mu0(0.5) == pytest.approx(-1.0)
        assert t.log_mu0(1.5) == -np.inf


class TestNLambda:
    def test_constant_free_energy(self, rng):
        lam, beta, c = 50.0, 2.0, 0.7
        free = table(np.full(11, c))
        n, se = tb.estimate_n_lambda(free, lam, beta, 1000, rng)
        expected = math.sqrt(lam * beta / (2 * math.pi)) * math.exp(-beta * c)
        np.testing.assert_allclose(n.values, expected, rtol=1e-12)
        assert np.all(se < 1e-12)
        np.testing.assert_allclose(tb.n_lambda_quadrature(free, lam, beta).values, expected, rtol=1e-9)

    def test_large_lambda_limit(self):
        free = tb.TabulatedFunction1D(0.0, math.pi, ThreeAtomModel.free_energy(np.linspace(0, math.pi, 201)))
        lam, beta = 1e8, 1.0
        n = tb.n_lambda_quadrature(free, lam, beta)
        limit = math.sqrt(lam * beta / (2 * math.pi)) * np.exp(-beta * free.values)
        # near the steep grid ends the slope of A sets the approach rate
        inner = np.abs(free.nodes - math.pi / 2) <= 1.0
        np.testing.assert_allclose(n.values[inner], limit[inner], rtol=0.02)

    def test_monte_carlo_matches_quadrature(self, rng):
        free = tb.TabulatedFunction1D(-2.5, 2.5, DoubleWellModel(2.0).free_energy(np.linspace(-2.5, 2.5, 51)))
        lam = 20.0
        n, se = tb.estimate_n_lambda(free, lam, 1.0, 20_000, rng)
        q = tb.n_lambda_quadrature(free, lam, 1.0)
        z = np.abs(n.values - q.values) / se
        assert np.mean(z < 3) >= 0.95

    def test_linear_free_energy_gaussian_oracle(self, rng):
        # A(z) = c z: the Gaussian moment generating function gives N exactly,
        # up to the normalising prefactor (lam beta / 2 pi)^(1/2)
        c, lam = 3.0, 100.0
        free = tb.TabulatedFunction1D(-5.0, 5.0, c * np.linspace(-5.0, 5.0, 41))
        inner = np.abs(free.nodes) <= 4.0
        exact = math.sqrt(lam / (2 * math.pi)) * np.exp(-c * free.nodes + c * c / (2.0 * lam))
        n, se = tb.estimate_n_lambda(free, lam, 1.0, 500, rng)
        np.testing.assert_allclose(n.values[inner], exact[inner], rtol=1e-10)
        assert np.all(se[inner] <= 1e-10 * exact[inner])
        plain, se_plain = tb.estimate_n_lambda(free, lam, 1.0, 20_000, rng, tilt=False)
        np.testing.assert_allclose(plain.values[inner], exact[inner], rtol=0.02)
        np.testing.assert_allclose(tb.n_lambda_quadrature(free, lam, 1.0).values[inner], exact[inner], rtol=1e-6)

    def test_steep_free_energy_standard_errors(self, rng):
        nodes = np.linspace(0.0, math.pi, 200)
        free = tb.TabulatedFunction1D(0.0, math.pi, ThreeAtomModel(1e-4).free_energy(nodes))
        n, se = tb.estimate_n_lambda(free, 1e4, 1.0, 1000, rng)
        q = tb.n_lambda_quadrature(free, 1e4, 1.0)
        assert np.all(se > 0)
        assert np.mean(np.abs(n.values - q.values) <= 3 * se) >= 0.95

    def test_rejects_empty_sample(self, rng):
        with pytest.raises(ValueError):
            tb.estimate_n_lambda(table([0.0, 0.0]), 1.0, 1.0, 0, rng)

    def test_with_n_lambda(self):
        m = DoubleWellModel(1.0)
        t = tb.exact_tables(m.free_energy, m.drift, (-2, 2, 41), 10.0)
        u = t.with_n_lambda(100.0, m_per_node=20_000, rng=np.random.default_rng(0))
        assert u.lam == 100.0
        assert u.free_energy is t.free_energy
        inner = np.abs(t.nodes) <= 1.5
        q = tb.n_lambda_quadrature(t.free_energy, 100.0, 1.0).values
        np.testing.assert_allclose(u.n_lambda.values[inner], q[inner], rtol=0.03)


class TestNodeEstimates:
    def test_identity_drift_matches_tilted_oracle(self):
        m, rc = DoubleWellModel(1.0), identity_rc()
        lam = 100.0
        est = tb.sample_nodes(m, rc, (-1.5, 1.5, 7), lam, 2e-3, 20_000, np.random.default_rng(5))
        oracle = np.array([tilted_drift_oracle(m, z, lam) for z in est.nodes])
        # the naive standard error ignores autocorrelation, so compare on a wider band
        assert np.all(np.abs(est.drift - oracle) < 10 * est.drift_se + 0.05)
        np.testing.assert_allclose(est.diffusion, 1.0)
        assert np.all((est.acceptance > 0.5) & (est.acceptance <= 1.0))

    def test_identity_free_energy_tracks_potential(self):
        m, rc = DoubleWellModel(1.0), identity_rc()
        grid = (-1.5, 1.5, 31)
        free = tb.estimate_free_energy(m, rc, grid, 1e4, 1e-4, 5000, np.random.default_rng(6))
        diff = free.values - m.free_energy(free.nodes)
        assert np.ptp(diff) < 0.1
        assert free.values.min() == 0.0

    def test_reweight_is_exact_for_points(self):
        # level sets are points: every weight is equal and the estimate is V itself
        m, rc = DoubleWellModel(1.0), identity_rc()
        grid = (-1.5, 1.5, 13)
        free = tb.estimate_free_energy(m, rc, grid, 1e6, 1e-6, 2000, np.random.default_rng(7), method="reweight")
        diff = free.values - m.free_energy(free.nodes)
        assert np.ptp(diff) < 0.02

    def test_dynamics_formula(self):
        nodes = np.linspace(0, 2, 101)
        a = tb.free_energy_from_dynamics(nodes, -2 * nodes, np.ones_like(nodes))
        np.testing.assert_allclose(a, nodes**2, atol=1e-12)
        # sigma^2 = exp(z) and b = 0 give A = z / beta
        a = tb.free_energy_from_dynamics(nodes, np.zeros_like(nodes), np.exp(nodes / 2), beta=2.0)
        np.testing.assert_allclose(a, nodes / 2, atol=1e-12)

    def test_unknown_method(self):
        m = DoubleWellModel(1.0)
        with pytest.raises(ValueError):
            tb.estimate_free_energy(m, identity_rc(), (-1, 1, 3), 10.0, 1e-3, 10, np.random.default_rng(0),
                                    method="bar")

    def test_divergent_chain_is_reported(self):
        m, rc = DoubleWellModel(1.0), identity_rc()
        with pytest.raises(ValueError):
            tb.sample_nodes(m, rc, (-1, 1, 3), 10.0, 1e-3, 0, np.random.default_rng(0))


@pytest.fixture(scope="module")
def three_atom_build():
    m, rc = ThreeAtomModel(1e-3), ThetaRC()
    lam = 100 / 1e-3
    return tb.build_tables(m, rc, (0.0, math.pi, 41), lam_precompute=lam, dt_precompute=1 / lam,
                           n_per_node=2000, lam=1e3, m_per_node=5000, rng=np.random.default_rng(8))


class TestBuild:
    def test_three_atom_shape(self, three_atom_build):
        t, est = three_atom_build
        assert t.meta["free_energy_method"] == "dynamics"
        assert t.free_energy.values.min() == 0.0
        assert np.all(t.diffusion.values > 0) and np.all(t.n_lambda.values > 0)
        inner = np.abs(t.nodes - math.pi / 2) <= 0.6
        np.testing.assert_allclose(t.diffusion.values[inner], 1.0, atol=0.04)
        a_exact = ThreeAtomModel.free_energy(t.nodes)
        a_exact -= a_exact[inner].min()
        assert np.max(np.abs(t.free_energy.values[inner] - t.free_energy.values[inner].min() - a_exact[inner])) < 0.3

    def test_determinism(self):
        m, rc = DoubleWellModel(1.0), identity_rc()
        kw = dict(lam_precompute=1e3, dt_precompute=1e-3, n_per_node=500, lam=100.0, m_per_node=500)
        a, _ = tb.build_tables(m, rc, (-1, 1, 5), rng=np.random.default_rng(3), **kw)
        b, _ = tb.build_tables(m, rc, (-1, 1, 5), rng=np.random.default_rng(3), **kw)
        for name in ("free_energy", "drift", "diffusion", "n_lambda"):
            assert np.array_equal(getattr(a, name).values, getattr(b, name).values)

    def test_exact_three_atom_minima(self):
        t = tb.exact_tables(ThreeAtomModel.free_energy, ThreeAtomModel.drift, (0.0, math.pi, 201), 1e5)
        a = t.free_energy(np.linspace(0, math.pi, 100_001))
        z = np.linspace(0, math.pi, 100_001)
        inner = np.abs(z - math.pi / 2) < 0.6
        left = z[inner][np.argmin(np.where(z[inner] < math.pi / 2, a[inner], np.inf))]
        right = z[inner][np.argmin(np.where(z[inner] > math.pi / 2, a[inner], np.inf))]
        assert left == pytest.approx(math.pi / 2 - 0.3838, abs=0.02)
        assert right == pytest.approx(math.pi / 2 + 0.3838, abs=0.02)
        assert t.free_energy(math.pi / 2) == pytest.approx(A_PI_HALF, rel=5e-3)


class TestFiles:
    def test_round_trip(self, tmp_path, three_atom_build):
        t, _ = three_atom_build
        path = tmp_path / "t.txt"
        tb.save_tables(t, path)
        u = tb.load_tables(path)
        for name in ("free_energy", "drift", "diffusion", "n_lambda"):
            assert np.array_equal(getattr(t, name).values, getattr(u, name).values)
        assert (u.z_min, u.z_max, u.lam, u.beta) == (t.z_min, t.z_max, t.lam, t.beta)

    def _write(self, tmp_path, text):
        p = tmp_path / "bad.txt"
        p.write_text(text)
        return p

    def _good(self):
        return ("mm-tables v1\nz_min=0.0 z_max=1.0 J=2 lambda=10.0 beta=1.0\nz,A,b,sigma,N_lambda\n"
                "0.0,0.0,0.0,1.0,1.0\n1.0,1.0,0.0,1.0,1.0\n")

    def test_good_file(self, tmp_path):
        t = tb.load_tables(self._write(tmp_path, self._good()))
        assert t.J == 2

    @pytest.mark.parametrize("edit, lineno", [
        (lambda s: s.replace("mm-tables v1", "tables"), 1),
        (lambda s: s.replace("z_max=1.0", "z_max=-1.0"), 2),
        (lambda s: s.replace("J=2", "J=two"), 2),
        (lambda s: s.replace("z,A,b", "z,B,b"), 3),
        (lambda s: s.replace("1.0,1.0,0.0,1.0,1.0\n", "1.0,1.0,0.0\n"), 5),
        (lambda s: s.replace("1.0,1.0,0.0,1.0,1.0\n", "1.0,x,0.0,1.0,1.0\n"), 5),
        (lambda s: s.replace("1.0,1.0,0.0,1.0,1.0\n", ""), 5),
        (lambda s: s.replace("0.0,0.0,0.0,1.0,1.0", "0.0,nan,0.0,1.0,1.0"), 4),
    ])
    def test_parse_errors(self, tmp_path, edit, lineno):
        with pytest.raises(tb.TableFormatError) as info:
            tb.load_tables(self._write(tmp_path, edit(self._good())))
        assert info.value.lineno == lineno
        assert f"line {lineno}" in str(info.value)

    def test_truncated(self, tmp_path):
        with pytest.raises(tb.TableFormatError):
            tb.load_tables(self._write(tmp_path, "mm-tables v1\n"))
        with pytest.raises(tb.TableFormatError):
            tb.load_tables(self._write(tmp_path, ""))

    def test_nonpositive_diffusion(self, tmp_path):
        with pytest.raises(tb.TableFormatError):
            tb.load_tables(self._write(tmp_path, self._good().replace("0.0,0.0,0.0,1.0,1.0", "0.0,0.0,0.0,0.0,1.0")))
