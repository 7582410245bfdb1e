"""Macroscopic tables: free energy, effective drift and diffusion, N_lambda.

All tables live on a uniform grid of reaction-coordinate values and are
evaluated by linear interpolation, clamped to the endpoint values outside the
grid. Estimation follows the biased-sampling route: at every node ``z_j`` a
MALA chain samples the tilted density

    exp(-beta V(x)) exp(-beta lambda (xi(x) - z_j)^2 / 2)

and node statistics are computed from its samples.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import logsumexp

from ._core import biased_energy_grad, interp_many, mala_log_acceptance

__all__ = [
    "TabulatedFunction1D",
    "MacroTables",
    "NodeEstimates",
    "TableBuildError",
    "TableFormatError",
    "interpolate",
    "sample_nodes",
    "estimate_eff_coeffs",
    "estimate_free_energy",
    "free_energy_from_dynamics",
    "estimate_n_lambda",
    "n_lambda_quadrature",
    "build_tables",
    "exact_tables",
    "save_tables",
    "load_tables",
]

log = logging.getLogger(__name__)


class TableBuildError(RuntimeError):
    """A node estimate came out non-finite or degenerate."""


class TableFormatError(ValueError):
    """Malformed table file."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class TabulatedFunction1D:
    """Values on a uniform grid with clamped linear interpolation.

    Parameters
    ----------
    z_min, z_max : float
        Grid bounds, ``z_min < z_max``.
    values : array_like
        Node values; node ``j`` sits at ``z_min + j (z_max - z_min) / (J - 1)``.

    Calling the table interpolates. Evaluations outside ``[z_min, z_max]`` return
    the nearest endpoint value and increment :attr:`out_of_range`.
    """

    def __init__(self, z_min, z_max, values):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a table needs at least two nodes")
        if not z_min < z_max:
            raise ValueError(f"need z_min < z_max, got {z_min} >= {z_max}")
        if not np.all(np.isfinite(values)):
            raise ValueError("table values must be finite")
        self.z_min = float(z_min)
        self.z_max = float(z_max)
        self.values = values
        self.out_of_range = 0

    @property
    def J(self):
        return self.values.size

    @property
    def nodes(self):
        return np.linspace(self.z_min, self.z_max, self.J)

    @property
    def spacing(self):
        return (self.z_max - self.z_min) / (self.J - 1)

    def __call__(self, z):
        z_arr = np.asarray(z, dtype=np.float64)
        flat = np.ascontiguousarray(z_arr.reshape(-1))
        out = np.empty_like(flat)
        self.out_of_range += interp_many(flat, self.z_min, self.z_max, self.values, out)
        if z_arr.ndim == 0:
            return float(out[0])
        return out.reshape(z_arr.shape)

    def __repr__(self):
        return f"TabulatedFunction1D(z_min={self.z_min}, z_max={self.z_max}, J={self.J})"


def interpolate(table: TabulatedFunction1D, z):
    return table(z)


@dataclass
class MacroTables:
    """Free energy ``A``, drift ``b``, diffusion ``sigma`` and ``N_lambda`` on one grid.

    ``n_lambda`` omits the unknown constant ``Z_V / Z_A``; only ratios of it are
    meaningful. ``lam`` is the bias strength ``n_lambda`` was built for.
    """

    free_energy: TabulatedFunction1D
    drift: TabulatedFunction1D
    diffusion: TabulatedFunction1D
    n_lambda: TabulatedFunction1D
    lam: float
    beta: float
    # "clamp": endpoint values outside the grid; "zero": mu0_bar vanishes there
    off_grid: str = "clamp"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        tabs = (self.free_energy, self.drift, self.diffusion, self.n_lambda)
        if len({(t.z_min, t.z_max, t.J) for t in tabs}) != 1:
            raise ValueError("all tables must share one grid")
        if np.any(self.diffusion.values <= 0):
            raise ValueError("diffusion table must be strictly positive")
        if np.any(self.n_lambda.values <= 0):
            raise ValueError("n_lambda table must be strictly positive")
        if self.off_grid not in ("clamp", "zero"):
            raise ValueError("off_grid must be 'clamp' or 'zero'")

    @property
    def z_min(self):
        return self.free_energy.z_min

    @property
    def z_max(self):
        return self.free_energy.z_max

    @property
    def J(self):
        return self.free_energy.J

    @property
    def nodes(self):
        return self.free_energy.nodes

    def log_mu0(self, z):
        """Unnormalized log-density ``-beta A(z)`` of the macroscopic target."""
        value = -self.beta * self.free_energy(z)
        if self.off_grid == "zero":
            value = np.where((np.asarray(z) < self.z_min) | (np.asarray(z) > self.z_max), -np.inf, value)
        return value

    def arrays(self):
        """Flat argument tuple consumed by the compiled chain drivers."""
        return (
            self.z_min,
            self.z_max,
            self.free_energy.values,
            self.drift.values,
            self.diffusion.values,
            self.n_lambda.values,
            self.off_grid == "zero",
        )

    def with_n_lambda(self, lam, m_per_node=100_000, rng=None):
        """Copy with ``N_lambda`` rebuilt for another bias strength."""
        rng = rng if rng is not None else np.random.default_rng(0)
        n_lam, _ = estimate_n_lambda(self.free_energy, lam, self.beta, m_per_node, rng)
        return MacroTables(self.free_energy, self.drift, self.diffusion, n_lam, float(lam), self.beta,
                           self.off_grid, dict(self.meta))


# --------------------------------------------------------------------------
# node sampling

@nb.njit(nogil=True)
def _node_chain(energy_grad, rc, p, rcp, x0, z, lam, dt, beta, normals, unif, burn,
                out_drift, out_gns, out_logw):
    d = x0.size
    x = x0.copy()
    y = np.empty(d)
    gx = np.empty(d)
    gy = np.empty(d)
    gv = np.empty(d)
    grc = np.empty(d)
    ux, vx, _ = biased_energy_grad(energy_grad, rc, p, rcp, x, z, lam, gx, grc)
    noise_scale = math.sqrt(2.0 * dt / beta)
    accepted = 0
    n = unif.size
    for i in range(n):
        for k in range(d):
            y[k] = x[k] - dt * gx[k] + noise_scale * normals[i, k]
        uy, vy, _ = biased_energy_grad(energy_grad, rc, p, rcp, y, z, lam, gy, grc)
        if math.log(unif[i]) < mala_log_acceptance(x, y, gx, gy, ux, uy, dt, beta):
            x[:] = y
            gx[:] = gy
            ux = uy
            accepted += 1
        if i >= burn:
            v = energy_grad(x, p, gv)
            _, lap = rc(x, rcp, grc)
            gdot = 0.0
            gns = 0.0
            for k in range(d):
                gdot += gv[k] * grc[k]
                gns += grc[k] * grc[k]
            j = i - burn
            out_drift[j] = -gdot + lap / beta
            out_gns[j] = gns
            out_logw[j] = beta * v + 0.5 * math.log(gns)
    return accepted


@dataclass
class NodeEstimates:
    """Per-node statistics of the tilted chains, with standard errors.

    ``drift``/``diffusion`` are raw node values, ``free_energy`` is the
    unshifted reweighting estimate; ``drift_se`` is a naive i.i.d. standard
    error.
    """

    nodes: np.ndarray
    drift: np.ndarray
    drift_se: np.ndarray
    diffusion: np.ndarray
    free_energy: np.ndarray
    acceptance: np.ndarray


def _grid_nodes(grid):
    z_min, z_max, J = grid
    return np.linspace(float(z_min), float(z_max), int(J))


def sample_nodes(model, rc, grid, lam, delta_t, n_per_node, rng, beta=1.0, burn_in=0.2) -> NodeEstimates:
    """Run one tilted MALA chain per grid node and reduce it to node statistics.

    Parameters
    ----------
    model, rc
        Potential model and reaction coordinate.
    grid : tuple
        ``(z_min, z_max, J)``.
    lam, delta_t : float
        Bias strength and MALA step of the node chains.
    n_per_node : int
        Samples kept per node; ``ceil(burn_in * n_per_node)`` extra leading
        steps are discarded first.
    rng : numpy.random.Generator
        Source of all node randomness (nodes are drawn in order).
    """
    if n_per_node < 1:
        raise ValueError("n_per_node must be >= 1")
    nodes = _grid_nodes(grid)
    burn = int(math.ceil(burn_in * n_per_node))
    total = burn + n_per_node
    J = nodes.size
    drift = np.empty(J)
    drift_se = np.empty(J)
    diffusion = np.empty(J)
    free_energy = np.empty(J)
    acceptance = np.empty(J)
    buf_d = np.empty(n_per_node)
    buf_g = np.empty(n_per_node)
    buf_w = np.empty(n_per_node)
    for j, z in enumerate(nodes):
        x0 = model.node_state(z)
        normals = rng.standard_normal((total, model.dim))
        unif = rng.random(total)
        acc = _node_chain(model.energy_grad_kernel, rc.kernel, model.params, rc.params, x0, z,
                          float(lam), float(delta_t), float(beta), normals, unif, burn, buf_d, buf_g, buf_w)
        acceptance[j] = acc / total
        drift[j] = buf_d.mean()
        drift_se[j] = buf_d.std() / math.sqrt(n_per_node)
        diffusion[j] = math.sqrt(buf_g.mean())
        # normalized weights w ~ exp(beta V) |grad xi|; integrand exp(-beta V) / |grad xi|
        log_w = buf_w - logsumexp(buf_w)
        free_energy[j] = -logsumexp(log_w - buf_w) / beta
        if not (np.isfinite(drift[j]) and np.isfinite(diffusion[j]) and np.isfinite(free_energy[j])):
            raise TableBuildError(f"node {j} (z={z:.6g}): non-finite statistic, acceptance {acceptance[j]:.3f}")
        if diffusion[j] <= 0:
            raise TableBuildError(f"node {j} (z={z:.6g}): zero diffusion")
    return NodeEstimates(nodes, drift, drift_se, diffusion, free_energy, acceptance)


def estimate_eff_coeffs(model, rc, grid, lam, delta_t, n_per_node, rng, beta=1.0, burn_in=0.2):
    """Drift and diffusion tables from tilted node chains."""
    est = sample_nodes(model, rc, grid, lam, delta_t, n_per_node, rng, beta, burn_in)
    z_min, z_max, _ = grid
    return TabulatedFunction1D(z_min, z_max, est.drift), TabulatedFunction1D(z_min, z_max, est.diffusion)


def free_energy_from_dynamics(nodes, drift, diffusion, beta=1.0):
    """Free energy whose Gibbs factor is invariant under the effective dynamics.

    Zero probability flux of ``dz = b dt + sigma sqrt(2 / beta) dW`` against
    ``exp(-beta A)`` gives ``A' = (beta^-1 (sigma^2)' - b) / sigma^2``, hence

        A(z) = beta^-1 log sigma(z)^2 - int_{z_0}^{z} b / sigma^2 du,

    evaluated with the trapezoid rule on the nodes. Only defined up to a constant.
    """
    s2 = np.asarray(diffusion, dtype=np.float64) ** 2
    return np.log(s2) / beta - cumulative_trapezoid(np.asarray(drift) / s2, nodes, initial=0.0)


FREE_ENERGY_METHODS = ("dynamics", "reweight")


def _free_energy_values(est: NodeEstimates, method, beta):
    if method == "dynamics":
        a = free_energy_from_dynamics(est.nodes, est.drift, est.diffusion, beta)
    elif method == "reweight":
        a = est.free_energy
    else:
        raise ValueError(f"unknown free energy method {method!r}; choose from {FREE_ENERGY_METHODS}")
    return a - a.min()


def estimate_free_energy(model, rc, grid, lam, delta_t, n_per_node, rng, beta=1.0, burn_in=0.2,
                         method="dynamics"):
    """Free-energy table from tilted node chains, shifted to a zero minimum.

    ``method="reweight"`` weights every sample by ``exp(beta V) |grad xi|`` and
    takes ``-beta^-1 log sum_i w_i exp(-beta V_i) / |grad xi_i|``. That is a
    harmonic-mean estimator: when the level sets are unbounded its weights have
    infinite variance and node values scatter by several ``kT``.
    ``method="dynamics"`` (default) integrates the drift and diffusion
    estimates instead, see :func:`free_energy_from_dynamics`.
    """
    est = sample_nodes(model, rc, grid, lam, delta_t, n_per_node, rng, beta, burn_in)
    z_min, z_max, _ = grid
    return TabulatedFunction1D(z_min, z_max, _free_energy_values(est, method, beta))


def _integrand_mode(free_energy, z, scale, beta):
    """Maximizer of ``-beta A(x) - (x - z)^2 / (2 scale^2)`` with ``A`` the interpolated table."""
    # A is piecewise linear, so the integrand's log is concave on every segment:
    # its maximum sits at a node or at a segment's stationary point
    nodes, a = free_energy.nodes, free_energy.values
    stationary = z - beta * scale * scale * np.diff(a) / np.diff(nodes)
    inside = (stationary >= nodes[:-1]) & (stationary <= nodes[1:])
    u = np.concatenate((nodes, stationary[inside]))
    a_u = np.empty_like(u)
    interp_many(u, free_energy.z_min, free_energy.z_max, a, a_u)
    return u[np.argmax(-beta * a_u - 0.5 * ((u - z) / scale) ** 2)]


def estimate_n_lambda(free_energy, lam, beta, m_per_node, rng, tilt=True):
    """Monte Carlo estimate of ``N_lambda`` at every node of ``free_energy``.

    ``N_lambda(z)`` is ``sqrt(lam beta / 2 pi)`` times the expectation of
    ``exp(-beta A(X))`` for ``X ~ N(z, s^2)``, ``s^2 = 1 / (lam beta)``, with
    ``A`` interpolated (and clamped) from the table.

    Where ``A`` is steep on the scale ``s`` the plain average is dominated by
    rare draws and its sample standard error is unreliable. With ``tilt`` the
    Gaussian is recentred on the mode ``m`` of the integrand
    ``exp(-beta A(x) - (x - z)^2 / (2 s^2))``, found exactly for the piecewise
    linear ``A``. With ``g = (z - m) / (beta s^2)`` the change of measure

        E[exp(-beta A(X))] = exp(-beta A(z) + (beta g s)^2 / 2) E_m[exp(-beta (A(X) - A(z) - g (X - z)))]

    holds exactly, and the weights on the right only see how far ``A``
    departs from its tangent at the mode. ``tilt=False`` gives the plain
    estimator. Sums are taken in log space.

    Returns
    -------
    table : TabulatedFunction1D
    stderr : ndarray
        Monte Carlo standard error of every node value.
    """
    if m_per_node < 1:
        raise ValueError("m_per_node must be >= 1")
    log_prefactor = 0.5 * math.log(lam * beta / (2.0 * math.pi))
    scale = 1.0 / math.sqrt(lam * beta)
    nodes = free_energy.nodes
    a_nodes = free_energy.values
    values = np.empty(nodes.size)
    stderr = np.empty(nodes.size)
    a_vals = np.empty(m_per_node)
    for j, z in enumerate(nodes):
        g = (z - _integrand_mode(free_energy, z, scale, beta)) / (beta * scale * scale) if tilt else 0.0
        xs = z - beta * g * scale * scale + scale * rng.standard_normal(m_per_node)
        interp_many(xs, free_energy.z_min, free_energy.z_max, a_nodes, a_vals)
        log_w = -beta * (a_vals - a_nodes[j] - g * (xs - z))
        shift = log_w.max()
        w = np.exp(log_w - shift)
        log_base = log_prefactor - beta * a_nodes[j] + 0.5 * (beta * g * scale) ** 2 + shift
        values[j] = math.exp(log_base) * w.mean()
        stderr[j] = math.exp(log_base) * w.std(ddof=1) / math.sqrt(m_per_node) if m_per_node > 1 else np.inf
    return TabulatedFunction1D(free_energy.z_min, free_energy.z_max, values), stderr


def n_lambda_quadrature(free_energy, lam, beta, points_per_width=40, half_widths=10.0):
    """Deterministic ``N_lambda`` by trapezoid quadrature of the Gaussian convolution.

    Integrates the normal density ``N(u; z, 1 / (lam beta))`` against
    ``exp(-beta A(u))``, with the same ``sqrt(lam beta / 2 pi)`` prefactor as
    :func:`estimate_n_lambda` and ``A`` interpolated and clamped exactly as the
    Monte Carlo estimator sees it. The window reaches ``half_widths`` standard
    deviations past both ``z`` and the integrand's mode, which a steep ``A``
    can push far from ``z``. Grid nodes inside the window are added to the mesh
    so the kinks of the piecewise linear free energy are resolved.
    """
    s = 1.0 / math.sqrt(lam * beta)
    nodes = free_energy.nodes
    out = np.empty(nodes.size)
    for j, z in enumerate(nodes):
        mode = _integrand_mode(free_energy, z, s, beta)
        lo, hi = min(z, mode) - half_widths * s, max(z, mode) + half_widths * s
        u = np.linspace(lo, hi, int(math.ceil((hi - lo) / s * points_per_width)) + 1)
        u = np.union1d(u, nodes[(nodes > lo) & (nodes < hi)])
        a_vals = np.empty_like(u)
        interp_many(u, free_energy.z_min, free_energy.z_max, free_energy.values, a_vals)
        log_f = -beta * a_vals - 0.5 * ((u - z) / s) ** 2
        top = log_f.max()
        integral = trapezoid(np.exp(log_f - top), u) / (s * math.sqrt(2 * math.pi))
        out[j] = math.sqrt(lam * beta / (2 * math.pi)) * integral * math.exp(top)
    return TabulatedFunction1D(free_energy.z_min, free_energy.z_max, out)


def build_tables(model, rc, grid, *, lam_precompute, dt_precompute, n_per_node, lam, m_per_node, rng,
                 beta=1.0, burn_in=0.2, off_grid="clamp", free_energy_method="dynamics"):
    """Estimate every table for one model/reaction coordinate pair.

    Node chains use ``lam_precompute``/``dt_precompute``; ``N_lambda`` is built for
    the sampling bias ``lam``. Returns ``(tables, node_estimates)``.
    """
    est = sample_nodes(model, rc, grid, lam_precompute, dt_precompute, n_per_node, rng, beta, burn_in)
    z_min, z_max, _ = grid
    free = TabulatedFunction1D(z_min, z_max, _free_energy_values(est, free_energy_method, beta))
    drift = TabulatedFunction1D(z_min, z_max, est.drift)
    diffusion = TabulatedFunction1D(z_min, z_max, est.diffusion)
    n_lam, n_se = estimate_n_lambda(free, lam, beta, m_per_node, rng)
    log.info("tables built: max drift stderr %.3g, min node acceptance %.3f, max N_lambda rel. stderr %.3g",
             est.drift_se.max(), est.acceptance.min(), np.max(n_se / n_lam.values))
    tables = MacroTables(free, drift, diffusion, n_lam, float(lam), float(beta), off_grid)
    tables.meta["free_energy_method"] = free_energy_method
    return tables, est


def exact_tables(free_energy_fn, drift_fn, grid, lam, beta=1.0, diffusion=1.0, off_grid="clamp"):
    """Tables from known free energy and drift; ``N_lambda`` by quadrature."""
    nodes = _grid_nodes(grid)
    z_min, z_max, _ = grid
    a = np.asarray(free_energy_fn(nodes), dtype=np.float64)
    free = TabulatedFunction1D(z_min, z_max, a - a.min())
    drift = TabulatedFunction1D(z_min, z_max, drift_fn(nodes))
    diff = TabulatedFunction1D(z_min, z_max, np.full(nodes.size, float(diffusion)))
    n_lam = n_lambda_quadrature(free, lam, beta)
    return MacroTables(free, drift, diff, n_lam, float(lam), float(beta), off_grid)


# --------------------------------------------------------------------------
# file format

_MAGIC = "mm-tables v1"
_HEADER = "z,A,b,sigma,N_lambda"


def save_tables(tables: MacroTables, path):
    lines = [
        _MAGIC,
        f"z_min={tables.z_min!r} z_max={tables.z_max!r} J={tables.J} lambda={tables.lam!r} beta={tables.beta!r}",
        _HEADER,
    ]
    cols = (tables.nodes, tables.free_energy.values, tables.drift.values, tables.diffusion.values,
            tables.n_lambda.values)
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tables(path, off_grid="clamp") -> MacroTables:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise TableFormatError(f"expected {_MAGIC!r}", 1)
    if len(lines) < 3:
        raise TableFormatError("truncated header", len(lines) + 1)
    meta = {}
    for item in lines[1].split():
        key, sep, value = item.partition("=")
        if not sep:
            raise TableFormatError(f"bad header item {item!r}", 2)
        meta[key] = value
    try:
        z_min, z_max = float(meta["z_min"]), float(meta["z_max"])
        J = int(meta["J"])
        lam, beta = float(meta["lambda"]), float(meta["beta"])
    except (KeyError, ValueError) as exc:
        raise TableFormatError(f"bad grid header: {exc}", 2) from None
    if not z_min < z_max:
        raise TableFormatError("z_min must be below z_max", 2)
    if J < 2:
        raise TableFormatError("J must be at least 2", 2)
    if lines[2].strip() != _HEADER:
        raise TableFormatError(f"expected column header {_HEADER!r}", 3)
    body = [ln for ln in lines[3:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != J:
        raise TableFormatError(f"expected {J} rows, found {len(body)}", 3 + len(body) + 1)
    data = np.empty((J, 5))
    for i, ln in enumerate(body):
        parts = ln.split(",")
        if len(parts) != 5:
            raise TableFormatError(f"expected 5 columns, found {len(parts)}", i + 4)
        try:
            data[i] = [float(v) for v in parts]
        except ValueError as exc:
            raise TableFormatError(str(exc), i + 4) from None
    if not np.all(np.isfinite(data)):
        bad = int(np.argmax(~np.all(np.isfinite(data), axis=1)))
        raise TableFormatError("non-finite value", bad + 4)
    tab = [TabulatedFunction1D(z_min, z_max, data[:, c]) for c in range(1, 5)]
    try:
        return MacroTables(*tab, lam, beta, off_grid)
    except ValueError as exc:
        raise TableFormatError(str(exc)) from None
