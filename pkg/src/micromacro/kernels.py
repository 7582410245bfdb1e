"""Markov transition kernels: MALA, indirect and direct micro-macro steps.

The chain loops are compiled with numba and consume random numbers that are
pre-drawn in blocks with a fixed budget per step, whether or not a step uses
them. A chain is therefore a deterministic function of its generator state,
independent of acceptance history and block boundaries are invisible.

Per-step random budget (in draw order):

* MALA: ``d`` normals, 1 uniform.
* indirect: 1 macro normal + ``K d`` biased normals; 1 macro uniform + ``K``
  biased uniforms + 1 micro uniform.
* direct: 1 macro normal + reconstruction noise; 1 macro uniform + 1 micro
  uniform.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from ._core import (
    biased_energy_grad,
    interp,
    log_alpha_cg,
    log_alpha_f_indirect,
    log_mu0,
    log_q0,
    macro_mean_sd,
    mala_log_acceptance,
)
from .models import DomainError

__all__ = [
    "InvariantError",
    "CapabilityError",
    "SamplerParams",
    "ExtendedState",
    "StepOutcome",
    "ChainResult",
    "biased_log_density",
    "mala_step",
    "indirect_reconstruct",
    "macro_log_q0",
    "macro_propose",
    "alpha_cg",
    "alpha_f_indirect",
    "alpha_f_direct",
    "mm_step_indirect",
    "mm_step_direct",
    "run_mala",
    "run_mm",
    "initial_state",
    "rc_trace",
]

BLOCK = 1 << 14

# counter slots shared by all chain loops
MACRO_PROPOSED, MACRO_ACCEPTED, MICRO_ACCEPTED, BIASED_STEPS, BIASED_ACCEPTED, OUT_OF_RANGE = range(6)
COUNTER_NAMES = ("macro_proposed", "macro_accepted", "micro_accepted", "biased_steps", "biased_accepted",
                 "out_of_range")


class InvariantError(RuntimeError):
    """A chain reached a state its acceptance ratio is undefined at."""


class CapabilityError(ValueError):
    """The requested sampler is not available for the model."""


@dataclass(frozen=True)
class SamplerParams:
    """Numerical parameters of a sampler run.

    ``lam``, ``K`` and ``dt_macro`` are ignored by plain MALA.
    """

    beta: float = 1.0
    lam: float = 1.0
    K: int = 1
    dt_micro: float = 1e-3
    dt_macro: float = 1e-2
    N: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("beta", "lam", "dt_micro", "dt_macro"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError(f"N must be a non-negative integer, got {self.N}")

    def replace(self, **changes) -> "SamplerParams":
        return replace(self, **changes)


@dataclass
class ExtendedState:
    """Point ``(x, z)`` of the extended space with cached ``V(x)`` and ``xi(x)``."""

    x: np.ndarray
    z: float
    energy: float = math.nan
    rc_value: float = math.nan

    def refresh(self, model, rc):
        """Recompute the caches from ``x``."""
        self.energy = model.energy(self.x)
        self.rc_value = rc.value(self.x)
        return self

    def copy(self):
        return ExtendedState(self.x.copy(), self.z, self.energy, self.rc_value)


def initial_state(model, rc, x0) -> ExtendedState:
    """Chain start ``(x0, xi(x0))``."""
    x0 = model._coerce(x0).copy()
    state = ExtendedState(x0, 0.0).refresh(model, rc)
    state.z = state.rc_value
    return state


@dataclass
class StepOutcome:
    state: ExtendedState
    macro_proposed: bool
    macro_accepted: bool
    micro_attempted: bool
    micro_accepted: bool
    biased_accepted: int = 0


@dataclass
class ChainResult:
    """Trace and bookkeeping of one chain.

    ``zs`` is the macroscopic component of the extended state (``xi(x)`` for
    MALA). ``runtime`` covers the sampling loop only.
    """

    xs: np.ndarray
    zs: np.ndarray
    counters: dict
    runtime: float
    final: ExtendedState
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return self.zs.size

    @property
    def macro_acceptance(self):
        c = self.counters
        return c["macro_accepted"] / c["macro_proposed"] if c["macro_proposed"] else math.nan

    @property
    def micro_acceptance(self):
        c = self.counters
        return c["micro_accepted"] / c["macro_accepted"] if c["macro_accepted"] else math.nan

    @property
    def biased_acceptance(self):
        c = self.counters
        return c["biased_accepted"] / c["biased_steps"] if c["biased_steps"] else math.nan


# --------------------------------------------------------------------------
# compiled loops

@nb.njit(nogil=True)
def _biased_mala(energy_grad, rc, p, rcp, x, z, lam, dt, beta, normals, unif, n0, u0, K,
                 y, gx, gy, grc):
    """``K`` MALA steps on ``V + lam/2 (xi - z)^2``, in place on ``x``.

    Noise is read from ``normals[n0:n0 + K d]`` and ``unif[u0:u0 + K]``.
    """
    d = x.size
    ux, _, _ = biased_energy_grad(energy_grad, rc, p, rcp, x, z, lam, gx, grc)
    scale = math.sqrt(2.0 * dt / beta)
    acc = 0
    for k in range(K):
        base = n0 + k * d
        for i in range(d):
            y[i] = x[i] - dt * gx[i] + scale * normals[base + i]
        uy, _, _ = biased_energy_grad(energy_grad, rc, p, rcp, y, z, lam, gy, grc)
        if math.log(unif[u0 + k]) < mala_log_acceptance(x, y, gx, gy, ux, uy, dt, beta):
            x[:] = y
            gx[:] = gy
            ux = uy
            acc += 1
    return acc


@nb.njit(nogil=True)
def _mala_chain(energy_grad, p, x, dt, beta, normals, unif, xs_out, counters):
    d = x.size
    y = np.empty(d)
    gx = np.empty(d)
    gy = np.empty(d)
    ux = energy_grad(x, p, gx)
    scale = math.sqrt(2.0 * dt / beta)
    for n in range(unif.size):
        for i in range(d):
            y[i] = x[i] - dt * gx[i] + scale * normals[n, i]
        uy = energy_grad(y, p, gy)
        counters[MACRO_PROPOSED] += 1
        if math.log(unif[n]) < mala_log_acceptance(x, y, gx, gy, ux, uy, dt, beta):
            x[:] = y
            gx[:] = gy
            ux = uy
            counters[MACRO_ACCEPTED] += 1
        xs_out[n, :] = x


@nb.njit(nogil=True)
def _mm_indirect_chain(energy_grad, rc, p, rcp, x, zbox, z_min, z_max, free_energy, drift, diffusion,
                       n_lambda, zero_off_grid, beta, lam, K, dt, dt_macro, normals, unif,
                       xs_out, zs_out, counters):
    d = x.size
    xr = np.empty(d)
    y = np.empty(d)
    gx = np.empty(d)
    gy = np.empty(d)
    grc = np.empty(d)
    z = zbox[0]
    lmu = log_mu0(z, z_min, z_max, free_energy, beta, zero_off_grid)
    for n in range(unif.shape[0]):
        mean, sd = macro_mean_sd(z, z_min, z_max, drift, diffusion, dt_macro, beta)
        zp = mean + sd * normals[n, 0]
        counters[MACRO_PROPOSED] += 1
        if zp < z_min or zp > z_max:
            counters[OUT_OF_RANGE] += 1
        lmu_p = log_mu0(zp, z_min, z_max, free_energy, beta, zero_off_grid)
        la = log_alpha_cg(lmu_p, lmu,
                          log_q0(z, zp, z_min, z_max, drift, diffusion, dt_macro, beta),
                          log_q0(zp, z, z_min, z_max, drift, diffusion, dt_macro, beta))
        if math.log(unif[n, 0]) < la:
            counters[MACRO_ACCEPTED] += 1
            xr[:] = x
            acc = _biased_mala(energy_grad, rc, p, rcp, xr, zp, lam, dt, beta, normals[n], unif[n], 1, 1, K,
                               y, gx, gy, grc)
            counters[BIASED_STEPS] += K
            counters[BIASED_ACCEPTED] += acc
            n_z, _ = interp(z, z_min, z_max, n_lambda)
            n_zp, _ = interp(zp, z_min, z_max, n_lambda)
            if math.log(unif[n, K + 1]) < log_alpha_f_indirect(lmu, lmu_p, n_z, n_zp):
                counters[MICRO_ACCEPTED] += 1
                x[:] = xr
                z = zp
                lmu = lmu_p
        xs_out[n, :] = x
        zs_out[n] = z
    zbox[0] = z


@nb.njit(nogil=True)
def _mm_direct_chain(energy_grad, draw, log_nu, p, x, zbox, z_min, z_max, free_energy, drift, diffusion,
                     zero_off_grid, beta, dt_macro, normals, unif, xs_out, zs_out, counters):
    d = x.size
    y = np.empty(d)
    g = np.empty(d)
    z = zbox[0]
    lmu = log_mu0(z, z_min, z_max, free_energy, beta, zero_off_grid)
    # log of mu(x) / (mu0_bar(xi(x)) nu_bar(x | xi(x))), the only x-dependent factor of the ratio
    vx = energy_grad(x, p, g)
    wx = -beta * vx - lmu - log_nu(x, z, p, beta)
    for n in range(unif.shape[0]):
        mean, sd = macro_mean_sd(z, z_min, z_max, drift, diffusion, dt_macro, beta)
        zp = mean + sd * normals[n, 0]
        counters[MACRO_PROPOSED] += 1
        if zp < z_min or zp > z_max:
            counters[OUT_OF_RANGE] += 1
        lmu_p = log_mu0(zp, z_min, z_max, free_energy, beta, zero_off_grid)
        la = log_alpha_cg(lmu_p, lmu,
                          log_q0(z, zp, z_min, z_max, drift, diffusion, dt_macro, beta),
                          log_q0(zp, z, z_min, z_max, drift, diffusion, dt_macro, beta))
        if math.log(unif[n, 0]) < la:
            counters[MACRO_ACCEPTED] += 1
            if draw(zp, p, beta, normals[n, 1:], y):
                vy = energy_grad(y, p, g)
                wy = -beta * vy - lmu_p - log_nu(y, zp, p, beta)
                if math.isfinite(wy) and math.log(unif[n, 1]) < min(0.0, wy - wx):
                    counters[MICRO_ACCEPTED] += 1
                    x[:] = y
                    z = zp
                    lmu = lmu_p
                    wx = wy
        xs_out[n, :] = x
        zs_out[n] = z
    zbox[0] = z


# --------------------------------------------------------------------------
# single-operation API

def biased_log_density(x, z_target, lam, beta, model, rc) -> float:
    """Unnormalized log-density ``-beta V(x) - beta lam / 2 (xi(x) - z)^2`` of the tilted target."""
    v = model.energy(x)
    r = rc.value(x) - z_target
    return -beta * v - 0.5 * beta * lam * r * r


def mala_step(x, log_density, log_density_gradient, delta_t, beta, rng):
    """One MALA step on the density ``exp(log_density)``.

    The proposal is ``x + delta_t grad(log_density) / beta + sqrt(2 delta_t / beta) eta``,
    the Euler-Maruyama step of the Langevin dynamics whose invariant law is the
    target when ``log_density = -beta U``. Non-finite proposal densities are
    rejected.

    Returns
    -------
    x_next : ndarray
    accepted : bool
    """
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    x = np.asarray(x, dtype=np.float64)
    lx = log_density(x)
    gx = np.asarray(log_density_gradient(x)) / beta
    y = x + delta_t * gx + math.sqrt(2.0 * delta_t / beta) * rng.standard_normal(x.shape)
    u = rng.random()
    try:
        ly = log_density(y)
    except (DomainError, FloatingPointError, OverflowError):
        ly = -math.inf
    if not np.isfinite(ly):
        return x.copy(), False
    gy = np.asarray(log_density_gradient(y)) / beta
    fwd = np.sum((y - x - delta_t * gx) ** 2)
    bwd = np.sum((x - y - delta_t * gy) ** 2)
    log_ratio = ly - lx - beta * (bwd - fwd) / (4.0 * delta_t)
    if math.log(u) < min(0.0, log_ratio):
        return y, True
    return x.copy(), False


def _workspace(d):
    return np.empty(d), np.empty(d), np.empty(d), np.empty(d)


def indirect_reconstruct(x_start, z_target, params: SamplerParams, model, rc, rng):
    """Run ``K`` biased MALA steps from ``x_start`` towards the level set of ``z_target``.

    Returns
    -------
    x_prime : ndarray
    biased_accept_rate : float
    """
    x = model._coerce(x_start).copy()
    K = int(params.K)
    normals = rng.standard_normal(K * model.dim)
    unif = rng.random(K)
    y, gx, gy, grc = _workspace(model.dim)
    acc = _biased_mala(model.energy_grad_kernel, rc.kernel, model.params, rc.params, x, float(z_target),
                       params.lam, params.dt_micro, params.beta, normals, unif, 0, 0, K, y, gx, gy, grc)
    return x, acc / K


def macro_log_q0(z_next, z, tables, delta_t_macro, beta) -> float:
    """Log-density of the Euler-Maruyama macroscopic proposal ``z -> z_next``."""
    z_min, z_max, _, b, s, _, _ = tables.arrays()
    return log_q0(float(z_next), float(z), z_min, z_max, b, s, float(delta_t_macro), float(beta))


def macro_propose(z, tables, delta_t_macro, beta, rng) -> float:
    """Draw ``z_next`` from the macroscopic proposal."""
    z_min, z_max, _, b, s, _, _ = tables.arrays()
    mean, sd = macro_mean_sd(float(z), z_min, z_max, b, s, float(delta_t_macro), float(beta))
    return mean + sd * rng.standard_normal()


def alpha_cg(z_next, z, tables, delta_t_macro, beta) -> float:
    """Macroscopic Metropolis-Hastings acceptance probability."""
    z_min, z_max, a, b, s, _, zero = tables.arrays()
    lmu = log_mu0(float(z), z_min, z_max, a, beta, zero)
    if lmu == -math.inf:
        raise InvariantError(f"macroscopic density vanishes at the current state z={z}")
    lmu_p = log_mu0(float(z_next), z_min, z_max, a, beta, zero)
    la = log_alpha_cg(lmu_p, lmu, log_q0(z, z_next, z_min, z_max, b, s, delta_t_macro, beta),
                      log_q0(z_next, z, z_min, z_max, b, s, delta_t_macro, beta))
    return math.exp(la)


def alpha_f_indirect(z, z_next, tables) -> float:
    """Microscopic acceptance probability of the indirect step; depends on ``z`` and ``z_next`` only."""
    z_min, z_max, a, _, _, n_lam, zero = tables.arrays()
    beta = tables.beta
    lmu = log_mu0(float(z), z_min, z_max, a, beta, zero)
    lmu_p = log_mu0(float(z_next), z_min, z_max, a, beta, zero)
    n_z, _ = interp(float(z), z_min, z_max, n_lam)
    n_zp, _ = interp(float(z_next), z_min, z_max, n_lam)
    if not (n_z > 0 and n_zp > 0) or lmu == -math.inf:
        raise InvariantError("non-positive table value in the microscopic acceptance")
    return math.exp(log_alpha_f_indirect(lmu, lmu_p, n_z, n_zp))


def _check_direct(model):
    if not model.supports_direct:
        raise CapabilityError(f"model {model.name!r} has no direct reconstruction")


def alpha_f_direct(x, x_prime, model, rc, tables) -> float:
    """Microscopic acceptance probability of a direct reconstruction ``x -> x_prime``.

    ``x_prime`` must lie exactly on the level set of the accepted macroscopic
    proposal; the reconstruction density is taken from the model.
    """
    _check_direct(model)
    beta = tables.beta

    def weight(v):
        z = rc.value(v)
        lnu = model.direct_log_density_kernel(np.asarray(v, dtype=np.float64), z, model.params, beta)
        return -beta * model.energy(v) - float(tables.log_mu0(z)) - lnu

    wx = weight(x)
    if not math.isfinite(wx):
        raise InvariantError("reconstruction density vanishes at the current sample")
    return math.exp(min(0.0, weight(x_prime) - wx))


def _noise_dims(method, model, K):
    if method == "indirect":
        return 1 + K * model.dim, K + 2
    if method == "direct":
        return 1 + model.direct_noise_dim, 2
    if method == "mala":
        return model.dim, 1
    raise ValueError(f"unknown sampler {method!r}")


def _run_block(method, model, rc, tables, params, x, zbox, normals, unif, xs_out, zs_out, counters):
    if method == "mala":
        _mala_chain(model.energy_grad_kernel, model.params, x, params.dt_micro, params.beta, normals,
                    unif[:, 0], xs_out, counters)
        return
    z_min, z_max, a, b, s, n_lam, zero = tables.arrays()
    if method == "indirect":
        _mm_indirect_chain(model.energy_grad_kernel, rc.kernel, model.params, rc.params, x, zbox,
                           z_min, z_max, a, b, s, n_lam, zero, params.beta, params.lam, int(params.K),
                           params.dt_micro, params.dt_macro, normals, unif, xs_out, zs_out, counters)
    else:
        _mm_direct_chain(model.energy_grad_kernel, model.direct_draw_kernel, model.direct_log_density_kernel,
                         model.params, x, zbox, z_min, z_max, a, b, s, zero, params.beta, params.dt_macro,
                         normals, unif, xs_out, zs_out, counters)


def _step(method, state, tables, params, model, rc, rng):
    x = state.x.copy()
    zbox = np.array([state.z])
    nn, nu = _noise_dims(method, model, int(params.K))
    normals = rng.standard_normal((1, nn))
    unif = rng.random((1, nu))
    counters = np.zeros(6, dtype=np.int64)
    _run_block(method, model, rc, tables, params, x, zbox, normals, unif, np.empty((1, model.dim)),
               np.empty(1), counters)
    nxt = ExtendedState(x, float(zbox[0])).refresh(model, rc)
    return StepOutcome(nxt, True, bool(counters[MACRO_ACCEPTED]), bool(counters[MACRO_ACCEPTED]),
                       bool(counters[MICRO_ACCEPTED]), int(counters[BIASED_ACCEPTED]))


def mm_step_indirect(state: ExtendedState, tables, params: SamplerParams, model, rc, rng) -> StepOutcome:
    """One step of the micro-macro chain with indirect reconstruction on the extended space."""
    if tables.log_mu0(state.z) == -math.inf:
        raise InvariantError(f"macroscopic density vanishes at the current state z={state.z}")
    return _step("indirect", state, tables, params, model, rc, rng)


def mm_step_direct(state: ExtendedState, tables, params: SamplerParams, model, rc, rng) -> StepOutcome:
    """One step of the micro-macro chain with direct reconstruction (``z = xi(x)`` throughout)."""
    _check_direct(model)
    if tables.log_mu0(state.z) == -math.inf:
        raise InvariantError(f"macroscopic density vanishes at the current state z={state.z}")
    return _step("direct", state, tables, params, model, rc, rng)


# --------------------------------------------------------------------------
# chain drivers

_WARM = set()


def _warm_up(method, model, rc, tables, params):
    """Compile the loop for this model/coordinate pair outside the timed region."""
    key = (method, type(model), type(rc) if rc is not None else None)
    if key in _WARM:
        return
    x0 = model.node_state(0.5 * (tables.z_min + tables.z_max)) if tables is not None else model.node_state(0.0)
    nn, nu = _noise_dims(method, model, int(params.K))
    rng = np.random.default_rng(0)
    _run_block(method, model, rc, tables, params, x0, np.array([rc.value(x0) if rc else 0.0]),
               rng.standard_normal((1, nn)), rng.random((1, nu)), np.empty((1, model.dim)), np.empty(1),
               np.zeros(6, dtype=np.int64))
    _WARM.add(key)


def _drive(method, model, rc, tables, params, state, rng, block):
    N = int(params.N)
    d = model.dim
    xs = np.empty((N, d))
    zs = np.empty(N)
    x = state.x.copy()
    zbox = np.array([state.z])
    counters = np.zeros(6, dtype=np.int64)
    nn, nu = _noise_dims(method, model, int(params.K))
    _warm_up(method, model, rc, tables, params)
    t0 = time.perf_counter()
    for start in range(0, N, block):
        stop = min(N, start + block)
        normals = rng.standard_normal((stop - start, nn))
        unif = rng.random((stop - start, nu))
        _run_block(method, model, rc, tables, params, x, zbox, normals, unif, xs[start:stop], zs[start:stop],
                   counters)
    runtime = time.perf_counter() - t0
    final = ExtendedState(x, float(zbox[0]))
    return xs, zs, dict(zip(COUNTER_NAMES, (int(c) for c in counters))), runtime, final


def run_mala(model, x0, params: SamplerParams, rng, rc=None, block=BLOCK) -> ChainResult:
    """Plain MALA chain of ``params.N`` steps with step ``params.dt_micro``.

    When ``rc`` is given, ``zs`` holds ``xi`` along the chain.
    """
    state = ExtendedState(model._coerce(x0).copy(), 0.0)
    xs, _, counters, runtime, final = _drive("mala", model, None, None, params, state, rng, block)
    if rc is not None:
        zs = rc_trace(rc, xs)
    else:
        zs = np.full(xs.shape[0], np.nan)
    return ChainResult(xs, zs, counters, runtime, final, {"sampler": "mala"})


@nb.njit(nogil=True)
def _rc_trace(rc, rcp, xs, out):
    g = np.empty(xs.shape[1])
    for i in range(xs.shape[0]):
        out[i], _ = rc(xs[i], rcp, g)


def rc_trace(rc, xs):
    """Reaction coordinate along an ``(N, d)`` trace."""
    out = np.empty(xs.shape[0])
    _rc_trace(rc.kernel, rc.params, np.ascontiguousarray(xs), out)
    return out


def run_mm(model, rc, tables, params: SamplerParams, x0, rng, method="indirect", block=BLOCK) -> ChainResult:
    """Micro-macro chain of ``params.N`` steps started at ``(x0, xi(x0))``.

    ``method`` is ``"indirect"`` or ``"direct"``. Every step emits one sample,
    rejections repeat the current one.
    """
    if method == "direct":
        _check_direct(model)
    elif method != "indirect":
        raise ValueError(f"unknown micro-macro variant {method!r}")
    state = initial_state(model, rc, x0)
    if tables.log_mu0(state.z) == -math.inf:
        raise InvariantError(f"initial reaction coordinate {state.z} lies outside the table grid")
    xs, zs, counters, runtime, final = _drive(method, model, rc, tables, params, state, rng, block)
    return ChainResult(xs, zs, counters, runtime, final, {"sampler": f"mm_{method}"})
