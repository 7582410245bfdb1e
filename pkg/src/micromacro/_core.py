"""Compiled primitives shared by the samplers and the table builders.

Conventions: a target density is written ``exp(-beta U(x))``; MALA proposes
``y = x - dt grad U(x) + sqrt(2 dt / beta) eta`` with ``eta`` standard normal.
"""
import math

import numba as nb
import numpy as np

_SNAP = 1e-9


@nb.njit(cache=True, nogil=True)
def mala_log_acceptance(x, y, grad_x, grad_y, u_x, u_y, dt, beta):
    """Log Metropolis-Hastings ratio of a MALA move ``x -> y`` on ``exp(-beta U)``."""
    if not math.isfinite(u_y):
        return -np.inf
    fwd = 0.0
    bwd = 0.0
    for i in range(x.size):
        a = y[i] - x[i] + dt * grad_x[i]
        b = x[i] - y[i] + dt * grad_y[i]
        fwd += a * a
        bwd += b * b
    return -beta * (u_y - u_x) - beta * (bwd - fwd) / (4.0 * dt)


@nb.njit(nogil=True)
def biased_energy_grad(energy_grad, rc, p, rcp, x, z, lam, g, g_rc):
    """``V(x) + lam/2 (xi(x) - z)^2`` and its gradient (into ``g``).

    Returns ``(biased energy, V(x), xi(x))``.
    """
    v = energy_grad(x, p, g)
    xi, _ = rc(x, rcp, g_rc)
    r = xi - z
    for i in range(x.size):
        g[i] += lam * r * g_rc[i]
    return v + 0.5 * lam * r * r, v, xi


@nb.njit(cache=True, nogil=True)
def interp(z, z_min, z_max, values):
    """Clamped linear interpolation on a uniform grid; returns ``(value, out_of_range)``."""
    n = values.size
    if z <= z_min:
        return values[0], z < z_min
    if z >= z_max:
        return values[n - 1], z > z_max
    t = (z - z_min) * (n - 1) / (z_max - z_min)
    j = int(t)
    f = t - j
    # snap to nodes so node values come back exactly
    if f < _SNAP:
        return values[j], False
    if f > 1.0 - _SNAP:
        return values[j + 1], False
    return values[j] + f * (values[j + 1] - values[j]), False


@nb.njit(cache=True, nogil=True)
def interp_many(zs, z_min, z_max, values, out):
    misses = 0
    for i in range(zs.size):
        out[i], miss = interp(zs[i], z_min, z_max, values)
        misses += miss
    return misses


@nb.njit(cache=True, nogil=True)
def log_mu0(z, z_min, z_max, free_energy, beta, zero_off_grid):
    a, miss = interp(z, z_min, z_max, free_energy)
    if miss and zero_off_grid:
        return -np.inf
    return -beta * a


@nb.njit(cache=True, nogil=True)
def macro_mean_sd(z, z_min, z_max, drift, diffusion, dt, beta):
    """Mean and standard deviation of the Euler-Maruyama macroscopic proposal."""
    b, _ = interp(z, z_min, z_max, drift)
    s, _ = interp(z, z_min, z_max, diffusion)
    return z + b * dt, s * math.sqrt(2.0 * dt / beta)


@nb.njit(cache=True, nogil=True)
def log_q0(z_next, z, z_min, z_max, drift, diffusion, dt, beta):
    mean, sd = macro_mean_sd(z, z_min, z_max, drift, diffusion, dt, beta)
    r = (z_next - mean) / sd
    return -0.5 * r * r - math.log(sd) - 0.5 * math.log(2.0 * math.pi)


@nb.njit(cache=True, nogil=True)
def log_alpha_cg(log_mu_new, log_mu_old, log_q_back, log_q_fwd):
    if log_mu_new == -np.inf:
        return -np.inf
    r = log_mu_new + log_q_back - log_mu_old - log_q_fwd
    return min(0.0, r)


@nb.njit(cache=True, nogil=True)
def log_alpha_f_indirect(log_mu_z, log_mu_znew, n_z, n_znew):
    r = log_mu_z - log_mu_znew + math.log(n_znew) - math.log(n_z)
    return min(0.0, r)
