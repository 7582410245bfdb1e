"""Potential energy models and reaction coordinates.

Every model and reaction coordinate is a thin Python object wrapping a pair of
numba-compiled functions with a fixed calling convention, so that the chain
drivers in :mod:`micromacro.kernels` can be compiled against any of them:

``energy_grad(x, p, g) -> float``
    Potential energy at ``x``; writes the gradient into ``g``. Returns ``inf``
    outside the admissible domain instead of raising.
``rc(x, p, g) -> (value, laplacian)``
    Reaction coordinate value and Laplacian; writes the gradient into ``g``.

``p`` is a float64 parameter vector owned by the model instance.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

__all__ = [
    "DomainError",
    "PotentialModel",
    "ThreeAtomModel",
    "AlanineModel",
    "DoubleWellModel",
    "GaussianModel",
    "ReactionCoordinate",
    "ThetaRC",
    "CoordinateRC",
    "psi_rc",
    "identity_rc",
    "make_model",
    "make_rc",
    "MODEL_NAMES",
]

THREE_ATOM_K = 208.0 / 2.0
THREE_ATOM_DELTA = 0.3838


class DomainError(ValueError):
    """Configuration outside the admissible domain of a model."""


# --------------------------------------------------------------------------
# compiled kernels

@nb.njit(cache=True, nogil=True)
def _three_atom_energy_grad(x, p, g):
    eps = p[0]
    xa, xc, yc = x[0], x[1], x[2]
    r2 = xc * xc + yc * yc
    if not r2 > 0.0:
        g[:] = 0.0
        return np.inf
    r = math.sqrt(r2)
    u = math.atan2(yc, xc) - 0.5 * math.pi
    w = u * u - THREE_ATOM_DELTA * THREE_ATOM_DELTA
    energy = ((xa - 1.0) ** 2 + (r - 1.0) ** 2) / (2.0 * eps) + THREE_ATOM_K * w * w
    dtheta = 4.0 * THREE_ATOM_K * w * u
    dr = (r - 1.0) / eps
    g[0] = (xa - 1.0) / eps
    g[1] = dr * xc / r - dtheta * yc / r2
    g[2] = dr * yc / r + dtheta * xc / r2
    return energy


@nb.njit(cache=True, nogil=True)
def _alanine_energy_grad(x, p, g):
    # p = (k_CC, r_CC, k_CN, r_CN, k_CCN, th_CCN, k_CNC, th_CNC, k_phi, k_psi)
    if not (x[0] > 0.0 and x[1] > 0.0):
        g[:] = 0.0
        return np.inf
    energy = 0.0
    for i in range(4):
        k = p[2 * i]
        d = x[i] - p[2 * i + 1]
        energy += 0.5 * k * d * d
        g[i] = k * d
    for i in range(4, 6):
        k = p[4 + i]
        energy += k * (1.0 + math.cos(x[i] + math.pi))
        g[i] = -k * math.sin(x[i] + math.pi)
    return energy


@nb.njit(cache=True, nogil=True)
def _double_well_energy_grad(x, p, g):
    h = p[0]
    s = x[0] * x[0] - 1.0
    g[0] = 4.0 * h * x[0] * s
    return h * s * s


@nb.njit(cache=True, nogil=True)
def _gaussian_energy_grad(x, p, g):
    energy = 0.0
    for i in range(x.size):
        energy += 0.5 * x[i] * x[i]
        g[i] = x[i]
    return energy


@nb.njit(cache=True, nogil=True)
def _theta_rc(x, p, g):
    xc, yc = x[1], x[2]
    r2 = xc * xc + yc * yc
    g[0] = 0.0
    if not r2 > 0.0:
        g[1] = 0.0
        g[2] = 0.0
        return np.nan, 0.0
    g[1] = -yc / r2
    g[2] = xc / r2
    return math.atan2(yc, xc), 0.0


@nb.njit(cache=True, nogil=True)
def _coordinate_rc(x, p, g):
    i = int(p[0])
    g[:] = 0.0
    g[i] = 1.0
    return x[i], 0.0


# direct reconstruction: draw(z, p, beta, noise, out) writes a configuration on
# the level set of z; log_density(x, z, p, beta) is the proposal log-density of x
# with respect to the measure |grad xi|^-1 dsigma on that level set.

@nb.njit(cache=True, nogil=True)
def _three_atom_direct_draw(z, p, beta, noise, out):
    s = math.sqrt(p[0] / beta)
    r = 1.0 + s * noise[1]
    out[0] = 1.0 + s * noise[0]
    out[1] = r * math.cos(z)
    out[2] = r * math.sin(z)
    # r <= 0 leaves the chart; the caller rejects it
    return r > 0.0


@nb.njit(cache=True, nogil=True)
def _three_atom_direct_log_density(x, z, p, beta):
    eps = p[0]
    r = math.sqrt(x[1] * x[1] + x[2] * x[2])
    return -beta * ((x[0] - 1.0) ** 2 + (r - 1.0) ** 2) / (2.0 * eps) - math.log(r)


@nb.njit(cache=True, nogil=True)
def _point_direct_draw(z, p, beta, noise, out):
    out[0] = z
    return True


@nb.njit(cache=True, nogil=True)
def _point_direct_log_density(x, z, p, beta):
    return 0.0


# --------------------------------------------------------------------------
# models

class PotentialModel:
    """Base class: a potential ``V`` on ``R^d`` backed by a compiled kernel.

    Subclasses set ``dim``, ``params`` and ``energy_grad_kernel`` and may
    override :meth:`check_domain`, :meth:`node_state` and :attr:`wells`.
    """

    name = "model"
    dim = 0
    energy_grad_kernel = None
    params: np.ndarray

    def check_domain(self, x):
        pass

    def _coerce(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DomainError(f"{self.name}: expected a vector of length {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self.name}: non-finite coordinates {x}")
        self.check_domain(x)
        return x

    def energy_and_gradient(self, x):
        x = self._coerce(x)
        g = np.empty(self.dim)
        e = self.energy_grad_kernel(x, self.params, g)
        if not np.isfinite(e):
            raise DomainError(f"{self.name}: non-finite energy at {x}")
        return e, g

    def energy(self, x) -> float:
        return self.energy_and_gradient(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.energy_and_gradient(x)[1]

    def node_state(self, z: float) -> np.ndarray:
        """Configuration with reaction coordinate ``z`` used to start node chains."""
        raise NotImplementedError

    @property
    def wells(self) -> dict:
        return {}

    # direct reconstruction is optional; see ThreeAtomModel
    supports_direct = False
    direct_draw_kernel = None
    direct_log_density_kernel = None
    direct_noise_dim = 0

    def observables(self, xs: np.ndarray) -> dict:
        """Named scalar observables evaluated on an ``(N, d)`` chain."""
        return {f"x{i}": xs[:, i] for i in range(self.dim)}


class ThreeAtomModel(PotentialModel):
    """Planar three-atom molecule with a stiff bond pair and a bimodal angle.

    State layout is ``(x_a, x_c, y_c)``; ``epsilon`` sets the stiffness of both
    bonds.
    """

    name = "three_atom"
    dim = 3
    energy_grad_kernel = staticmethod(_three_atom_energy_grad)
    supports_direct = True
    direct_draw_kernel = staticmethod(_three_atom_direct_draw)
    direct_log_density_kernel = staticmethod(_three_atom_direct_log_density)
    direct_noise_dim = 2

    def __init__(self, epsilon: float = 1e-3):
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self.params = np.array([self.epsilon])

    def check_domain(self, x):
        if x[1] == 0.0 and x[2] == 0.0:
            raise DomainError("three_atom: r_c = 0 is outside the domain")

    def node_state(self, z):
        return np.array([1.0, math.cos(z), math.sin(z)])

    @property
    def wells(self):
        return {
            "left": self.node_state(0.5 * math.pi - THREE_ATOM_DELTA),
            "right": self.node_state(0.5 * math.pi + THREE_ATOM_DELTA),
        }

    def observables(self, xs):
        return {
            "theta": np.arctan2(xs[:, 2], xs[:, 1]),
            "x_a": xs[:, 0],
            "r_c": np.hypot(xs[:, 1], xs[:, 2]),
        }

    @staticmethod
    def free_energy(theta):
        """Exact free energy of the angle (up to an additive constant)."""
        u = np.asarray(theta) - 0.5 * np.pi
        return THREE_ATOM_K * (u * u - THREE_ATOM_DELTA**2) ** 2

    @staticmethod
    def drift(theta):
        """Exact effective drift ``-A'(theta)`` of the angle."""
        u = np.asarray(theta) - 0.5 * np.pi
        return -4.0 * THREE_ATOM_K * (u * u - THREE_ATOM_DELTA**2) * u


ALANINE_TERMS = {
    # name: (stiffness, equilibrium)
    "r_CC": (1.17e6, 1.515),
    "r_CN": (1.147e6, 1.335),
    "theta_CCN": (2.68e5, math.radians(113.9)),
    "theta_CNC": (1.84e5, math.radians(117.6)),
    "phi": (3.98e4, None),
    "psi": (2.93e3, None),
}


class AlanineModel(PotentialModel):
    """Bonded-only alanine-dipeptide energy in six internal coordinates.

    Coordinates are ``(r_CC, r_CN, theta_CCN, theta_CNC, phi, psi)``, one per
    energy term; angles are in radians.
    """

    name = "alanine"
    dim = 6
    energy_grad_kernel = staticmethod(_alanine_energy_grad)
    coordinate_names = tuple(ALANINE_TERMS)

    def __init__(self):
        k = [v[0] for v in ALANINE_TERMS.values()]
        eq = [v[1] for v in ALANINE_TERMS.values()]
        self.params = np.array([k[0], eq[0], k[1], eq[1], k[2], eq[2], k[3], eq[3], k[4], k[5]])
        self.equilibrium = np.array(eq[:4] + [0.0, 0.0])

    def check_domain(self, x):
        if not (x[0] > 0 and x[1] > 0):
            raise DomainError("alanine: bond lengths must be positive")

    def node_state(self, z):
        x = self.equilibrium.copy()
        x[5] = z
        return x

    @property
    def wells(self):
        return {"equilibrium": self.equilibrium.copy()}

    def observables(self, xs):
        out = {name: xs[:, i] for i, name in enumerate(self.coordinate_names)}
        # torsions are only wrapped for reporting
        for name in ("phi", "psi"):
            out[name] = wrap_angle(out[name])
        return out

    @staticmethod
    def psi_free_energy(psi):
        return ALANINE_TERMS["psi"][0] * (1.0 - np.cos(psi))

    @staticmethod
    def psi_drift(psi):
        return -ALANINE_TERMS["psi"][0] * np.sin(psi)


def wrap_angle(a):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2 * np.pi)


class DoubleWellModel(PotentialModel):
    """``V(x) = h (x^2 - 1)^2`` on the real line."""

    name = "double_well_1d"
    dim = 1
    energy_grad_kernel = staticmethod(_double_well_energy_grad)
    # identity reaction coordinate only: the level set is a single point
    supports_direct = True
    direct_draw_kernel = staticmethod(_point_direct_draw)
    direct_log_density_kernel = staticmethod(_point_direct_log_density)
    direct_noise_dim = 1

    def __init__(self, h: float = 1.0):
        self.h = float(h)
        self.params = np.array([self.h])

    def node_state(self, z):
        return np.array([float(z)])

    @property
    def wells(self):
        return {"left": np.array([-1.0]), "right": np.array([1.0])}

    def observables(self, xs):
        return {"x": xs[:, 0]}

    def free_energy(self, z):
        z = np.asarray(z)
        return self.h * (z * z - 1.0) ** 2

    def drift(self, z):
        z = np.asarray(z)
        return -4.0 * self.h * z * (z * z - 1.0)


class GaussianModel(PotentialModel):
    """Standard Gaussian potential ``|x|^2 / 2`` (sanity checks)."""

    name = "gaussian"
    energy_grad_kernel = staticmethod(_gaussian_energy_grad)

    def __init__(self, dim: int = 1):
        self.dim = int(dim)
        self.params = np.zeros(1)

    def node_state(self, z):
        x = np.zeros(self.dim)
        x[0] = z
        return x

    @property
    def wells(self):
        return {"origin": np.zeros(self.dim)}


# --------------------------------------------------------------------------
# reaction coordinates (n = 1)

class ReactionCoordinate:
    """Scalar reaction coordinate ``xi: R^d -> R`` backed by a compiled kernel."""

    name = "rc"
    kernel = None
    params: np.ndarray

    def evaluate(self, x):
        """Return ``(value, gradient, laplacian)`` at ``x``."""
        x = np.asarray(x, dtype=np.float64)
        g = np.empty(x.size)
        value, lap = self.kernel(x, self.params, g)
        if not np.isfinite(value):
            raise DomainError(f"{self.name}: undefined at {x}")
        return value, g, lap

    def value(self, x) -> float:
        return self.evaluate(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x)[1]

    def laplacian(self, x) -> float:
        return self.evaluate(x)[2]

    def grad_norm_sq(self, x) -> float:
        g = self.gradient(x)
        return float(g @ g)

    __call__ = value


class ThetaRC(ReactionCoordinate):
    """Bond angle ``atan2(y_c, x_c)`` of the three-atom molecule."""

    name = "theta"
    kernel = staticmethod(_theta_rc)

    def __init__(self):
        self.params = np.zeros(1)

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x[1] == 0.0 and x[2] == 0.0:
            raise DomainError("theta: undefined at r_c = 0")
        return math.atan2(x[2], x[1])


class CoordinateRC(ReactionCoordinate):
    """Projection onto a single coordinate."""

    kernel = staticmethod(_coordinate_rc)

    def __init__(self, index: int, name: str | None = None):
        self.index = int(index)
        self.name = name or f"x{index}"
        self.params = np.array([float(index)])


def psi_rc():
    return CoordinateRC(5, "psi")


def identity_rc():
    return CoordinateRC(0, "identity")


MODEL_NAMES = ("three_atom", "alanine", "double_well_1d", "gaussian")


def make_model(name: str, epsilon: float = 1e-3, h: float = 1.0, dim: int = 1) -> PotentialModel:
    if name == "three_atom":
        return ThreeAtomModel(epsilon)
    if name == "alanine":
        return AlanineModel()
    if name == "double_well_1d":
        return DoubleWellModel(h)
    if name == "gaussian":
        return GaussianModel(dim)
    raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")


def make_rc(name: str) -> ReactionCoordinate:
    if name == "theta":
        return ThetaRC()
    if name == "psi":
        return psi_rc()
    if name in ("identity", "x0"):
        return identity_rc()
    raise ValueError(f"unknown reaction coordinate {name!r}")
