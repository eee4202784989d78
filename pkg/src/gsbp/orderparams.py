"""Rotation-invariant bond order parameters for periodic particle systems.

Neighbors are particles within a cutoff under the minimum-image convention in
a rectangular periodic box. For particle i with bonds r_ij (pointing from i
to j), the per-particle order parameter of degree l is

    C_l(i) = sqrt( 4 pi / (2l+1) * sum_m |q_lm(i)|^2 ),
    q_lm(i) = (1 / N_b(i)) * sum_{j in nb(i)} Y_lm(theta_ij, phi_ij),

which lies in [0, 1]: a single bond gives exactly 1 (spherical-harmonic
addition theorem) and decorrelated bond directions drive it toward 0.
Associated Legendre functions use the standard stable recurrence with the
Condon-Shortley phase; degrees up to l = 12 are supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "L_MAX",
    "NeighborList",
    "OrderParamError",
    "ParticleConfiguration",
    "assoc_legendre",
    "build_neighbor_list",
    "spherical_harmonic",
    "steinhardt",
]

L_MAX = 12


class OrderParamError(RuntimeError):
    pass


@dataclass
class ParticleConfiguration:
    positions: np.ndarray  # (nu, 3) inside the box
    box: np.ndarray  # (3,) periodic rectangular extents
    cutoff: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.box = np.asarray(self.box, dtype=float).reshape(3)
        self.cutoff = float(self.cutoff)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise OrderParamError("positions must have shape (nu, 3)")
        if self.positions.shape[0] < 2:
            raise OrderParamError("need at least two particles")
        if np.any(self.box <= 0):
            raise OrderParamError("box extents must be positive")
        if np.any(self.positions < 0) or np.any(self.positions > self.box):
            raise OrderParamError("positions must lie inside the box")
        if self.cutoff <= 0:
            raise OrderParamError("cutoff must be positive")
        if self.cutoff > 0.5 * float(self.box.min()):
            raise OrderParamError(
                "cutoff exceeds half the smallest box extent; minimum-image "
                "neighbor search would miss periodic images"
            )

    @property
    def nu(self):
        return self.positions.shape[0]


@dataclass
class NeighborList:
    neighbors: list  # per particle: int indices j with ||r_ij|| <= cutoff
    bonds: list  # per particle: (k, 3) minimum-image displacements i -> j


def build_neighbor_list(config):
    """O(nu^2) cutoff search with minimum-image displacements."""
    pos, box = config.positions, config.box
    dr = pos[None, :, :] - pos[:, None, :]  # r_ij = x_j - x_i
    dr -= box * np.round(dr / box)
    d = np.sqrt(np.sum(dr * dr, axis=-1))
    np.fill_diagonal(d, np.inf)
    neighbors, bonds = [], []
    for i in range(config.nu):
        idx = np.nonzero(d[i] <= config.cutoff)[0]
        neighbors.append(idx)
        bonds.append(dr[i, idx])
    return NeighborList(neighbors, bonds)


def assoc_legendre(l, m, x):
    """P_l^m(x) for 0 <= m <= l <= L_MAX, |x| <= 1, with Condon-Shortley
    phase: P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}, then the upward l
    recurrence (l-m) P_l^m = (2l-1) x P_{l-1}^m - (l+m-1) P_{l-2}^m."""
    if not (0 <= m <= l <= L_MAX):
        raise OrderParamError(f"need 0 <= m <= l <= {L_MAX}, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise OrderParamError("argument must lie in [-1, 1]")
    pmm = np.ones_like(x)
    if m > 0:
        odd = math.prod(range(1, 2 * m, 2))
        pmm = (-1.0) ** m * odd * (1.0 - x * x) ** (m / 2.0)
    if l == m:
        return pmm
    pm1 = (2.0 * m + 1.0) * x * pmm
    if l == m + 1:
        return pm1
    for ll in range(m + 2, l + 1):
        pmm, pm1 = pm1, ((2.0 * ll - 1.0) * x * pm1 - (ll + m - 1.0) * pmm) / (ll - m)
    return pm1


def spherical_harmonic(l, m, theta, phi):
    """Orthonormal complex Y_lm(theta polar, phi azimuthal); negative orders
    via Y_{l,-m} = (-1)^m conj(Y_lm)."""
    if abs(m) > l or l > L_MAX:
        raise OrderParamError(f"need |m| <= l <= {L_MAX}, got l={l}, m={m}")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ma = abs(m)
    norm = math.sqrt(
        (2 * l + 1) / (4.0 * math.pi) * math.factorial(l - ma) / math.factorial(l + ma)
    )
    y = norm * assoc_legendre(l, ma, np.cos(theta)) * np.exp(1j * ma * phi)
    if m < 0:
        y = (-1.0) ** ma * np.conj(y)
    return y


def steinhardt(config, l):
    """Per-particle C_l and its ensemble mean. Every particle must have at
    least one neighbor within the cutoff."""
    if not (0 <= l <= L_MAX):
        raise OrderParamError(f"need 0 <= l <= {L_MAX}, got l={l}")
    nl = build_neighbor_list(config)
    isolated = [i for i, nb in enumerate(nl.neighbors) if nb.size == 0]
    if isolated:
        raise OrderParamError(f"particles with no neighbors within cutoff: {isolated}")
    C = np.empty(config.nu)
    for i in range(config.nu):
        b = nl.bonds[i]
        r = np.sqrt(np.sum(b * b, axis=1))
        theta = np.arccos(np.clip(b[:, 2] / r, -1.0, 1.0))
        phi = np.arctan2(b[:, 1], b[:, 0])
        # m < 0 contributes |q_{l,-m}| = |q_lm|, so fold it into a factor 2
        s = np.abs(np.mean(spherical_harmonic(l, 0, theta, phi))) ** 2
        for m in range(1, l + 1):
            s += 2.0 * np.abs(np.mean(spherical_harmonic(l, m, theta, phi))) ** 2
        C[i] = math.sqrt(4.0 * math.pi / (2 * l + 1) * s)
    return C, float(C.mean())
