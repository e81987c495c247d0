"""Independent reference computations used as test oracles.

Nothing here imports the package; every formula is written out by hand.
"""

import math

import numpy as np


def rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


ELEMENTARY = {"X": rx, "Y": ry, "Z": rz}


def intrinsic(angles_xyz, order):
    """Intrinsic rotation: multiply elementary matrices left to right in ``order``."""
    R = np.eye(3)
    for axis in order:
        R = R @ ELEMENTARY[axis](angles_xyz["XYZ".index(axis)])
    return R


def chain_positions(root_pos, root_rot, offsets, local_rots):
    """Serial chain: joint k hangs off joint k-1."""
    positions, R = [np.asarray(root_pos, float) + offsets[0]], root_rot @ local_rots[0]
    for k in range(1, len(offsets)):
        positions.append(positions[-1] + R @ offsets[k])
        R = R @ local_rots[k]
    return np.array(positions)


def gram_schmidt(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    c1 = a / np.sqrt(a @ a)
    b = b - (b @ c1) * c1
    c2 = b / np.sqrt(b @ b)
    return np.column_stack([c1, c2, np.cross(c1, c2)])


def random_rotation(rng):
    """Uniform random rotation via QR of a Gaussian matrix with sign fix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def gaussian_kl_reference(mu, var):
    return 0.5 * sum(m * m + v - 1 - math.log(v) for m, v in zip(mu, var))


def central_difference(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g
