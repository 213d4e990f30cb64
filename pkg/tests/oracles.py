"""Independent reference implementations used only by the tests.

These deliberately avoid the package's own code paths: closed-form MZI
entries written out term by term, a direct O(N^4) DFT, a full-matrix mesh
product, and a plain complex MLP forward pass.
"""
import cmath
import math

import numpy as np


def mzi_ideal(theta, phi):
    """Ideal MZI in half-angle form."""
    g = 1j * cmath.exp(0.5j * theta)
    s, c = math.sin(theta / 2), math.cos(theta / 2)
    e = cmath.exp(1j * phi)
    return np.array([[g * e * s, g * c], [g * e * c, -g * s]])


def mzi_deviated(theta, phi, r, t, r2, t2):
    """MZI with input coupler (r, t) and output coupler (r2, t2)."""
    etp, ep, et = cmath.exp(1j * (theta + phi)), cmath.exp(1j * phi), cmath.exp(1j * theta)
    return np.array(
        [
            [r * r2 * etp - t * t2 * ep, 1j * r2 * t * et + 1j * t2 * r],
            [1j * t2 * r * etp + 1j * t * r2 * ep, -t * t2 * et + r * r2],
        ]
    )


def mzi_lossy(theta, phi, b_lt, b_lb, b_rt, b_rb):
    """Ideal couplers with per-arm amplitude attenuation (typo-corrected entries)."""
    etp, ep, et = cmath.exp(1j * (theta + phi)), cmath.exp(1j * phi), cmath.exp(1j * theta)
    return 0.5 * np.array(
        [
            [b_rt * b_lt * etp - b_rb * b_lt * ep, 1j * b_rt * b_lb * et + 1j * b_rb * b_lb],
            [1j * b_rt * b_lt * etp + 1j * b_rb * b_lt * ep, -b_rt * b_lb * et + b_rb * b_lb],
        ]
    )


def dft2_direct(img):
    """Unnormalized 2-D DFT by explicit summation, DC moved to (H//2, W//2)."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    out = np.zeros((h, w), dtype=complex)
    for ky in range(h):
        for kx in range(w):
            acc = 0j
            for y in range(h):
                for x in range(w):
                    acc += img[y, x] * cmath.exp(-2j * math.pi * (ky * y / h + kx * x / w))
            out[ky, kx] = acc
    return np.roll(out, (h // 2, w // 2), axis=(0, 1))


def mesh_matrix_full(plan):
    """Mesh unitary built from full n x n embeddings of each closed-form MZI."""
    n = plan.n
    u = np.eye(n, dtype=complex)
    for nd in plan.nodes:
        s = nd.splitters
        b = nd.loss
        if (b.beta_lt, b.beta_lb, b.beta_rt, b.beta_rb) == (1.0, 1.0, 1.0, 1.0):
            blk = mzi_deviated(nd.phases.theta, nd.phases.phi, s.r, s.t, s.r2, s.t2)
        else:
            blk = mzi_lossy(nd.phases.theta, nd.phases.phi, b.beta_lt, b.beta_lb, b.beta_rt, b.beta_rb)
        e = np.eye(n, dtype=complex)
        m = nd.top_mode
        e[m : m + 2, m : m + 2] = blk
        u = e @ u
    return np.diag(np.exp(1j * np.array(plan.phase_screen))) @ u


def mlp_forward(weights, x):
    """Complex MLP: modulus-softplus between layers, |y|^2 then log-softmax."""
    h = np.asarray(x, dtype=complex)
    for i, w in enumerate(weights):
        h = np.asarray(w) @ h
        if i < len(weights) - 1:
            out = np.empty_like(h)
            for j, y in enumerate(h):
                a = abs(y)
                sp = math.log1p(math.exp(-a)) + a
                out[j] = sp * y / a if a > 0 else math.log(2.0)
            h = out
    inten = np.abs(h) ** 2
    m = inten.max()
    return inten - m - math.log(sum(math.exp(v - m) for v in inten))


def rvd_direct(u, ref, eps=1e-9):
    total = 0.0
    for a, b in zip(np.ravel(u), np.ravel(ref)):
        if abs(b) >= eps:
            total += abs(a - b) / abs(b)
    return total
