"""Small dense complex linear algebra.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. The SVD is a
one-sided (Hestenes) Jacobi iteration, which is accurate to a few ulps on the
matrix sizes used by photonic meshes (N <= 32).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

_JACOBI_TOL = 1e-15
_JACOBI_MAX_SWEEPS = 80


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D complex128 array (a copy, never a view)."""
    m = np.array(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} has non-finite entries")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    singular_values: np.ndarray
    v_h: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.singular_values.size
        return (self.u[:, :k] * self.singular_values) @ self.v_h[:k, :]


def _complete_basis(q: np.ndarray, m: int) -> np.ndarray:
    """Extend the orthonormal columns of ``q`` (m x r) to an m x m unitary."""
    cols = [q[:, j] for j in range(q.shape[1])]
    for e in np.eye(m, dtype=np.complex128):
        if len(cols) == m:
            break
        v = e.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for c in cols:
                v -= c * np.vdot(c, v)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            cols.append(v / norm)
    return np.stack(cols, axis=1)


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi on a tall (m >= n) matrix: returns (u_full, s, v)."""
    m, n = a.shape
    w = a.copy()
    v = np.eye(n, dtype=np.complex128)
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = np.vdot(w[:, p], w[:, p]).real
                beta = np.vdot(w[:, q], w[:, q]).real
                gamma = np.vdot(w[:, p], w[:, q])
                g = abs(gamma)
                if g == 0.0 or g <= _JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                phase = gamma / g
                zeta = (beta - alpha) / (2.0 * g)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                wp, wq = w[:, p].copy(), w[:, q] / phase
                w[:, p] = c * wp - s * wq
                w[:, q] = s * wp + c * wq
                vp, vq = v[:, p].copy(), v[:, q] / phase
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break

    s = np.linalg.norm(w, axis=0)
    order = np.argsort(-s, kind="stable")
    s, w, v = s[order], w[:, order], v[:, order]
    smax = s[0] if s.size else 0.0
    keep = s > max(smax, 1e-300) * 1e-13
    u_thin = w[:, keep] / s[keep]
    u = _complete_basis(u_thin, m)
    s = np.where(keep, s, 0.0)
    return u, s, v


def svd(a) -> SvdResult:
    """Full SVD ``a = u @ diag(s) @ v_h`` with ``s`` sorted descending.

    ``u`` is rows x rows and ``v_h`` is cols x cols; ``s`` has min(rows, cols)
    entries.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m >= n:
        u, s, v = _jacobi_tall(a)
        return SvdResult(u=u, singular_values=s, v_h=v.conj().T)
    u2, s, v2 = _jacobi_tall(a.conj().T)
    return SvdResult(u=v2, singular_values=s, v_h=u2.conj().T)


def unitarity_error(u) -> float:
    """Max absolute entry of ``u @ u^H - I``."""
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise InvalidInputError(f"unitarity check needs a square matrix, got shape {u.shape}")
    return float(np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))))


def dft2_shifted(image) -> np.ndarray:
    """Unnormalized 2-D DFT with the DC bin moved to index (H//2, W//2)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidInputError(f"image must be a non-empty 2-D array, got shape {img.shape}")
    return np.fft.fftshift(np.fft.fft2(img))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from the QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def matrix_to_json(a) -> dict:
    a = np.asarray(a, dtype=np.complex128)
    return {
        "rows": int(a.shape[0]),
        "cols": int(a.shape[1]),
        "re": a.real.tolist(),
        "im": a.imag.tolist(),
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    try:
        rows, cols = int(obj["rows"]), int(obj["cols"])
        re = np.asarray(obj["re"], dtype=np.float64)
        im = np.asarray(obj["im"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed matrix object: {exc}") from exc
    if re.shape != (rows, cols) or im.shape != (rows, cols):
        raise InvalidInputError(
            f"matrix declares {rows}x{cols} but re/im have shapes {re.shape}/{im.shape}"
        )
    return as_matrix(re + 1j * im)
