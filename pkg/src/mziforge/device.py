"""Transfer matrices of phase shifters, beam splitters and 2x2 MZIs.

The MZI is modelled as the stage product (input on the right)::

    T = S2 . diag(b_rt, b_rb) . P(theta) . S1 . diag(b_lt, b_lb) . P(phi)

with ``P(x) = diag(exp(i x), 1)`` acting on the top arm and
``S(r, t) = [[r, i t], [i t, r]]`` a directional coupler. Ideal couplers have
``r = t = 1/sqrt(2)``; unit betas mean a lossless device.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, RangeError, SingularityError

TWO_PI = 2.0 * math.pi
INV_SQRT2 = 1.0 / math.sqrt(2.0)

# Reference thermo-optic shifter: V_pi = 4.36 V, so K = pi / V_pi^2 (about 0.165 rad/V^2).
DEFAULT_V_PI = 4.36
# slack on the upper voltage bound so the rounded full-swing value (6.166 V) is accepted
VOLTAGE_SLACK = 1e-3


def wrap_phase(x: float) -> float:
    """Map a phase onto [0, 2*pi)."""
    y = math.fmod(x, TWO_PI)
    if y < 0.0:
        y += TWO_PI
    # fmod of a value just below a multiple of 2*pi can round up to 2*pi
    return 0.0 if y >= TWO_PI else y


@dataclass(frozen=True)
class PhasePair:
    theta: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise InvalidInputError("phases must be finite")
        object.__setattr__(self, "theta", wrap_phase(float(self.theta)))
        object.__setattr__(self, "phi", wrap_phase(float(self.phi)))


@dataclass(frozen=True)
class SplitterQuad:
    """Amplitude reflectance/transmittance of the input (r, t) and output (r2, t2) couplers.

    Energy conservation is deliberately not enforced: deviated couplers are
    sampled independently and only clamped to [0, 1].
    """

    r: float = INV_SQRT2
    t: float = INV_SQRT2
    r2: float = INV_SQRT2
    t2: float = INV_SQRT2

    def __post_init__(self):
        for name in ("r", "t", "r2", "t2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise InvalidInputError(f"splitter {name}={v!r} outside [0, 1]")

    @classmethod
    def ideal(cls) -> "SplitterQuad":
        return cls()

    @classmethod
    def clamped(cls, r: float, t: float, r2: float, t2: float) -> "SplitterQuad":
        return cls(*(min(1.0, max(0.0, float(v))) for v in (r, t, r2, t2)))


@dataclass(frozen=True)
class ArmLoss:
    """Amplitude attenuation on the top/bottom arm after the left (input) and right (output) coupler."""

    beta_lt: float = 1.0
    beta_lb: float = 1.0
    beta_rt: float = 1.0
    beta_rb: float = 1.0

    def __post_init__(self):
        for name in ("beta_lt", "beta_lb", "beta_rt", "beta_rb"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise InvalidInputError(f"{name}={v!r} must be positive and finite")

    @classmethod
    def uniform(cls, beta: float) -> "ArmLoss":
        return cls(beta, beta, beta, beta)


@dataclass(frozen=True)
class PhaseShifterSpec:
    """Thermo-optic phase shifter obeying Phi = k * V**2."""

    k: float = field(default=math.pi / DEFAULT_V_PI**2)

    def __post_init__(self):
        if not (math.isfinite(self.k) and self.k > 0.0):
            raise InvalidInputError(f"k={self.k!r} must be positive")

    @classmethod
    def from_v_pi(cls, v_pi: float) -> "PhaseShifterSpec":
        return cls(k=math.pi / v_pi**2)

    @property
    def v_pi(self) -> float:
        return math.sqrt(math.pi / self.k)

    @property
    def v_max(self) -> float:
        """Voltage giving a full 2*pi shift."""
        return math.sqrt(TWO_PI / self.k)


def _splitter(r, t):
    return np.array([[r, 1j * t], [1j * t, r]], dtype=np.complex128)


def _top_phase(x):
    return np.diag([np.exp(1j * x), 1.0 + 0j])


def mzi_transfer(
    phases: PhasePair,
    splitters: SplitterQuad | None = None,
    loss: ArmLoss | None = None,
) -> np.ndarray:
    """2x2 transfer matrix of a (possibly deviated, possibly lossy) MZI."""
    s = splitters or SplitterQuad()
    b = loss or ArmLoss()
    left = _splitter(s.r, s.t) @ np.diag([b.beta_lt, b.beta_lb])
    right = _splitter(s.r2, s.t2) @ np.diag([b.beta_rt, b.beta_rb])
    return right @ _top_phase(phases.theta) @ left @ _top_phase(phases.phi)


def mzi_transfer_batch(theta, phi, r=None, t=None, r2=None, t2=None, beta=None) -> np.ndarray:
    """Vectorized stage product for K MZIs; returns a (K, 2, 2) array.

    ``beta`` is either None (lossless) or a (K, 4) array ordered
    (lt, lb, rt, rb). Splitter arguments default to the ideal coupler.
    """
    theta = np.asarray(theta, dtype=np.float64)
    k = theta.shape[0]

    def _or_ideal(x):
        return np.full(k, INV_SQRT2) if x is None else np.asarray(x, dtype=np.float64)

    r, t, r2, t2 = (_or_ideal(x) for x in (r, t, r2, t2))
    if beta is None:
        beta = np.ones((k, 4))
    beta = np.asarray(beta, dtype=np.float64)

    def stack_splitter(rr, tt, bt, bb):
        m = np.empty((k, 2, 2), dtype=np.complex128)
        m[:, 0, 0] = rr * bt
        m[:, 0, 1] = 1j * tt * bb
        m[:, 1, 0] = 1j * tt * bt
        m[:, 1, 1] = rr * bb
        return m

    left = stack_splitter(r, t, beta[:, 0], beta[:, 1])
    right = stack_splitter(r2, t2, beta[:, 2], beta[:, 3])
    # P(theta) scales column 0 of `right`; P(phi) scales column 0 of the product.
    right[:, :, 0] *= np.exp(1j * theta)[:, None]
    out = right @ left
    out[:, :, 0] *= np.exp(1j * np.asarray(phi, dtype=np.float64))[:, None]
    return out


def mzi_first_order_delta(phases: PhasePair, d_theta: float, d_phi: float) -> np.ndarray:
    """Linearized change of the ideal MZI matrix for small phase errors."""
    th, ph = phases.theta, phases.phi
    e_t, e_p, e_tp = np.exp(1j * th), np.exp(1j * ph), np.exp(1j * (th + ph))
    d_dtheta = np.array([[0.5j * e_tp, -0.5 * e_t], [-0.5 * e_tp, -0.5j * e_t]])
    d_dphi = np.array([[0.5j * e_p * (e_t - 1.0), 0.0], [-0.5 * e_p * (e_t + 1.0), 0.0]])
    return d_dtheta * d_theta + d_dphi * d_phi


def phase_from_voltage(v: float, spec: PhaseShifterSpec | None = None) -> float:
    spec = spec or PhaseShifterSpec()
    if not (0.0 <= v <= spec.v_max + VOLTAGE_SLACK):
        raise RangeError(f"voltage {v!r} V outside [0, {spec.v_max:.6g}] V")
    return spec.k * v * v


def voltage_from_phase(phi: float, spec: PhaseShifterSpec | None = None) -> float:
    spec = spec or PhaseShifterSpec()
    if not (0.0 <= phi <= TWO_PI * (1.0 + 1e-12)):
        raise RangeError(f"phase {phi!r} rad outside [0, 2*pi]")
    return math.sqrt(phi / spec.k)


_ENTRY_NAMES = ("T11", "T12", "T21", "T22")


def relative_deviation_grid(k_factor: float, theta_grid, phi_grid) -> dict[str, np.ndarray]:
    """|dT_mn| / |T_mn| on a (theta, phi) grid for proportional phase errors d = K * phase.

    Returns one array per entry name, indexed ``[i_theta, j_phi]``.
    """
    th = np.asarray(theta_grid, dtype=np.float64)[:, None]
    ph = np.asarray(phi_grid, dtype=np.float64)[None, :]
    e_t, e_p, e_tp = np.exp(1j * th), np.exp(1j * ph), np.exp(1j * (th + ph))
    nominal = {
        "T11": 0.5 * e_p * (e_t - 1.0),
        "T12": 0.5j * (e_t + 1.0) * np.ones_like(ph),
        "T21": 0.5j * e_p * (e_t + 1.0),
        "T22": -0.5 * (e_t - 1.0) * np.ones_like(ph),
    }
    delta = {
        "T11": 0.5j * ((th + ph) * e_tp - ph * e_p),
        "T12": -0.5 * th * e_t * np.ones_like(ph),
        "T21": -0.5 * ((th + ph) * e_tp + ph * e_p),
        "T22": -0.5j * th * e_t * np.ones_like(ph),
    }
    out = {}
    for name in _ENTRY_NAMES:
        mod = np.abs(nominal[name])
        if np.any(mod < 1e-12):
            i, j = np.argwhere(mod < 1e-12)[0]
            raise SingularityError(
                f"|{name}| vanishes at theta={th[i, 0]:.6g}, phi={ph[0, j]:.6g}", entry=name
            )
        out[name] = abs(k_factor) * np.abs(delta[name]) / mod
    return out
