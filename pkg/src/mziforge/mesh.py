"""Rectangular (Clements) MZI meshes.

A mesh on ``n`` modes has ``n`` columns ("layers"); layer ``l`` holds MZIs on
mode pairs ``(m, m+1)`` with ``m = l % 2, l % 2 + 2, ...``. Each MZI covers two
horizontally adjacent cells of an ``(n-1) x 2n`` unit grid: cell
``(2l, m)`` (input half) and ``(2l + 1, m)`` (output half).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .device import ArmLoss, PhasePair, SplitterQuad, mzi_transfer_batch
from .errors import InvalidInputError
from .linalg import as_matrix, unitarity_error

RVD_EPS = 1e-9


class NonUnitaryError(InvalidInputError):
    def __init__(self, error: float):
        super().__init__(f"matrix is not unitary (unitarity error {error:.3e})")
        self.error = error


@dataclass(frozen=True)
class MziNode:
    layer: int
    top_mode: int
    phases: PhasePair
    splitters: SplitterQuad = field(default_factory=SplitterQuad)
    loss: ArmLoss = field(default_factory=ArmLoss)
    grid_x: int = 0
    grid_y: int = 0

    @property
    def cells(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """(x, y) of the input-side and output-side grid cells."""
        return (self.grid_x, self.grid_y), (self.grid_x + 1, self.grid_y)


@dataclass(frozen=True)
class MeshPlan:
    n: int
    nodes: tuple[MziNode, ...]
    phase_screen: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "phase_screen", tuple(float(p) for p in self.phase_screen))
        if len(self.phase_screen) != self.n:
            raise InvalidInputError(
                f"phase screen has {len(self.phase_screen)} entries for a {self.n}-mode mesh"
            )
        for node in self.nodes:
            if not 0 <= node.top_mode <= self.n - 2:
                raise InvalidInputError(f"node acts on modes {node.top_mode},{node.top_mode + 1} of {self.n}")

    def with_nodes(self, nodes: Iterable[MziNode]) -> "MeshPlan":
        return replace(self, nodes=tuple(nodes))

    def node_arrays(self) -> dict[str, np.ndarray]:
        """Per-node parameters as flat arrays, in node order."""
        nodes = self.nodes
        return {
            "top_mode": np.array([nd.top_mode for nd in nodes], dtype=np.int64),
            "theta": np.array([nd.phases.theta for nd in nodes]),
            "phi": np.array([nd.phases.phi for nd in nodes]),
            "r": np.array([nd.splitters.r for nd in nodes]),
            "t": np.array([nd.splitters.t for nd in nodes]),
            "r2": np.array([nd.splitters.r2 for nd in nodes]),
            "t2": np.array([nd.splitters.t2 for nd in nodes]),
            "beta": np.array(
                [[nd.loss.beta_lt, nd.loss.beta_lb, nd.loss.beta_rt, nd.loss.beta_rb] for nd in nodes]
            ).reshape(len(nodes), 4),
        }


@dataclass(frozen=True)
class DiagonalStage:
    scalars: tuple[float, ...]
    gain: float

    @property
    def singular_values(self) -> np.ndarray:
        return self.gain * np.asarray(self.scalars)

    def attenuator_angles(self) -> np.ndarray:
        """Internal MZI phase realizing each amplitude factor, |T| = sin(theta / 2)."""
        return 2.0 * np.arcsin(np.clip(self.scalars, 0.0, 1.0))


def apply_nodes(matrix: np.ndarray, top_modes: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Left-multiply ``matrix`` in place by the embedded 2x2 ``blocks``, in order."""
    for m, b in zip(top_modes, blocks):
        rows = matrix[m : m + 2, :]
        matrix[m : m + 2, :] = b @ rows
    return matrix


def mesh_to_unitary(plan: MeshPlan) -> np.ndarray:
    """Matrix realized by the mesh: every node in order, then the output phase screen."""
    out = np.eye(plan.n, dtype=np.complex128)
    if plan.nodes:
        a = plan.node_arrays()
        blocks = mzi_transfer_batch(a["theta"], a["phi"], a["r"], a["t"], a["r2"], a["t2"], a["beta"])
        apply_nodes(out, a["top_mode"], blocks)
    return np.exp(1j * np.asarray(plan.phase_screen))[:, None] * out


def grid_layout(n: int) -> list[tuple[int, int, int, int]]:
    """Canonical node slots ``(layer, top_mode, grid_x, grid_y)`` of an n-mode mesh.

    The grid is ``n - 1`` units high and ``2n`` units wide.
    """
    if n < 1:
        raise InvalidInputError(f"mesh needs at least one mode, got {n}")
    return [(layer, m, 2 * layer, m) for layer in range(n) for m in range(layer % 2, n - 1, 2)]


def grid_shape(n: int) -> tuple[int, int]:
    """(height, width) of the unit grid for an n-mode mesh."""
    return (n - 1, 2 * n)


def _mzi(theta: float, phi: float) -> np.ndarray:
    return mzi_transfer_batch(np.array([theta]), np.array([phi]))[0]


def _snap(x: complex) -> complex:
    # round-off residue of an already-nulled entry; keeps degenerate targets (e.g. I) noise-free
    return 0j if abs(x) < 1e-13 else x


def _schedule(ops: Sequence[tuple[int, float, float]], n: int) -> list[int]:
    """Earliest layer for each op (in application order) honouring mode parity."""
    last = [-1] * n
    layers = []
    for m, _, _ in ops:
        layer = max(last[m], last[m + 1]) + 1
        if layer % 2 != m % 2:
            layer += 1
        last[m] = last[m + 1] = layer
        layers.append(layer)
    return layers


def clements_decompose(u, tol: float = 1e-8) -> MeshPlan:
    """Factor a unitary into a rectangular MZI mesh plus an output phase screen."""
    u = as_matrix(u, "unitary")
    n = u.shape[0]
    if u.shape[1] != n:
        raise InvalidInputError(f"unitary must be square, got {u.shape}")
    err = unitarity_error(u)
    if err > 1e-8:
        raise NonUnitaryError(err)
    if n == 1:
        return MeshPlan(n=1, nodes=(), phase_screen=(float(np.angle(u[0, 0])),))

    w = np.array(u)
    right_ops: list[tuple[int, float, float]] = []
    left_ops: list[tuple[int, float, float]] = []
    for i in range(1, n):
        if i % 2 == 1:
            for j in range(i):
                row, m = n - 1 - j, i - 1 - j
                a, b = _snap(w[row, m]), _snap(w[row, m + 1])
                theta = math.pi if a == 0 and b == 0 else 2.0 * math.atan2(abs(b), abs(a))
                phi = float(np.angle(-a * np.conj(b)))
                t = _mzi(theta, phi)
                w[:, m : m + 2] = w[:, m : m + 2] @ t.conj().T
                right_ops.append((m, theta, phi))
        else:
            for j in range(1, i + 1):
                row, col = n + j - i - 1, j - 1
                m = row - 1
                a, b = _snap(w[m, col]), _snap(w[row, col])
                theta = math.pi if a == 0 and b == 0 else 2.0 * math.atan2(abs(a), abs(b))
                phi = float(np.angle(b * np.conj(a)))
                t = _mzi(theta, phi)
                w[m : m + 2, :] = t @ w[m : m + 2, :]
                left_ops.append((m, theta, phi))

    # u = L1^H ... Lk^H D Rn ... R1. Push D through each L^H using
    # T(th, ph)^H diag(d1, d2) = diag(-e^{-i(th+ph)} d2, -e^{-i th} d2) T(th, arg(d1/d2)).
    d = np.diag(w).copy()
    d = d / np.abs(d)
    moved: list[tuple[int, float, float]] = []
    for m, theta, phi in reversed(left_ops):
        d1, d2 = d[m], d[m + 1]
        new_phi = float(np.angle(d1 * np.conj(d2)))
        d[m] = -np.exp(-1j * (theta + phi)) * d2
        d[m + 1] = -np.exp(-1j * theta) * d2
        moved.append((m, theta, new_phi))
    # application order: R1..Rn, then the moved left ops T'_k..T'_1
    ops = right_ops + moved
    layers = _schedule(ops, n)
    if max(layers) >= n:
        raise InvalidInputError("decomposition did not fit a rectangular mesh")
    order = sorted(range(len(ops)), key=lambda k: (layers[k], ops[k][0]))
    nodes = []
    for k in order:
        m, theta, phi = ops[k]
        nodes.append(
            MziNode(layer=layers[k], top_mode=m, phases=PhasePair(theta, phi), grid_x=2 * layers[k], grid_y=m)
        )
    plan = MeshPlan(n=n, nodes=tuple(nodes), phase_screen=tuple(float(x) for x in np.angle(d)))

    residual = np.linalg.norm(mesh_to_unitary(plan) - u)
    if residual > tol:
        raise InvalidInputError(f"mesh reconstruction error {residual:.3e} exceeds tol {tol:.1e}")
    return plan


def diagonal_stage(singular_values) -> DiagonalStage:
    """Split singular values into per-channel attenuations in [0, 1] and one global gain."""
    s = np.asarray(singular_values, dtype=np.float64).ravel()
    if np.any(~np.isfinite(s)) or np.any(s < 0.0):
        raise InvalidInputError("singular values must be finite and non-negative")
    gain = float(s.max()) if s.size and s.max() > 0.0 else 1.0
    return DiagonalStage(scalars=tuple(float(x) for x in s / gain), gain=gain)


def rvd(u, u_ref, eps: float = RVD_EPS) -> float:
    """Sum over entries of |u - u_ref| / |u_ref|, skipping entries with |u_ref| < eps."""
    u = np.asarray(u, dtype=np.complex128)
    u_ref = np.asarray(u_ref, dtype=np.complex128)
    if u.shape != u_ref.shape:
        raise InvalidInputError(f"shape mismatch {u.shape} vs {u_ref.shape}")
    mod = np.abs(u_ref)
    keep = mod >= eps
    return float(np.sum(np.abs(u - u_ref)[keep] / mod[keep]))


def plan_to_json(plan: MeshPlan) -> dict:
    nodes = []
    for nd in plan.nodes:
        nodes.append(
            {
                "layer": nd.layer,
                "top_mode": nd.top_mode,
                "theta": nd.phases.theta,
                "phi": nd.phases.phi,
                "r": nd.splitters.r,
                "t": nd.splitters.t,
                "r2": nd.splitters.r2,
                "t2": nd.splitters.t2,
                "beta_lt": nd.loss.beta_lt,
                "beta_lb": nd.loss.beta_lb,
                "beta_rt": nd.loss.beta_rt,
                "beta_rb": nd.loss.beta_rb,
            }
        )
    return {"n": plan.n, "nodes": nodes, "phase_screen": list(plan.phase_screen)}


def plan_from_json(obj: dict) -> MeshPlan:
    try:
        n = int(obj["n"])
        nodes = []
        for rec in obj["nodes"]:
            layer, m = int(rec["layer"]), int(rec["top_mode"])
            nodes.append(
                MziNode(
                    layer=layer,
                    top_mode=m,
                    phases=PhasePair(float(rec["theta"]), float(rec["phi"])),
                    splitters=SplitterQuad(*(float(rec[k]) for k in ("r", "t", "r2", "t2"))),
                    loss=ArmLoss(*(float(rec[k]) for k in ("beta_lt", "beta_lb", "beta_rt", "beta_rb"))),
                    grid_x=2 * layer,
                    grid_y=m,
                )
            )
        return MeshPlan(n=n, nodes=tuple(nodes), phase_screen=tuple(obj["phase_screen"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed mesh plan: {exc}") from exc


def dumps_plan(plan: MeshPlan) -> str:
    return json.dumps(plan_to_json(plan), indent=1)
