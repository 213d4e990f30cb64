"""Imperfection models: variation maps, insertion loss, phase quantization.

An :class:`ImperfectionInstance` holds one random realization of an
:class:`ImperfectionParameterSet` for every unitary mesh of a model. Each
mesh gets its own phase map and two splitter maps (one for ``r``, one for
``t``) on its ``(n-1) x 2n`` unit grid. A node reads its input-side cell for
``phi`` and the first coupler, and its output-side cell for ``theta`` and the
second coupler.

Random streams are keyed by ``(seed, stream, mesh, kind)`` through
``numpy.random.SeedSequence``. Maps are standard normals scaled by sigma, so
two parameter sets sharing a seed see the same underlying draws.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d

from .device import TWO_PI, ArmLoss, PhasePair, PhaseShifterSpec, SplitterQuad
from .errors import InvalidInputError, RangeError
from .mesh import MeshPlan, grid_layout, grid_shape

QUANT_MODES = ("EVS", "EPS", "KC")
# above this many bits the level grid is finer than double precision
_MAX_EFFECTIVE_BITS = 52

_KIND_PHASE, _KIND_R, _KIND_T, _KIND_IL = 0, 1, 2, 3


# --- parameter sets ---------------------------------------------------------


@dataclass(frozen=True)
class ImperfectionParameterSet:
    """One point of the imperfection space.

    ``sigma_phs`` is the phase std as a fraction of 2*pi; ``sigma_bes`` is
    sqrt(2) times the splitter amplitude std. ``n_bits=None`` means full
    precision (no quantization).
    """

    sigma_phs: float = 0.0
    sigma_bes: float = 0.0
    corr_len: int = 1
    sigma_il: float = 0.0
    n_bits: int | None = None
    radial: bool = False
    mu_il: float = 0.0
    quant_mode: str = "EVS"
    renormalize: bool = True

    def __post_init__(self):
        for name in ("sigma_phs", "sigma_bes", "sigma_il"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise InvalidInputError(f"{name}={v!r} must be finite and >= 0")
        if not math.isfinite(self.mu_il):
            raise InvalidInputError("mu_il must be finite")
        if int(self.corr_len) != self.corr_len or self.corr_len < 1:
            raise InvalidInputError(f"corr_len={self.corr_len!r} must be an integer >= 1")
        object.__setattr__(self, "corr_len", int(self.corr_len))
        if self.n_bits is not None:
            if int(self.n_bits) != self.n_bits or self.n_bits < 1:
                raise InvalidInputError(f"n_bits={self.n_bits!r} must be an integer >= 1")
            object.__setattr__(self, "n_bits", int(self.n_bits))
        if self.quant_mode not in QUANT_MODES:
            raise InvalidInputError(f"quant_mode must be one of {QUANT_MODES}, got {self.quant_mode!r}")

    def is_nominal(self) -> bool:
        return (
            self.sigma_phs == 0.0
            and self.sigma_bes == 0.0
            and self.sigma_il == 0.0
            and self.mu_il == 0.0
            and self.n_bits is None
        )

    def quantizer(self, phase_spec: PhaseShifterSpec | None = None) -> "QuantizerSpec | None":
        if self.n_bits is None:
            return None
        return QuantizerSpec(self.quant_mode, self.n_bits, phase_spec or PhaseShifterSpec())

    def to_dict(self) -> dict:
        return {
            "sigma_phs": self.sigma_phs,
            "sigma_bes": self.sigma_bes,
            "corr_len": self.corr_len,
            "sigma_il": self.sigma_il,
            "n_bits": self.n_bits,
            "radial": self.radial,
            "mu_il": self.mu_il,
            "quant_mode": self.quant_mode,
            "renormalize": self.renormalize,
        }


# --- variation maps ---------------------------------------------------------


@dataclass(frozen=True)
class VariationMap:
    width: int
    height: int
    values: np.ndarray  # (height, width); values[y, x]
    sigma: float
    kind: str
    radial: bool = False
    corr_len: int = 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["width", "height", "sigma", "kind", "radial", "L"])
            w.writerow([self.width, self.height, repr(self.sigma), self.kind, int(self.radial), self.corr_len])
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def base_std(sigma: float, kind: str) -> float:
    """Per-cell standard deviation of an uncorrelated map."""
    if kind == "phase":
        return TWO_PI * sigma
    if kind == "splitter":
        return sigma / math.sqrt(2.0)
    raise InvalidInputError(f"kind must be 'phase' or 'splitter', got {kind!r}")


def radial_scale(height: int, width: int) -> np.ndarray:
    """Distance of each cell from the grid center divided by the corner distance."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    y, x = np.mgrid[0:height, 0:width]
    dist = np.hypot(x - cx, y - cy)
    dmax = math.hypot(cx, cy)
    return dist / dmax if dmax > 0 else np.zeros((height, width))


def gaussian_kernel(height: int, width: int, corr_len: float) -> np.ndarray:
    """Anisotropic Gaussian on integer offsets, shape (2h-1, 2w-1), centered.

    g(dx, dy) = 2 / (sqrt(pi) L) * exp(-(2 dx^2 + dy^2) / L^2)
    """
    dy = np.arange(-(height - 1), height)[:, None]
    dx = np.arange(-(width - 1), width)[None, :]
    return 2.0 / (math.sqrt(math.pi) * corr_len) * np.exp(-(2.0 * dx**2 + dy**2) / corr_len**2)


def generate_variation_map(
    width: int,
    height: int,
    sigma: float,
    kind: str,
    radial: bool = False,
    corr_len: int = 1,
    rng: np.random.Generator | None = None,
    renormalize: bool = True,
) -> VariationMap:
    if width < 1 or height < 1:
        raise InvalidInputError(f"map dimensions must be positive, got {width}x{height}")
    if not (math.isfinite(sigma) and sigma >= 0.0):
        raise InvalidInputError(f"sigma={sigma!r} must be finite and >= 0")
    if corr_len < 1:
        raise InvalidInputError(f"corr_len={corr_len!r} must be >= 1")
    std = base_std(sigma, kind)
    if std == 0.0:
        return VariationMap(width, height, np.zeros((height, width)), sigma, kind, radial, corr_len)
    rng = rng if rng is not None else np.random.default_rng()
    scale = radial_scale(height, width) if radial else np.ones((height, width))
    values = std * scale * rng.standard_normal((height, width))
    if corr_len > 1:
        values = convolve2d(values, gaussian_kernel(height, width, corr_len), mode="same", boundary="fill")
        if renormalize:
            target = std * math.sqrt(float(np.mean(scale**2)))
            rms = math.sqrt(float(np.mean(values**2)))
            if rms > 0.0:
                values = values * (target / rms)
    return VariationMap(width, height, values, sigma, kind, radial, corr_len)


def insertion_loss_to_beta(il):
    """Amplitude factor per arm for an MZI losing ``il`` dB (IL = 10 log10 beta^4)."""
    return np.power(10.0, -np.asarray(il, dtype=np.float64) / 40.0)


# --- quantization -----------------------------------------------------------


@dataclass(frozen=True)
class QuantizerSpec:
    mode: str
    n_bits: int
    phase_spec: PhaseShifterSpec = field(default_factory=PhaseShifterSpec)
    kc_levels: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode not in QUANT_MODES:
            raise InvalidInputError(f"mode must be one of {QUANT_MODES}, got {self.mode!r}")
        if int(self.n_bits) != self.n_bits or self.n_bits < 1:
            raise InvalidInputError(f"n_bits={self.n_bits!r} must be an integer >= 1")
        if self.kc_levels is not None:
            object.__setattr__(self, "kc_levels", tuple(float(v) for v in self.kc_levels))

    @property
    def level_count(self) -> int:
        return 2**self.n_bits

    def levels(self) -> np.ndarray:
        """Phase levels for EVS/EPS (KC levels depend on the population)."""
        j = np.arange(self.level_count, dtype=np.float64)
        top = self.level_count - 1
        if self.mode == "EPS":
            return TWO_PI * j / top
        if self.mode == "EVS":
            v = j * (self.phase_spec.v_max / top)
            return self.phase_spec.k * v * v
        if self.kc_levels is None:
            raise InvalidInputError("KC levels depend on the phase population")
        return np.asarray(self.kc_levels)


def _nearest_index(x: np.ndarray, step: float, top: int) -> np.ndarray:
    # nearest multiple of step, exact halves rounded down
    return np.clip(np.ceil(x / step - 0.5), 0, top)


def _snap_to_levels(x: np.ndarray, levels: np.ndarray) -> np.ndarray:
    lv = np.sort(np.asarray(levels, dtype=np.float64))
    idx = np.clip(np.searchsorted(lv, x), 1, lv.size - 1) if lv.size > 1 else np.zeros(x.shape, int)
    if lv.size == 1:
        return np.full_like(x, lv[0])
    lo, hi = lv[idx - 1], lv[idx]
    return np.where(x - lo <= hi - x, lo, hi)


def kmeans_1d(values, k: int, max_iter: int = 100, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm on a scalar population.

    Centers start at the population quantiles ``(j + 1/2) / k``; an empty
    cluster is re-seeded at the median of the largest cluster. Returns
    ``(centers, labels)`` with centers sorted ascending.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidInputError("k-means needs a non-empty population")
    if k < 1:
        raise InvalidInputError(f"k={k!r} must be >= 1")
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    labels = np.zeros(x.size, dtype=np.int64)
    for _ in range(max_iter):
        order = np.argsort(centers, kind="stable")
        centers = centers[order]
        mids = 0.5 * (centers[1:] + centers[:-1])
        labels = np.searchsorted(mids, x, side="left")
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=x, minlength=k)
        new = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        for j in np.flatnonzero(counts == 0):
            big = int(np.argmax(counts))
            new[j] = float(np.median(x[labels == big]))
        shift = float(np.max(np.abs(new - centers)))
        centers = new
        if shift < tol:
            break
    centers = np.sort(centers)
    labels = np.searchsorted(0.5 * (centers[1:] + centers[:-1]), x, side="left")
    return centers, labels


def kc_levels(population, n_bits: int) -> np.ndarray:
    """Cluster medians of a phase population (one per non-empty cluster)."""
    x = np.asarray(population, dtype=np.float64).ravel()
    k = 2**n_bits
    distinct = np.unique(x)
    if distinct.size <= k:
        return distinct
    _, labels = kmeans_1d(x, k)
    return np.array([np.median(x[labels == j]) for j in range(k) if np.any(labels == j)])


def quantize_phases(phases, spec: QuantizerSpec) -> np.ndarray:
    """Snap phases in [0, 2*pi] to the levels of ``spec``.

    EVS snaps the drive voltage to equidistant steps on [0, v_max]; EPS snaps
    the phase to equidistant steps on [0, 2*pi]; KC snaps each phase to the
    median of its k-means cluster (levels computed from ``phases`` itself
    unless ``spec.kc_levels`` is given).
    """
    x = np.asarray(phases, dtype=np.float64)
    if x.size and (np.any(~np.isfinite(x)) or x.min() < 0.0 or x.max() > TWO_PI):
        raise RangeError("phases must lie in [0, 2*pi]")
    top = spec.level_count - 1
    if spec.mode == "KC":
        if spec.kc_levels is not None:
            return _snap_to_levels(x, np.asarray(spec.kc_levels))
        if x.size == 0:
            return x.copy()
        flat = x.ravel()
        if np.unique(flat).size <= spec.level_count:
            return x.copy()
        _, labels = kmeans_1d(flat, spec.level_count)
        out = np.empty_like(flat)
        for j in np.unique(labels):
            sel = labels == j
            out[sel] = np.median(flat[sel])
        return out.reshape(x.shape)
    if spec.n_bits > _MAX_EFFECTIVE_BITS:
        return x.copy()
    if spec.mode == "EPS":
        step = TWO_PI / top
        return _nearest_index(x, step, top) * step
    ps = spec.phase_spec
    step = ps.v_max / top
    volts = np.sqrt(x / ps.k)
    v = _nearest_index(volts, step, top) * step
    return np.minimum(ps.k * v * v, TWO_PI)


# --- instances --------------------------------------------------------------


def rng_for(seed: int, stream: int, mesh: int, kind: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(mesh), int(kind)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class MeshDeltas:
    """Per-node additive deltas in canonical node order, plus per-node IL in dB."""

    d_theta: np.ndarray
    d_phi: np.ndarray
    d_r: np.ndarray
    d_t: np.ndarray
    d_r2: np.ndarray
    d_t2: np.ndarray
    il: np.ndarray

    FIELDS = ("d_theta", "d_phi", "d_r", "d_t", "d_r2", "d_t2", "il")

    @classmethod
    def zeros(cls, count: int) -> "MeshDeltas":
        return cls(*(np.zeros(count) for _ in cls.FIELDS))

    @property
    def count(self) -> int:
        return self.d_theta.shape[0]

    def select(self, mask, other: "MeshDeltas") -> "MeshDeltas":
        """Take entries from self where ``mask`` is true, else from ``other``."""
        mask = np.asarray(mask, dtype=bool)
        return MeshDeltas(*(np.where(mask, getattr(self, f), getattr(other, f)) for f in self.FIELDS))

    def equals(self, other: "MeshDeltas") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS)


@dataclass(frozen=True)
class ImperfectionInstance:
    mesh_sizes: tuple[int, ...]
    deltas: tuple[MeshDeltas, ...]
    quantizers: tuple[QuantizerSpec | None, ...]
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mesh_sizes", tuple(self.mesh_sizes))
        object.__setattr__(self, "deltas", tuple(self.deltas))
        object.__setattr__(self, "quantizers", tuple(self.quantizers))
        if not len(self.mesh_sizes) == len(self.deltas) == len(self.quantizers):
            raise InvalidInputError("instance needs one delta set and one quantizer per mesh")
        for n, d in zip(self.mesh_sizes, self.deltas):
            if d.count != len(grid_layout(n)):
                raise InvalidInputError(f"{d.count} node deltas for a {n}-mode mesh")

    def equals(self, other: "ImperfectionInstance") -> bool:
        return (
            self.mesh_sizes == other.mesh_sizes
            and self.quantizers == other.quantizers
            and all(a.equals(b) for a, b in zip(self.deltas, other.deltas))
        )

    def with_quantizers(self, quantizers: Sequence[QuantizerSpec | None]) -> "ImperfectionInstance":
        return replace(self, quantizers=tuple(quantizers))


def zero_instance(mesh_sizes: Sequence[int]) -> ImperfectionInstance:
    sizes = tuple(mesh_sizes)
    return ImperfectionInstance(
        sizes, tuple(MeshDeltas.zeros(len(grid_layout(n))) for n in sizes), (None,) * len(sizes)
    )


def _cells(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    slots = grid_layout(n)
    ys = np.array([s[3] for s in slots], dtype=np.int64)
    xs = np.array([s[2] for s in slots], dtype=np.int64)
    return ys, xs, xs + 1


def realize_mesh_deltas(
    p: ImperfectionParameterSet, n: int, seed: int, stream: int, mesh_index: int
) -> MeshDeltas:
    count = len(grid_layout(n))
    if count == 0:
        return MeshDeltas.zeros(0)
    height, width = grid_shape(n)
    ys, x_in, x_out = _cells(n)

    def draw(sigma, kind, kind_idx):
        return generate_variation_map(
            width, height, sigma, kind, p.radial, p.corr_len,
            rng_for(seed, stream, mesh_index, kind_idx), p.renormalize,
        ).values

    phase = draw(p.sigma_phs, "phase", _KIND_PHASE)
    r_map = draw(p.sigma_bes, "splitter", _KIND_R)
    t_map = draw(p.sigma_bes, "splitter", _KIND_T)
    if p.sigma_il == 0.0:
        il = np.full(count, float(p.mu_il))
    else:
        il = p.mu_il + p.sigma_il * rng_for(seed, stream, mesh_index, _KIND_IL).standard_normal(count)
    return MeshDeltas(
        d_theta=phase[ys, x_out],
        d_phi=phase[ys, x_in],
        d_r=r_map[ys, x_in],
        d_t=t_map[ys, x_in],
        d_r2=r_map[ys, x_out],
        d_t2=t_map[ys, x_out],
        il=il,
    )


def realize_instance(
    p: ImperfectionParameterSet,
    model_shape: Sequence[int],
    seed: int,
    stream: int = 0,
    active_meshes: Sequence[bool] | None = None,
    phase_spec: PhaseShifterSpec | None = None,
) -> ImperfectionInstance:
    """Draw one imperfection instance for meshes of the given sizes.

    ``active_meshes`` (optional) restricts random deltas and IL to the
    selected meshes; the others stay ideal. The quantizer applies to all.
    """
    sizes = tuple(int(n) for n in model_shape)
    active = [True] * len(sizes) if active_meshes is None else [bool(a) for a in active_meshes]
    if len(active) != len(sizes):
        raise InvalidInputError("active_meshes must have one flag per mesh")
    deltas = []
    for i, n in enumerate(sizes):
        if active[i]:
            deltas.append(realize_mesh_deltas(p, n, seed, stream, i))
        else:
            deltas.append(MeshDeltas.zeros(len(grid_layout(n))))
    q = p.quantizer(phase_spec)
    return ImperfectionInstance(sizes, tuple(deltas), (q,) * len(sizes), int(seed), int(stream))


def _check_canonical(plan: MeshPlan) -> None:
    got = [(nd.layer, nd.top_mode) for nd in plan.nodes]
    want = [(s[0], s[1]) for s in grid_layout(plan.n)]
    if got != want:
        raise InvalidInputError("mesh nodes are not in canonical rectangular order")


def perturb_plan(plan: MeshPlan, deltas: MeshDeltas, quantizer: QuantizerSpec | None = None) -> MeshPlan:
    """Quantize the tuned phases, then add the deltas; returns a new plan."""
    _check_canonical(plan)
    if deltas.count != len(plan.nodes):
        raise InvalidInputError(f"{deltas.count} deltas for {len(plan.nodes)} nodes")
    if not plan.nodes:
        return plan
    theta = np.array([nd.phases.theta for nd in plan.nodes])
    phi = np.array([nd.phases.phi for nd in plan.nodes])
    if quantizer is not None:
        theta = quantize_phases(theta, quantizer)
        phi = quantize_phases(phi, quantizer)
    beta = insertion_loss_to_beta(deltas.il)
    nodes = []
    for i, nd in enumerate(plan.nodes):
        s = nd.splitters
        nodes.append(
            replace(
                nd,
                phases=PhasePair(theta[i] + deltas.d_theta[i], phi[i] + deltas.d_phi[i]),
                splitters=SplitterQuad.clamped(
                    s.r + deltas.d_r[i], s.t + deltas.d_t[i], s.r2 + deltas.d_r2[i], s.t2 + deltas.d_t2[i]
                ),
                loss=ArmLoss.uniform(float(beta[i])),
            )
        )
    return plan.with_nodes(nodes)


def resolve_kc_quantizers(meshes: Sequence[MeshPlan], quantizers: Sequence[QuantizerSpec | None]):
    """Fix KC levels from the pooled phases of all meshes sharing a quantizer."""
    out = list(quantizers)
    groups: dict[QuantizerSpec, list[int]] = {}
    for i, q in enumerate(quantizers):
        if q is not None and q.mode == "KC" and q.kc_levels is None:
            groups.setdefault(q, []).append(i)
    for q, idx in groups.items():
        pop = np.concatenate(
            [np.array([v for nd in meshes[i].nodes for v in (nd.phases.theta, nd.phases.phi)]) for i in idx]
        )
        if pop.size == 0:
            continue
        levels = kc_levels(pop, q.n_bits)
        for i in idx:
            out[i] = replace(q, kc_levels=tuple(levels))
    return out


def apply_instance(model, inst: ImperfectionInstance):
    """Return a perturbed copy of ``model`` (an :class:`~mziforge.network.IpnnModel`)."""
    meshes = model.meshes()
    if tuple(m.n for m in meshes) != inst.mesh_sizes:
        raise InvalidInputError(
            f"instance mesh sizes {inst.mesh_sizes} do not match model {tuple(m.n for m in meshes)}"
        )
    quantizers = resolve_kc_quantizers(meshes, inst.quantizers)
    new = [perturb_plan(m, d, q) for m, d, q in zip(meshes, inst.deltas, quantizers)]
    return model.with_meshes(new)
