"""Monte-Carlo harness: accuracy-loss metrics and the experiment suite.

Every Monte-Carlo iteration ``i`` draws its instance from stream id ``i``, so
results do not depend on how iterations are spread over worker threads.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .device import mzi_transfer_batch
from .errors import InvalidInputError
from .imperfect import (
    ImperfectionInstance,
    ImperfectionParameterSet,
    QuantizerSpec,
    apply_instance,
    base_std,
    realize_instance,
    zero_instance,
)
from .mesh import clements_decompose, grid_layout, rvd
from .network import Dataset, IpnnModel, _accuracy_from_matrices, evaluate_accuracy, model_parameters

THREADS_ENV = "MZIFORGE_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise InvalidInputError(f"{THREADS_ENV}={env!r} is not an integer") from exc
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise InvalidInputError(f"threads must be >= 1, got {threads}")
    return threads


def _parallel_map(fn: Callable[[int], float], n: int, threads: int | None) -> list[float]:
    workers = min(resolve_threads(threads), max(n, 1))
    if workers == 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def model_hash(model: IpnnModel) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(model.mesh_sizes(), dtype=np.int64).tobytes())
    h.update(model_parameters(model).tobytes())
    return h.hexdigest()[:16]


def instance_accuracy(model: IpnnModel, dataset: Dataset, inst: ImperfectionInstance) -> float:
    perturbed = apply_instance(model, inst)
    return _accuracy_from_matrices(perturbed.matrices(), dataset)


# --- SAL / AAL ----------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloReport:
    p: ImperfectionParameterSet
    n_p: int
    per_run_accuracy: tuple[float, ...]
    mean_accuracy: float
    std_accuracy: float
    nominal_accuracy: float
    sal: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "p": self.p.to_dict(),
            "n_p": self.n_p,
            "per_run_accuracy": list(self.per_run_accuracy),
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "nominal_accuracy": self.nominal_accuracy,
            "sal": self.sal,
            "seed": self.seed,
        }


def monte_carlo(
    model: IpnnModel,
    dataset: Dataset,
    make_instance: Callable[[int], ImperfectionInstance],
    n: int,
    threads: int | None = None,
) -> list[float]:
    """Accuracy of ``n`` instances; ``make_instance(i)`` builds iteration i."""
    if n < 1:
        raise InvalidInputError(f"iteration count must be >= 1, got {n}")
    return _parallel_map(lambda i: instance_accuracy(model, dataset, make_instance(i)), n, threads)


def _report(p, accs, nominal, seed) -> MonteCarloReport:
    a = np.asarray(accs, dtype=np.float64)
    mean = float(np.mean(a))
    return MonteCarloReport(
        p=p,
        n_p=len(accs),
        per_run_accuracy=tuple(float(x) for x in accs),
        mean_accuracy=mean,
        std_accuracy=float(np.std(a)),
        nominal_accuracy=nominal,
        sal=nominal - mean,
        seed=seed,
    )


def simulated_accuracy_loss(
    model: IpnnModel,
    dataset: Dataset,
    p: ImperfectionParameterSet,
    n_p: int = 10,
    seed: int = 0,
    threads: int | None = None,
    active_meshes: Sequence[bool] | None = None,
    nominal: float | None = None,
) -> MonteCarloReport:
    """Nominal accuracy minus the mean accuracy over ``n_p`` random instances."""
    shape = model.mesh_sizes()
    nominal = evaluate_accuracy(model, dataset) if nominal is None else nominal
    accs = monte_carlo(
        model, dataset, lambda i: realize_instance(p, shape, seed, i, active_meshes), n_p, threads
    )
    return _report(p, accs, nominal, seed)


AAL_TERMS = ("sigma_phs", "sigma_bes", "corr_len", "sigma_il", "n_bits")


def aal_terms(p: ImperfectionParameterSet) -> list[ImperfectionParameterSet]:
    """The five single-parameter sets whose SALs add up to the aggregated loss.

    The correlation-length term has all sigmas at zero and is therefore
    identically zero.
    """
    zero = replace(p, sigma_phs=0.0, sigma_bes=0.0, corr_len=1, sigma_il=0.0, mu_il=0.0, n_bits=None)
    return [
        replace(zero, sigma_phs=p.sigma_phs),
        replace(zero, sigma_bes=p.sigma_bes),
        replace(zero, corr_len=p.corr_len),
        replace(zero, sigma_il=p.sigma_il, mu_il=p.mu_il),
        replace(zero, n_bits=p.n_bits),
    ]


def aggregated_accuracy_loss(
    model: IpnnModel,
    dataset: Dataset,
    p: ImperfectionParameterSet,
    n_p: int = 10,
    seed: int = 0,
    threads: int | None = None,
    return_terms: bool = False,
):
    """Sum of the standalone SALs of each parameter of ``p`` acting alone."""
    nominal = evaluate_accuracy(model, dataset)
    reports = [
        simulated_accuracy_loss(model, dataset, q, n_p, seed, threads, nominal=nominal) for q in aal_terms(p)
    ]
    total = 0.0
    for r in reports:
        total += r.sal
    return (total, reports) if return_terms else total


# --- sweep results ------------------------------------------------------------


@dataclass
class SweepResult:
    experiment: str
    axis_names: tuple[str, ...]
    axis_values: list[tuple]
    mean: list[float]
    std: list[float]
    n_mc: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.axis_values) == len(self.mean) == len(self.std):
            raise InvalidInputError("axis and metric columns must have equal length")

    def rows(self) -> list[list]:
        return [list(a) + [m, s, self.n_mc, self.seed] for a, m, s in zip(self.axis_values, self.mean, self.std)]

    def header(self) -> list[str]:
        return list(self.axis_names) + ["mean", "std", "n_mc", "seed"]

    def lookup(self, **axes) -> float:
        """Mean metric at the axis point matching ``axes``."""
        idx = [self.axis_names.index(k) for k in axes]
        want = tuple(axes.values())
        for a, m in zip(self.axis_values, self.mean):
            if tuple(a[i] for i in idx) == want:
                return m
        raise KeyError(axes)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "axis_names": list(self.axis_names),
            "axis_values": [list(a) for a in self.axis_values],
            "mean": list(self.mean),
            "std": list(self.std),
            "n_mc": self.n_mc,
            "seed": self.seed,
            "metadata": self.metadata,
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(header: Sequence[str], rows: Sequence[Sequence], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_sweep_csv(result: SweepResult, path) -> None:
    write_csv(result.header(), result.rows(), path)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sweep(
    experiment, model, dataset, points, axis_names, n_mc, seed, threads, metadata=None, active=None
) -> SweepResult:
    """Run one SAL Monte-Carlo per ``(axis_tuple, P)`` point."""
    nominal = evaluate_accuracy(model, dataset)
    means, stds, axes = [], [], []
    for axis, p in points:
        rep = simulated_accuracy_loss(model, dataset, p, n_mc, seed, threads, active, nominal=nominal)
        axes.append(tuple(axis))
        means.append(rep.mean_accuracy)
        stds.append(rep.std_accuracy)
    meta = {"nominal_accuracy": nominal, "model_hash": model_hash(model)}
    meta.update(metadata or {})
    return SweepResult(experiment, tuple(axis_names), axes, means, stds, n_mc, seed, meta)


_MODES = ("phs", "bes", "both")


def _p_for_mode(mode: str, sigma: float, **kw) -> ImperfectionParameterSet:
    if mode not in _MODES:
        raise InvalidInputError(f"mode must be one of {_MODES}, got {mode!r}")
    return ImperfectionParameterSet(
        sigma_phs=sigma if mode in ("phs", "both") else 0.0,
        sigma_bes=sigma if mode in ("bes", "both") else 0.0,
        **kw,
    )


# --- EXP1 / EXP3 --------------------------------------------------------------


def run_exp1(model, dataset, sigma_list, mode="phs", n_mc=100, seed=0, threads=None) -> SweepResult:
    """Uncorrelated, identically distributed uncertainty on every MZI."""
    points = [((float(s),), _p_for_mode(mode, float(s))) for s in sigma_list]
    return _sweep("exp1", model, dataset, points, ("sigma",), n_mc, seed, threads, {"mode": mode})


def run_exp3(
    model, dataset, sigma_list, corr_lens, radial=False, mode="phs", n_mc=100, seed=0, threads=None,
    renormalize=True,
) -> SweepResult:
    """Spatially correlated (and optionally radial) uncertainty, one curve per L."""
    points = [
        ((int(L), float(s)), _p_for_mode(mode, float(s), corr_len=int(L), radial=bool(radial), renormalize=renormalize))
        for L in corr_lens
        for s in sigma_list
    ]
    meta = {"mode": mode, "radial": bool(radial), "renormalize": bool(renormalize)}
    return _sweep("exp3", model, dataset, points, ("corr_len", "sigma"), n_mc, seed, threads, meta)


# --- EXP2: regional perturbation heatmaps -------------------------------------


@dataclass
class Heatmap:
    mesh_index: int
    layer_index: int
    matrix: str  # "V^H" or "U"
    values: np.ndarray  # (region rows, region cols) accuracy loss
    partial_rows: bool
    partial_cols: bool


def region_grid(n: int, region: tuple[int, int] = (2, 2)) -> tuple[np.ndarray, int, int]:
    """Region index (row, col) of each node of an n-mode mesh, in canonical order.

    A region spans ``region[0]`` MZI rows (row = top_mode // 2) and
    ``region[1]`` mesh layers.
    """
    rh, rw = region
    slots = grid_layout(n)
    rr = np.array([(m // 2) // rh for _, m, _, _ in slots], dtype=np.int64)
    cc = np.array([layer // rw for layer, _, _, _ in slots], dtype=np.int64)
    mzi_rows = n // 2
    n_rows = -(-mzi_rows // rh) if mzi_rows else 0
    n_cols = -(-n // rw)
    return np.stack([rr, cc], axis=1), n_rows, n_cols


def run_exp2(
    model, dataset, sigma_in=0.1, sigma_out=0.05, n_mc=100, seed=0, threads=None, region=(2, 2)
) -> list[Heatmap]:
    """Accuracy loss when one region of one mesh sees ``sigma_in`` and the rest ``sigma_out``.

    Both levels use the same random draws (same seed and stream), so a
    region's cell differs from the global-``sigma_out`` case only through
    that region's larger deviations.
    """
    shape = model.mesh_sizes()
    nominal = evaluate_accuracy(model, dataset)
    p_in = _p_for_mode("both", float(sigma_in))
    p_out = _p_for_mode("both", float(sigma_out))
    maps = []
    for k, n in enumerate(shape):
        idx, n_rows, n_cols = region_grid(n, region)
        values = np.zeros((n_rows, n_cols))
        for r in range(n_rows):
            for c in range(n_cols):
                mask = (idx[:, 0] == r) & (idx[:, 1] == c) if idx.size else np.zeros(0, bool)

                def make(i, k=k, mask=mask):
                    a = realize_instance(p_in, shape, seed, i)
                    b = realize_instance(p_out, shape, seed, i)
                    deltas = list(b.deltas)
                    deltas[k] = a.deltas[k].select(mask, b.deltas[k])
                    return replace(b, deltas=tuple(deltas))

                accs = monte_carlo(model, dataset, make, n_mc, threads)
                values[r, c] = nominal - float(np.mean(accs))
        mzi_rows = n // 2
        maps.append(
            Heatmap(
                mesh_index=k,
                layer_index=k // 2,
                matrix="V^H" if k % 2 == 0 else "U",
                values=values,
                partial_rows=bool(mzi_rows % region[0]),
                partial_cols=bool(n % region[1]),
            )
        )
    return maps


# 10-step ramp from pale yellow to dark red; bin = floor(10 * (v - lo) / (hi - lo)), clipped to 0..9
COLOR_RAMP = (
    "#ffffcc", "#ffeda0", "#fed976", "#feb24c", "#fd8d3c",
    "#fc4e2a", "#e31a1c", "#bd0026", "#800026", "#4d0013",
)


def heatmap_svg(values: np.ndarray, cell: int = 40, lo: float | None = None, hi: float | None = None) -> str:
    v = np.asarray(values, dtype=np.float64)
    rows, cols = v.shape
    if lo is None:
        lo = float(v.min()) if v.size else 0.0
    if hi is None:
        hi = float(v.max()) if v.size else 1.0
    span = hi - lo
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{cols * cell}" height="{rows * cell}">'
    ]
    for r in range(rows):
        for c in range(cols):
            b = 0 if span <= 0 else min(9, max(0, int(math.floor(10 * (v[r, c] - lo) / span))))
            # row 0 drawn at the bottom so height grows upward
            y = (rows - 1 - r) * cell
            parts.append(
                f'<rect x="{c * cell}" y="{y}" width="{cell}" height="{cell}" fill="{COLOR_RAMP[b]}">'
                f"<title>{v[r, c]!r}</title></rect>"
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --- per-MZI RVD sensitivity ------------------------------------------------


def per_mzi_rvd(u, sigma_phs: float, sigma_bes: float, n_mc: int = 1000, seed: int = 0) -> np.ndarray:
    """Mean RVD when only one MZI (all six parameters) is perturbed, per MZI."""
    plan = clements_decompose(u)
    u_ref = np.asarray(u, dtype=np.complex128)
    n, nodes = plan.n, plan.nodes
    if n_mc < 1:
        raise InvalidInputError("n_mc must be >= 1")
    a = plan.node_arrays()
    blocks = mzi_transfer_batch(a["theta"], a["phi"], a["r"], a["t"], a["r2"], a["t2"], a["beta"])
    # prefix[k]: nodes 0..k-1 applied; suffix[k]: phase screen times nodes k+1.. applied
    prefix = [np.eye(n, dtype=np.complex128)]
    for m, b in zip(a["top_mode"], blocks):
        nxt = prefix[-1].copy()
        nxt[m : m + 2, :] = b @ nxt[m : m + 2, :]
        prefix.append(nxt)
    total = prefix[-1]
    screen = np.exp(1j * np.asarray(plan.phase_screen))
    nominal = screen[:, None] * total
    sd_phase, sd_split = base_std(sigma_phs, "phase"), base_std(sigma_bes, "splitter")
    out = np.zeros(len(nodes))
    for k, nd in enumerate(nodes):
        m = nd.top_mode
        # suffix operator S with nominal = S @ prefix[k+1]; prefix products are unitary
        s = nominal @ prefix[k + 1].conj().T
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(k,))))
        d = rng.standard_normal((n_mc, 6))
        th = nd.phases.theta + sd_phase * d[:, 0]
        ph = nd.phases.phi + sd_phase * d[:, 1]
        split = np.clip(
            np.array([nd.splitters.r, nd.splitters.t, nd.splitters.r2, nd.splitters.t2]) + sd_split * d[:, 2:], 0.0, 1.0
        )
        pert = mzi_transfer_batch(th, ph, split[:, 0], split[:, 1], split[:, 2], split[:, 3])
        diff = pert - blocks[k]
        rows = prefix[k][m : m + 2, :]
        # perturbed - nominal = S[:, m:m+2] (T' - T) prefix_k[m:m+2, :]
        delta = np.einsum("ij,rjk,kl->ril", s[:, m : m + 2], diff, rows)
        mod = np.abs(nominal)
        keep = mod >= 1e-9
        rel = np.abs(delta)[:, keep] / mod[keep]
        out[k] = float(np.mean(rel.sum(axis=1)))
    # consistency of the nominal realization with the source
    if rvd(nominal, u_ref) > 1e-6:
        raise InvalidInputError("decomposition does not reproduce the source unitary")
    return out


# --- loss and quantization sweeps -------------------------------------------


def layer_mask(model: IpnnModel, selector) -> list[bool]:
    """Mesh flags for ``selector``: "all" or a layer index."""
    n_layers = len(model.layers)
    if selector == "all":
        return [True] * (2 * n_layers)
    if isinstance(selector, (int, np.integer)) and not isinstance(selector, bool) and 0 <= selector < n_layers:
        return [i // 2 == selector for i in range(2 * n_layers)]
    raise InvalidInputError(f"layer selector must be 'all' or a layer index < {n_layers}, got {selector!r}")


def run_loss_sweep(
    model, dataset, mu_il_list, sigma_il_list, layer_selector="all", n_mc=100, seed=0, threads=None
) -> SweepResult:
    """Mean accuracy with lossy MZIs only in the selected layer(s)."""
    active = layer_mask(model, layer_selector)
    points = [
        ((float(mu), float(sig)), ImperfectionParameterSet(mu_il=float(mu), sigma_il=float(sig)))
        for mu in mu_il_list
        for sig in sigma_il_list
    ]
    meta = {"layer_selector": layer_selector}
    return _sweep("loss", model, dataset, points, ("mu_il", "sigma_il"), n_mc, seed, threads, meta, active)


def run_quant_sweep(
    model, dataset, modes=("EVS", "EPS", "KC"), n_bits_range=(1, 2, 3, 4, 5, 6, 7, 8), layer_selector="all",
    background_bits: int = 8,
) -> SweepResult:
    """Deterministic accuracy under phase quantization.

    Meshes outside ``layer_selector`` are quantized with the same mode at
    ``background_bits``.
    """
    active = layer_mask(model, layer_selector)
    shape = model.mesh_sizes()
    base = zero_instance(shape)
    axes, means = [], []
    for mode in modes:
        for nb in n_bits_range:
            qs = [QuantizerSpec(mode, int(nb) if a else background_bits) for a in active]
            acc = instance_accuracy(model, dataset, base.with_quantizers(qs))
            axes.append((mode, int(nb)))
            means.append(acc)
    meta = {
        "layer_selector": layer_selector,
        "background_bits": background_bits,
        "nominal_accuracy": evaluate_accuracy(model, dataset),
        "model_hash": model_hash(model),
    }
    return SweepResult("quant", ("mode", "n_bits"), axes, means, [0.0] * len(means), 1, 0, meta)


# --- maximal imperfection set -------------------------------------------------


def order_key(p: ImperfectionParameterSet) -> tuple[float, float, float, float, float]:
    """Coordinates of the partial order; larger means more imperfect."""
    inv_bits = 0.0 if p.n_bits is None else 1.0 / p.n_bits
    return (p.sigma_phs, p.sigma_bes, float(p.corr_len), p.sigma_il, inv_bits)


def dominates(a: ImperfectionParameterSet, b: ImperfectionParameterSet) -> bool:
    """True when ``a`` is at least as imperfect as ``b`` in every coordinate and differs."""
    ka, kb = order_key(a), order_key(b)
    return ka != kb and all(x >= y for x, y in zip(ka, kb))


def pareto_maximal(points: Sequence[ImperfectionParameterSet]) -> list[ImperfectionParameterSet]:
    return [p for p in points if not any(dominates(q, p) for q in points)]


@dataclass
class PstarResult:
    evaluated: list[tuple[ImperfectionParameterSet, float]]
    feasible: list[ImperfectionParameterSet]
    pareto: list[ImperfectionParameterSet]
    alpha_max: float
    n_p: int
    seed: int


PSTAR_AXES = ("sigma_phs", "sigma_bes", "corr_len", "sigma_il", "n_bits")


def search_pstar(
    model, dataset, grids: dict, alpha_max: float, n_p: int = 10, seed: int = 0, threads=None, base=None
) -> PstarResult:
    """Exhaustive lattice search for the maximal feasible imperfection sets.

    ``grids`` maps each of ``PSTAR_AXES`` to a list of values (missing axes
    are held at their ideal value; ``n_bits`` may include None for full
    precision).
    """
    unknown = set(grids) - set(PSTAR_AXES)
    if unknown:
        raise InvalidInputError(f"unknown grid axes {sorted(unknown)}")
    if not 0.0 <= alpha_max <= 1.0:
        raise InvalidInputError(f"alpha_max={alpha_max!r} must lie in [0, 1]")
    defaults = {"sigma_phs": [0.0], "sigma_bes": [0.0], "corr_len": [1], "sigma_il": [0.0], "n_bits": [None]}
    axes = []
    for name in PSTAR_AXES:
        vals = list(grids.get(name, defaults[name]))
        if not vals:
            raise InvalidInputError(f"grid for {name} is empty")
        seen = []
        for v in vals:
            if v not in seen:
                seen.append(v)
        axes.append(seen)
    base = base or ImperfectionParameterSet()
    nominal = evaluate_accuracy(model, dataset)
    evaluated = []
    for combo in itertools.product(*axes):
        p = replace(base, **dict(zip(PSTAR_AXES, combo)))
        rep = simulated_accuracy_loss(model, dataset, p, n_p, seed, threads, nominal=nominal)
        evaluated.append((p, rep.sal))
    feasible = [p for p, sal in evaluated if sal <= alpha_max]
    return PstarResult(evaluated, feasible, pareto_maximal(feasible), alpha_max, n_p, seed)
