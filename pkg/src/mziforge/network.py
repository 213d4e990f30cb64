"""Coherent IPNN model: SVD-mapped layers, complex inference and accuracy.

Every weight matrix ``W = U S V^H`` becomes two Clements meshes (for ``V^H``
and ``U``) with an attenuating diagonal stage and a global optical gain in
between. Hidden activations apply softplus to the modulus and keep the phase;
the readout is the modulus squared followed by log-softmax.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .device import PhasePair
from .errors import InvalidInputError
from .linalg import as_matrix, dft2_shifted, matrix_from_json, matrix_to_json, random_unitary, svd
from .mesh import DiagonalStage, MeshPlan, clements_decompose, diagonal_stage, mesh_to_unitary

LN2 = math.log(2.0)
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LinearLayer:
    u_mesh: MeshPlan
    diag: DiagonalStage
    v_h_mesh: MeshPlan
    in_dim: int
    out_dim: int

    def diag_matrix(self) -> np.ndarray:
        d = np.zeros((self.out_dim, self.in_dim))
        k = len(self.diag.scalars)
        d[np.arange(k), np.arange(k)] = self.diag.scalars
        return d

    def matrix(self) -> np.ndarray:
        """Realized complex weight matrix including the optical gain."""
        u = mesh_to_unitary(self.u_mesh)
        v_h = mesh_to_unitary(self.v_h_mesh)
        return self.diag.gain * (u @ (self.diag_matrix() @ v_h))


@dataclass(frozen=True)
class IpnnModel:
    layers: tuple[LinearLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidInputError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise InvalidInputError(f"layer dims {a.out_dim} -> {b.in_dim} do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def meshes(self) -> list[MeshPlan]:
        """All unitary meshes in light-propagation order: V^H then U for each layer."""
        out = []
        for layer in self.layers:
            out.extend((layer.v_h_mesh, layer.u_mesh))
        return out

    def mesh_sizes(self) -> tuple[int, ...]:
        return tuple(m.n for m in self.meshes())

    def with_meshes(self, meshes: Sequence[MeshPlan]) -> "IpnnModel":
        if len(meshes) != 2 * len(self.layers):
            raise InvalidInputError(f"expected {2 * len(self.layers)} meshes, got {len(meshes)}")
        layers = [
            replace(layer, v_h_mesh=meshes[2 * i], u_mesh=meshes[2 * i + 1])
            for i, layer in enumerate(self.layers)
        ]
        return IpnnModel(layers=tuple(layers))

    def matrices(self) -> list[np.ndarray]:
        return [layer.matrix() for layer in self.layers]


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray  # (count, dim) complex
    labels: np.ndarray  # (count,) int
    class_count: int

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.samples, dtype=np.complex128))
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        if x.shape[0] != y.shape[0]:
            raise InvalidInputError(f"{x.shape[0]} samples but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise InvalidInputError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "labels", y)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]


def extract_features(image, crop: int = 4) -> np.ndarray:
    """Central ``crop x crop`` block of the shifted 2-D spectrum, flattened row-major."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if crop < 2 or crop % 2 or crop > min(h, w):
        raise InvalidInputError(f"crop must be even and in [2, {min(h, w)}], got {crop}")
    spec = dft2_shifted(img)
    cy, cx, half = h // 2, w // 2, crop // 2
    return spec[cy - half : cy + half, cx - half : cx + half].reshape(-1)


def build_layer(weight) -> LinearLayer:
    w = as_matrix(weight, "weight")
    res = svd(w)
    return LinearLayer(
        u_mesh=clements_decompose(res.u),
        diag=diagonal_stage(res.singular_values),
        v_h_mesh=clements_decompose(res.v_h),
        in_dim=w.shape[1],
        out_dim=w.shape[0],
    )


def build_model(weights: Sequence) -> IpnnModel:
    if not weights:
        raise InvalidInputError("need at least one weight matrix")
    shapes = [np.shape(w) for w in weights]
    for (r0, _), (_, c1) in zip(shapes, shapes[1:]):
        if r0 != c1:
            raise InvalidInputError(f"weight shapes {shapes} do not chain")
    return IpnnModel(layers=tuple(build_layer(w) for w in weights))


def modulus_softplus(y: np.ndarray) -> np.ndarray:
    mod = np.abs(y)
    sp = np.logaddexp(0.0, mod)
    safe = np.where(mod > 0.0, mod, 1.0)
    return np.where(mod > 0.0, sp * y / safe, LN2 + 0j)


def log_softmax(a: np.ndarray) -> np.ndarray:
    shift = a.max(axis=-1, keepdims=True)
    z = a - shift
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def forward_matrices(matrices: Sequence[np.ndarray], x) -> np.ndarray:
    """Log-probabilities for a single input vector or a (count, dim) batch."""
    x = np.asarray(x, dtype=np.complex128)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != matrices[0].shape[1]:
        raise InvalidInputError(f"input dim {h.shape[1]} != model input dim {matrices[0].shape[1]}")
    for i, m in enumerate(matrices):
        h = h @ m.T
        if i < len(matrices) - 1:
            h = modulus_softplus(h)
    out = log_softmax(np.abs(h) ** 2)
    return out[0] if single else out


def forward(model: IpnnModel, x) -> np.ndarray:
    return forward_matrices(model.matrices(), x)


def _accuracy_from_matrices(matrices, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise InvalidInputError("dataset is empty")
    logp = forward_matrices(matrices, dataset.samples)
    return float(np.mean(np.argmax(logp, axis=1) == dataset.labels))


def evaluate_accuracy(model: IpnnModel, dataset: Dataset) -> float:
    """Fraction of samples whose most probable class equals the label."""
    return _accuracy_from_matrices(model.matrices(), dataset)


def cross_entropy(model: IpnnModel, dataset: Dataset) -> float:
    logp = forward(model, dataset.samples)
    return float(-np.mean(logp[np.arange(len(dataset)), dataset.labels]))


# --- toy models -------------------------------------------------------------

TOY_AMPLITUDE = 3.0


def build_toy_classifier(n_classes: int) -> tuple[IpnnModel, Dataset]:
    """Identity layer on n modes; sample k is 3 * e_k labelled k."""
    if not 2 <= n_classes <= 16:
        raise InvalidInputError(f"n_classes must be in [2, 16], got {n_classes}")
    model = build_model([np.eye(n_classes)])
    data = Dataset(TOY_AMPLITUDE * np.eye(n_classes), np.arange(n_classes), n_classes)
    return model, data


def build_random_classifier(
    dims: Sequence[int], n_samples: int, seed: int, n_classes: int | None = None
) -> tuple[IpnnModel, Dataset]:
    """Random unitary-times-gain layers; labels are the nominal predictions.

    ``dims`` lists the widths from input to output, e.g. ``(8, 8, 8, 8)`` for
    three 8x8 layers. Nominal accuracy is 1.0 by construction.
    """
    if len(dims) < 2:
        raise InvalidInputError("dims needs an input and at least one output width")
    rng = np.random.default_rng(seed)
    weights = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        u = random_unitary(max(d_in, d_out), rng)[:d_out, :d_in]
        weights.append(TOY_AMPLITUDE * u / np.linalg.norm(u, 2))
    model = build_model(weights)
    x = (rng.standard_normal((n_samples, dims[0])) + 1j * rng.standard_normal((n_samples, dims[0]))) / math.sqrt(2)
    labels = np.argmax(forward(model, x), axis=1)
    n_classes = n_classes or dims[-1]
    return model, Dataset(x, labels, n_classes)


# --- finite-difference training --------------------------------------------


def model_parameters(model: IpnnModel) -> np.ndarray:
    """Flat vector of every trainable value: node phases, phase screens, diagonal scalars."""
    parts = []
    for layer in model.layers:
        for mesh in (layer.v_h_mesh, layer.u_mesh):
            for nd in mesh.nodes:
                parts.extend((nd.phases.theta, nd.phases.phi))
            parts.extend(mesh.phase_screen)
        parts.extend(layer.diag.scalars)
    return np.asarray(parts, dtype=np.float64)


def with_parameters(model: IpnnModel, params) -> IpnnModel:
    params = np.asarray(params, dtype=np.float64)
    pos = 0

    def take(k):
        nonlocal pos
        out = params[pos : pos + k]
        pos += k
        return out

    layers = []
    for layer in model.layers:
        meshes = []
        for mesh in (layer.v_h_mesh, layer.u_mesh):
            nodes = []
            for nd in mesh.nodes:
                th, ph = take(2)
                nodes.append(replace(nd, phases=PhasePair(th, ph)))
            screen = take(mesh.n)
            meshes.append(MeshPlan(n=mesh.n, nodes=tuple(nodes), phase_screen=tuple(screen)))
        scalars = np.clip(take(len(layer.diag.scalars)), 0.0, 1.0)
        diag = DiagonalStage(scalars=tuple(float(s) for s in scalars), gain=layer.diag.gain)
        layers.append(replace(layer, v_h_mesh=meshes[0], u_mesh=meshes[1], diag=diag))
    if pos != params.size:
        raise InvalidInputError(f"parameter vector has {params.size} entries, model needs {pos}")
    return IpnnModel(layers=tuple(layers))


def finite_difference_gradient(loss, params: np.ndarray, h: float = 1e-4) -> np.ndarray:
    grad = np.empty_like(params)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss(up) - loss(down)) / (2.0 * h)
    return grad


def train_finite_difference(
    shapes: Sequence[tuple[int, int]],
    dataset: Dataset,
    steps: int,
    learning_rate: float,
    seed: int,
    h: float = 1e-4,
    gain: float = TOY_AMPLITUDE,
    target_accuracy: float | None = None,
) -> IpnnModel:
    """Gradient descent on cross-entropy over all phases and diagonal scalars.

    ``shapes`` are (rows, cols) weight shapes. Each step uses central
    differences and halves the step until the loss does not increase, so the
    final loss never exceeds the initial one.
    """
    rng = np.random.default_rng(seed)
    weights = []
    for rows, cols in shapes:
        w = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
        weights.append(gain * w / np.linalg.norm(w, 2))
    model = build_model(weights)
    if steps <= 0:
        return model

    def loss(p):
        return cross_entropy(with_parameters(model, p), dataset)

    params = model_parameters(model)
    current = loss(params)
    lr = learning_rate
    for _ in range(steps):
        grad = finite_difference_gradient(loss, params, h)
        step = lr
        while step > learning_rate * 1e-6:
            trial = params - step * grad
            val = loss(trial)
            if val <= current:
                params, current = trial, val
                break
            step *= 0.5
        else:
            break
        if target_accuracy is not None:
            if evaluate_accuracy(with_parameters(model, params), dataset) >= target_accuracy:
                break
    return with_parameters(model, params)


# --- file formats -----------------------------------------------------------


def weights_to_json(weights: Sequence) -> dict:
    return {"format": FORMAT_VERSION, "layers": [matrix_to_json(w) for w in weights]}


def weights_from_json(obj: dict) -> list[np.ndarray]:
    if obj.get("format") != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported weight file format {obj.get('format')!r}")
    return [matrix_from_json(layer) for layer in obj["layers"]]


def dataset_to_json(data: Dataset) -> dict:
    return {
        "format": FORMAT_VERSION,
        "dim": data.dim,
        "classes": data.class_count,
        "samples": [
            {"re": x.real.tolist(), "im": x.imag.tolist(), "label": int(y)}
            for x, y in zip(data.samples, data.labels)
        ],
    }


def dataset_from_json(obj: dict) -> Dataset:
    if obj.get("format") != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported dataset file format {obj.get('format')!r}")
    try:
        dim, classes = int(obj["dim"]), int(obj["classes"])
        recs = obj["samples"]
        x = np.array([np.asarray(s["re"], float) + 1j * np.asarray(s["im"], float) for s in recs])
        y = np.array([int(s["label"]) for s in recs], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed dataset: {exc}") from exc
    if x.ndim != 2 or x.shape[1] != dim:
        raise InvalidInputError(f"dataset declares dim {dim}, samples have shape {x.shape}")
    return Dataset(x, y, classes)


def model_weights(model: IpnnModel) -> list[np.ndarray]:
    return model.matrices()


def save_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)
