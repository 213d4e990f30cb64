"""Command-line front end.

    mziforge run <config.json>
    mziforge decompose <unitary.json> -o <plan.json>
    mziforge verify <plan.json> <unitary.json>

Exit codes: 0 success, 1 runtime failure (or failed verification), 2 invalid
input or configuration.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import InvalidInputError
from .experiments import (
    THREADS_ENV,
    aggregated_accuracy_loss,
    heatmap_svg,
    per_mzi_rvd,
    resolve_threads,
    run_exp1,
    run_exp2,
    run_exp3,
    run_loss_sweep,
    run_quant_sweep,
    search_pstar,
    simulated_accuracy_loss,
    write_csv,
    write_json,
    write_sweep_csv,
)
from .imperfect import ImperfectionParameterSet
from .linalg import matrix_from_json, random_unitary, unitarity_error
from .mesh import clements_decompose, grid_layout, mesh_to_unitary, plan_from_json, plan_to_json, rvd
from .network import (
    build_model,
    build_random_classifier,
    build_toy_classifier,
    cross_entropy,
    dataset_from_json,
    evaluate_accuracy,
    train_finite_difference,
    weights_from_json,
    weights_to_json,
)

EXPERIMENTS = ("exp1", "exp2", "exp3", "rvd", "loss", "quant", "sal", "aal", "pstar", "toy-train", "decompose")

_num_list = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}
_bits = {"anyOf": [{"type": "integer", "minimum": 1}, {"type": "null"}]}
_selector = {"anyOf": [{"const": "all"}, {"type": "integer", "minimum": 0}]}

P_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sigma_phs": {"type": "number", "minimum": 0},
        "sigma_bes": {"type": "number", "minimum": 0},
        "corr_len": {"type": "integer", "minimum": 1},
        "sigma_il": {"type": "number", "minimum": 0},
        "n_bits": _bits,
        "radial": {"type": "boolean"},
        "mu_il": {"type": "number"},
        "quant_mode": {"enum": ["EVS", "EPS", "KC"]},
        "renormalize": {"type": "boolean"},
    },
}

MODEL_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "classes"],
            "properties": {"kind": {"const": "toy"}, "classes": {"type": "integer", "minimum": 2, "maximum": 16}},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "dims", "samples", "seed"],
            "properties": {
                "kind": {"const": "random"},
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "weights", "dataset"],
            "properties": {
                "kind": {"const": "file"},
                "weights": {"type": "string"},
                "dataset": {"type": "string"},
            },
        },
    ]
}


def _requires(exp: str, *keys: str) -> dict:
    return {"if": {"properties": {"experiment": {"const": exp}}}, "then": {"required": list(keys)}}


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "seed", "output_dir"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "threads": {"type": "integer", "minimum": 1},
        "model": MODEL_SCHEMA,
        "n_mc": {"type": "integer", "minimum": 1},
        "sigma_list": _num_list,
        "mode": {"enum": ["phs", "bes", "both"]},
        "sigma_in": {"type": "number", "minimum": 0},
        "sigma_out": {"type": "number", "minimum": 0},
        "region": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "corr_lens": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "radial": {"type": "boolean"},
        "renormalize": {"type": "boolean"},
        "unitary": {"type": "string"},
        "unitary_size": {"type": "integer", "minimum": 2},
        "sigma_phs": {"type": "number", "minimum": 0},
        "sigma_bes": {"type": "number", "minimum": 0},
        "mu_il_list": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "sigma_il_list": _num_list,
        "layer_selector": _selector,
        "modes": {"type": "array", "items": {"enum": ["EVS", "EPS", "KC"]}, "minItems": 1},
        "n_bits_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "background_bits": {"type": "integer", "minimum": 1},
        "p": P_SCHEMA,
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma_phs": _num_list,
                "sigma_bes": _num_list,
                "corr_len": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "sigma_il": _num_list,
                "n_bits": {"type": "array", "items": _bits, "minItems": 1},
            },
        },
        "alpha_max": {"type": "number", "minimum": 0, "maximum": 1},
        "shapes": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
            "minItems": 1,
        },
        "dataset": {"type": "string"},
        "steps": {"type": "integer", "minimum": 0},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "gain": {"type": "number", "exclusiveMinimum": 0},
    },
    "allOf": [
        _requires("exp1", "model", "sigma_list", "n_mc"),
        _requires("exp2", "model", "n_mc"),
        _requires("exp3", "model", "sigma_list", "corr_lens", "n_mc"),
        _requires("rvd", "sigma_phs", "sigma_bes", "n_mc"),
        _requires("loss", "model", "mu_il_list", "sigma_il_list", "n_mc"),
        _requires("quant", "model", "n_bits_list"),
        _requires("sal", "model", "p", "n_mc"),
        _requires("aal", "model", "p", "n_mc"),
        _requires("pstar", "model", "grids", "alpha_max", "n_mc"),
        _requires("toy-train", "shapes", "dataset", "steps", "learning_rate"),
        _requires("decompose", "unitary"),
    ],
}


class ConfigError(Exception):
    """Invalid configuration; message carries the location."""


def load_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def validate_config(cfg, source: str = "<config>") -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: [str(x) for x in e.absolute_path])
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "(root)"
            lines.append(f"{source}: field {where}: {e.message}")
        raise ConfigError("\n".join(lines))


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else (base / p)


def _load_model(spec: dict, base: Path):
    kind = spec["kind"]
    if kind == "toy":
        return build_toy_classifier(spec["classes"])
    if kind == "random":
        return build_random_classifier(tuple(spec["dims"]), spec["samples"], spec["seed"])
    try:
        weights = weights_from_json(load_json(_resolve(base, spec["weights"])))
        data = dataset_from_json(load_json(_resolve(base, spec["dataset"])))
    except KeyError as exc:
        raise InvalidInputError(f"missing field {exc}") from exc
    return build_model(weights), data


class _Writer:
    """Writes files under one directory and records their names."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        if Path(name).name != name:
            raise InvalidInputError(f"output name {name!r} must be a bare file name")
        self.files.append(name)
        return self.out_dir / name


def _p_from(d: dict) -> ImperfectionParameterSet:
    return ImperfectionParameterSet(**d)


def run_experiment(cfg: dict, base: Path, out: _Writer, threads: int) -> dict:
    """Dispatch one validated config; returns a JSON-able result summary."""
    exp, seed = cfg["experiment"], cfg["seed"]
    model = data = None
    if "model" in cfg and exp not in ("rvd", "decompose", "toy-train"):
        model, data = _load_model(cfg["model"], base)
    n_mc = cfg.get("n_mc", 10)

    if exp in ("exp1", "exp3", "loss", "quant"):
        if exp == "exp1":
            res = run_exp1(model, data, cfg["sigma_list"], cfg.get("mode", "phs"), n_mc, seed, threads)
        elif exp == "exp3":
            res = run_exp3(
                model, data, cfg["sigma_list"], cfg["corr_lens"], cfg.get("radial", False),
                cfg.get("mode", "phs"), n_mc, seed, threads, cfg.get("renormalize", True),
            )
        elif exp == "loss":
            res = run_loss_sweep(
                model, data, cfg["mu_il_list"], cfg["sigma_il_list"], cfg.get("layer_selector", "all"),
                n_mc, seed, threads,
            )
        else:
            res = run_quant_sweep(
                model, data, tuple(cfg.get("modes", ("EVS", "EPS", "KC"))), cfg["n_bits_list"],
                cfg.get("layer_selector", "all"), cfg.get("background_bits", 8),
            )
        write_sweep_csv(res, out.path("results.csv"))
        return res.to_dict()

    if exp == "exp2":
        maps = run_exp2(
            model, data, cfg.get("sigma_in", 0.1), cfg.get("sigma_out", 0.05), n_mc, seed, threads,
            tuple(cfg.get("region", (2, 2))),
        )
        summary = []
        for h in maps:
            stem = f"heatmap_mesh{h.mesh_index}"
            write_csv([f"col{c}" for c in range(h.values.shape[1])], h.values.tolist(), out.path(stem + ".csv"))
            out.path(stem + ".svg").write_text(heatmap_svg(h.values))
            summary.append(
                {
                    "mesh_index": h.mesh_index,
                    "layer_index": h.layer_index,
                    "matrix": h.matrix,
                    "values": h.values.tolist(),
                    "partial_rows": h.partial_rows,
                    "partial_cols": h.partial_cols,
                }
            )
        return {"experiment": "exp2", "n_mc": n_mc, "seed": seed, "heatmaps": summary}

    if exp == "rvd":
        if "unitary" in cfg:
            u = matrix_from_json(load_json(_resolve(base, cfg["unitary"])))
        else:
            u = random_unitary(cfg.get("unitary_size", 5), np.random.default_rng(seed))
        vals = per_mzi_rvd(u, cfg["sigma_phs"], cfg["sigma_bes"], n_mc, seed)
        slots = grid_layout(u.shape[0])
        rows = [[k, s[0], s[1], float(v), n_mc, seed] for k, (s, v) in enumerate(zip(slots, vals))]
        write_csv(["node", "layer", "top_mode", "mean_rvd", "n_mc", "seed"], rows, out.path("results.csv"))
        return {"experiment": "rvd", "mean_rvd": vals.tolist(), "n_mc": n_mc, "seed": seed}

    if exp == "sal":
        rep = simulated_accuracy_loss(model, data, _p_from(cfg["p"]), n_mc, seed, threads)
        rows = [[i, a] for i, a in enumerate(rep.per_run_accuracy)]
        write_csv(["stream", "accuracy"], rows, out.path("results.csv"))
        return rep.to_dict()

    if exp == "aal":
        p = _p_from(cfg["p"])
        total, reps = aggregated_accuracy_loss(model, data, p, n_mc, seed, threads, return_terms=True)
        full = simulated_accuracy_loss(model, data, p, n_mc, seed, threads)
        names = ("sigma_phs", "sigma_bes", "corr_len", "sigma_il", "n_bits")
        rows = [[n, r.sal, r.mean_accuracy, r.std_accuracy, n_mc, seed] for n, r in zip(names, reps)]
        rows.append(["aal", total, "", "", n_mc, seed])
        rows.append(["sal", full.sal, full.mean_accuracy, full.std_accuracy, n_mc, seed])
        write_csv(["term", "sal", "mean", "std", "n_mc", "seed"], rows, out.path("results.csv"))
        return {"aal": total, "sal": full.sal, "terms": [r.to_dict() for r in reps]}

    if exp == "pstar":
        res = search_pstar(model, data, cfg["grids"], cfg["alpha_max"], n_mc, seed, threads)
        keys = ("sigma_phs", "sigma_bes", "corr_len", "sigma_il", "n_bits")
        rows = []
        for p, sal in res.evaluated:
            rows.append([getattr(p, k) for k in keys] + [sal, int(sal <= res.alpha_max), int(p in res.pareto)])
        write_csv(list(keys) + ["sal", "feasible", "pareto"], rows, out.path("results.csv"))
        return {
            "alpha_max": res.alpha_max,
            "n_p": res.n_p,
            "seed": seed,
            "pareto": [p.to_dict() for p in res.pareto],
        }

    if exp == "toy-train":
        data = dataset_from_json(load_json(_resolve(base, cfg["dataset"])))
        model = train_finite_difference(
            [tuple(s) for s in cfg["shapes"]], data, cfg["steps"], cfg["learning_rate"], seed,
            gain=cfg.get("gain", 1.0),
        )
        write_json(weights_to_json(model.matrices()), out.path("weights.json"))
        return {"accuracy": evaluate_accuracy(model, data), "cross_entropy": cross_entropy(model, data)}

    if exp == "decompose":
        u = matrix_from_json(load_json(_resolve(base, cfg["unitary"])))
        plan = clements_decompose(u)
        write_json(plan_to_json(plan), out.path("plan.json"))
        return {"n": plan.n, "nodes": len(plan.nodes), "rvd": rvd(mesh_to_unitary(plan), u)}

    raise InvalidInputError(f"unknown experiment {exp!r}")


def cmd_run(args) -> int:
    cfg_path = Path(args.config)
    try:
        cfg = load_json(cfg_path)
        validate_config(cfg, str(cfg_path))
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    base = cfg_path.resolve().parent
    out_dir = _resolve(base, cfg["output_dir"])
    try:
        threads = resolve_threads(args.threads if args.threads is not None else cfg.get("threads"))
    except InvalidInputError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        writer = _Writer(out_dir)
        result = run_experiment(cfg, base, writer, threads)
        envelope = {"config": cfg, "result": result, "version": __version__}
        write_json(envelope, writer.path("results.json"))
        wall = time.perf_counter() - start
        manifest = {
            "config": cfg,
            "seed": cfg["seed"],
            "threads": threads,
            "tool": "mziforge",
            "version": __version__,
            "wall_time_s": wall,
            "files": sorted(writer.files),
        }
        write_json(manifest, out_dir / "manifest.json")
    except (InvalidInputError, ConfigError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported to the user, exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"{cfg['experiment']}: wrote {len(writer.files) + 1} files to {out_dir} in {wall:.2f} s")
    return 0


def cmd_decompose(args) -> int:
    try:
        u = matrix_from_json(load_json(Path(args.unitary)))
        plan = clements_decompose(u)
    except (ConfigError, InvalidInputError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    try:
        write_json(plan_to_json(plan), Path(args.output))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"decomposed {plan.n}x{plan.n} unitary into {len(plan.nodes)} MZIs -> {args.output}")
    return 0


def cmd_verify(args) -> int:
    try:
        plan = plan_from_json(load_json(Path(args.plan)))
        u = matrix_from_json(load_json(Path(args.unitary)))
        if u.shape != (plan.n, plan.n):
            raise InvalidInputError(f"unitary shape {u.shape} does not match a {plan.n}-mode plan")
    except (ConfigError, InvalidInputError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    rebuilt = mesh_to_unitary(plan)
    err = unitarity_error(rebuilt)
    dist = rvd(rebuilt, u)
    ok = dist < 1e-6
    if not args.quiet:
        print(f"unitarity_error {err:.6e}")
        print(f"rvd {dist:.6e}")
        print("OK" if ok else "MISMATCH")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mziforge", description="MZI mesh imperfection simulator")
    parser.add_argument("--version", action="version", version=f"mziforge {__version__}")
    parser.add_argument("--threads", type=int, default=None, help=f"worker threads (fallback: ${THREADS_ENV})")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_dec = sub.add_parser("decompose", help="factor a unitary into a mesh plan")
    p_dec.add_argument("unitary")
    p_dec.add_argument("-o", "--output", required=True)
    p_dec.set_defaults(func=cmd_decompose)

    p_ver = sub.add_parser("verify", help="compare a mesh plan against a unitary")
    p_ver.add_argument("plan")
    p_ver.add_argument("unitary")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
