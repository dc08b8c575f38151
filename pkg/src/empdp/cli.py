"""Command-line front end: ``empdp {estimate,curve,noise,sample,conditional,self-check}``.

Every option can also be given in a JSON file passed with ``--config``; keys are
the long flag names with dashes replaced by underscores, and flags given on the
command line win. The whole configuration is validated before any computation,
and outputs are written only after every computation has succeeded.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 computation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from empdp.dataset import DataError, load_collection
from empdp.density import (
    ESTIMATORS,
    KERNELS,
    DensityError,
    FitConfig,
    ModelSpec,
    format_densities,
    select_spec,
    silverman_scale,
)
from empdp.noise import (
    DISTANCES,
    DeconvolutionGrid,
    KernelSpec,
    NoiseError,
    NoiseKernel,
    deconvolve,
    kernel_from_table,
    kernel_hash,
    noised_responses,
    sample_noise,
    select_lambda,
    verify_epsilon,
)
from empdp.privacy import Analysis, PrivacyError, conditional_privacy
from empdp.queries import LeaveOneOut, QueryError, QuerySpec, eval_all, parse_query
from empdp.selfcheck import run_self_check

log = logging.getLogger("empdp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_COMPUTE = 0, 2, 3, 4
COMMANDS = ("estimate", "curve", "noise", "sample", "conditional", "self-check")
KERNEL_FILE = "noise_kernel.csv"


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (exit 2)."""


# ------------------------------------------------------------------ value parsing


def _floats(value) -> tuple[float, ...]:
    """Comma list, JSON list, or ``start:stop:count`` (inclusive linspace)."""
    if isinstance(value, (int, float)):
        return (float(value),)
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    text = str(value).strip()
    if not text:
        return ()
    if ":" in text:
        lo, hi, count = text.split(":")
        return tuple(np.linspace(float(lo), float(hi), int(count)).tolist())
    return tuple(float(v) for v in text.split(","))


def _names(value) -> tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value)
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


def _query(value) -> QuerySpec:
    if isinstance(value, (dict, list)):
        return QuerySpec.from_dict(value)
    return parse_query(str(value))


def _variable(value) -> tuple[bool, ...]:
    options = {"fixed": (False,), "variable": (True,), "both": (False, True)}
    if value not in options:
        raise ValueError(f"variable must be one of {sorted(options)}")
    return options[value]


def _kernel_scale(value):
    if isinstance(value, str) and value in ("silverman", "selected"):
        return value
    return float(value)


def _choice(options) -> Callable[[Any], str]:
    def parse(value):
        if value not in options:
            raise ValueError(f"must be one of {sorted(options)}")
        return value

    return parse


# key -> (parser, help). Keys double as JSON config keys and ``--key-name`` flags.
OPTIONS: dict[str, tuple[Callable, str]] = {
    "input": (str, "collection: directory of CSVs or one long-format CSV"),
    "layout": (_choice(("dir", "long")), "input layout (default: inferred)"),
    "query": (_query, "query, e.g. mean:precip, quantile:v:0.9, sum:v,count, or JSON"),
    "epsilon": (float, "target epsilon"),
    "epsilon_grid": (_floats, "increasing epsilons: a,b,c or start:stop:count"),
    "seed": (int, "seed for CV folds and noise sampling (default 0)"),
    "out_dir": (str, "output directory"),
    "threads": (int, "worker threads for per-individual fits"),
    "dump_densities": (int, "write (x, p, p_i) for the m individuals with largest delta_i"),
    # density estimation
    "estimator": (_choice(ESTIMATORS), "density estimator"),
    "kernels": (_names, "candidate kernels, comma separated"),
    "scale_grid": (_floats, "bandwidth candidates as multiples of the sample sd"),
    "variable": (_variable, "bandwidth type: fixed, variable or both"),
    "k_nn": (int, "neighbour count for variable bandwidths"),
    "cv_folds": (int, "cross-validation folds"),
    "density_floor": (float, "held-out density floor"),
    "min_scale": (float, "bandwidth for degenerate samples"),
    "grid_points": (int, "1-D integration grid base points"),
    "grid_points_2d": (int, "2-D integration grid base points per axis"),
    "tail_bandwidths": (float, "integration grid margin in bandwidths"),
    "bandwidth": (_floats, "skip selection and use this bandwidth (one per dimension)"),
    "bandwidth_kernel": (_choice(KERNELS), "kernel used with --bandwidth (default laplace)"),
    # noise
    "kernel": (_choice(("laplace", "gaussian")), "inference kernel family k"),
    "kernel_scale": (_kernel_scale, "inference kernel scale s: a number, silverman or selected"),
    "distance": (_choice(tuple(DISTANCES)), "set distance for lambda (default matching)"),
    "fft_points": (int, "Fourier grid size"),
    "fft_span": (float, "Fourier grid Nyquist span in units of 1/lambda"),
    "reg_floor": (float, "transform floor for spectral division"),
    "clip_budget": (float, "largest tolerated clipped spectral fraction"),
    "verify_points": (int, "grid points for the log-ratio verification"),
    # conditional
    "adversary_query": (_query, "adversary knowledge query g"),
    "buckets": (int, "number of quantile buckets of g"),
    "min_bucket_samples": (int, "databases needed for a bucket to count"),
    # sample
    "manifest": (str, "manifest.json written by the noise command"),
    "count": (int, "number of noise draws"),
    "responses": (str, "CSV of raw responses to noise (column 'response' or the only column)"),
    # self-check
    "tolerance_scale": (float, "multiply every self-check tolerance"),
}

REQUIRED = {
    "estimate": ("input", "query", "epsilon"),
    "curve": ("input", "query", "epsilon_grid"),
    "noise": ("input", "query", "epsilon"),
    "sample": ("manifest",),
    "conditional": ("input", "query", "adversary_query", "buckets", "epsilon"),
    "self-check": (),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one command."""

    command: str
    values: dict = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.values.get("seed", 0))

    @property
    def out_dir(self) -> Path:
        return Path(self.values.get("out_dir", "."))

    def to_dict(self) -> dict:
        out = {}
        for key, value in sorted(self.values.items()):
            if isinstance(value, QuerySpec):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out


def _fit_config(values: dict) -> FitConfig:
    kwargs = {}
    for key in ("estimator", "kernels", "scale_grid", "variable", "k_nn", "cv_folds",
                "density_floor", "min_scale", "grid_points", "grid_points_2d", "tail_bandwidths"):
        if key in values:
            kwargs[key] = values[key]
    kwargs["seed"] = int(values.get("seed", 0))
    if "bandwidth" in values:
        kwargs["fixed"] = ModelSpec("kde", values.get("bandwidth_kernel", "laplace"), values["bandwidth"])
    return FitConfig(**kwargs)


def build_config(command: str, raw: dict) -> RunConfig:
    """Parse and validate raw option values (from file and flags) into a RunConfig."""
    unknown = set(raw) - set(OPTIONS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    values = {}
    for key, value in raw.items():
        parser = OPTIONS[key][0]
        try:
            values[key] = parser(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key}: {value!r} ({exc})") from exc
    missing = [k for k in REQUIRED[command] if k not in values]
    if missing:
        raise ConfigError(f"{command} needs: {', '.join('--' + k.replace('_', '-') for k in missing)}")
    for key in ("epsilon",):
        if key in values and not (values[key] > 0 and math.isfinite(values[key])):
            raise ConfigError("epsilon must be positive")
    if command == "curve":
        grid = np.asarray(values["epsilon_grid"])
        if len(grid) == 0:
            raise ConfigError("epsilon grid is empty")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ConfigError("epsilon grid must be positive and strictly increasing")
    for key in ("threads", "buckets", "count", "fft_points", "verify_points"):
        if key in values and values[key] < 1:
            raise ConfigError(f"{key} must be at least 1")
    for key in ("dump_densities", "min_bucket_samples"):
        if key in values and values[key] < 0:
            raise ConfigError(f"{key} must be nonnegative")
    if "tolerance_scale" in values and values["tolerance_scale"] < 0:
        raise ConfigError("tolerance_scale must be nonnegative")
    if command in ("noise", "conditional"):
        q = values["query"]
        if q.dim != 1 and command == "noise":
            raise ConfigError("noise calibration needs a one-dimensional query")
    if "adversary_query" in values and values["adversary_query"].dim != 1:
        raise ConfigError("adversary query must be one-dimensional")
    if isinstance(values.get("kernel_scale"), float) and not values["kernel_scale"] > 0:
        raise ConfigError("kernel scale must be positive")
    if command == "sample" and "count" not in values and "responses" not in values and "input" not in values:
        raise ConfigError("sample needs --count, --responses, or --input with --query")
    if command == "sample" and "input" in values and "query" not in values:
        raise ConfigError("sample with --input needs --query")
    try:
        fit = _fit_config(values)
        if command == "noise":
            _deconvolution_grid(values)
    except (ValueError, DensityError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(command, values, fit)


def _deconvolution_grid(values: dict) -> DeconvolutionGrid:
    base = DeconvolutionGrid()
    grid = DeconvolutionGrid(
        points=values.get("fft_points", base.points),
        span=values.get("fft_span", base.span),
        reg_floor=values.get("reg_floor", base.reg_floor),
        clip_budget=values.get("clip_budget", base.clip_budget),
    )
    if grid.points < 16 or not grid.span > 0 or not grid.reg_floor > 0 or not 0 <= grid.clip_budget <= 1:
        raise ConfigError("invalid Fourier grid settings")
    return grid


# ------------------------------------------------------------------ outputs


def _json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        tmp = out_dir / f".{name}.tmp"
        tmp.write_text(text, encoding="utf-8", newline="\n")
        os.replace(tmp, out_dir / name)


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)[:80] or "id"


# ------------------------------------------------------------------ commands


def _analysis(cfg: RunConfig) -> Analysis:
    c = load_collection(cfg.get("input"), cfg.get("layout"))
    return Analysis(c, cfg.get("query"), cfg.fit)


def _density_dumps(analysis: Analysis, report, m: int) -> dict[str, str]:
    files = {}
    for rank, (i, _) in enumerate(report.per_individual[:m], start=1):
        pair = analysis.pair(i)
        files[f"density_{rank:03d}_{_safe_name(i)}.csv"] = format_densities(
            pair.grid, {"p": pair.p, "p_i": pair.p_i}
        )
    return files


def cmd_estimate(cfg: RunConfig) -> dict[str, str]:
    analysis = _analysis(cfg)
    report = analysis.run([cfg.get("epsilon")], cfg.get("threads", 1)).reports[0]
    out = report.to_dict()
    out["config"] = cfg.to_dict()
    files = {"privacy_report.json": _json(out)}
    files.update(_density_dumps(analysis, report, cfg.get("dump_densities", 0)))
    print(f"epsilon={report.epsilon:g} delta={report.delta:.6g} delta_star={report.delta_star:.6g}")
    return files


def cmd_curve(cfg: RunConfig) -> dict[str, str]:
    analysis = _analysis(cfg)
    curve = analysis.run(cfg.get("epsilon_grid"), cfg.get("threads", 1))
    first = curve.reports[0]
    body = {
        "points": [{"epsilon": e, "delta": d, "delta_star": s} for e, d, s in curve.points],
        "n_databases": first.n_databases,
        "flags": first.flags,
        "model": first.model,
        "config": cfg.to_dict(),
    }
    files = {"risk_curve.csv": curve.to_csv(), "risk_curve.json": _json(body)}
    worst = max(curve.reports, key=lambda r: r.delta)
    files.update(_density_dumps(analysis, worst, cfg.get("dump_densities", 0)))
    print(f"{len(curve.points)} epsilon values written")
    return files


def _inference_kernel(cfg: RunConfig, responses: np.ndarray) -> KernelSpec:
    family = cfg.get("kernel", "laplace")
    scale = cfg.get("kernel_scale", "selected")
    if scale == "silverman":
        scale = silverman_scale(responses)
    elif scale == "selected":
        fit = replace(cfg.fit, estimator="kde", kernels=(family,), variable=(False,), fixed=None)
        scale = select_spec(responses, fit).spec.scale[0]
    return KernelSpec(family, float(scale))


def _verify(c, q, eps, lam, points) -> dict:
    """Largest log density ratio of the Laplace(lam) estimates over all individuals."""
    loo = LeaveOneOut(q, c)
    full = loo.full.points[:, 0]
    worst = (0.0, None)
    ids = sorted({v for d in c.databases for v in d.individual_ids.tolist()})
    for i in ids:
        check = verify_epsilon(full, loo.without(i).points[:, 0], eps, lam=lam, points=points)
        if check.supremum > worst[0]:
            worst = (check.supremum, i)
    return {
        "max_log_ratio": worst[0],
        "individual": worst[1],
        "ratio_to_epsilon": worst[0] / eps,
        "passed": worst[0] <= eps * (1 + 1e-9),
        "grid_points": points,
    }


def cmd_noise(cfg: RunConfig) -> dict[str, str]:
    c = load_collection(cfg.get("input"), cfg.get("layout"))
    q = cfg.get("query")
    eps = cfg.get("epsilon")
    distance = cfg.get("distance", "matching")
    selection = select_lambda(c, q, eps, distance)
    lam = selection.lam
    responses = eval_all(q, c).points[:, 0]
    k = _inference_kernel(cfg, responses)
    if lam == 0:
        h = NoiseKernel.identity()
        verification = {"max_log_ratio": 0.0, "passed": True, "note": "no individual changes the responses"}
    else:
        if k.scale >= lam:
            raise ConfigError(
                f"inference kernel scale s={k.scale:.6g} must satisfy s < lambda={lam:.6g}; "
                "pick a smaller --kernel-scale"
            )
        h = deconvolve(k, lam, _deconvolution_grid(cfg.values))
        verification = _verify(c, q, eps, lam, cfg.get("verify_points", 20_000))
    table = h.to_csv()
    manifest = {
        "query": q.to_dict(),
        "epsilon": eps,
        "distance": distance,
        "lambda": lam,
        "lambda_i": selection.extremes(),
        "kernel": {**h.metadata(), "inference_kernel": {"family": k.family, "scale": k.scale}},
        "kernel_file": KERNEL_FILE,
        "kernel_hash": kernel_hash(table),
        "seed": cfg.seed,
        "n_databases": len(c),
        "verification": verification,
        "config": cfg.to_dict(),
    }
    print(f"lambda={lam:.6g} form={h.form} polar_moment={h.polar_moment:.6g}")
    return {KERNEL_FILE: table, "manifest.json": _json(manifest)}


def _read_responses(path: str) -> np.ndarray:
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read responses {path}: {exc}") from exc
    if "response" in frame.columns:
        col = frame["response"]
    elif frame.shape[1] == 1:
        col = frame.iloc[:, 0]
    else:
        raise DataError("responses file needs a 'response' column")
    values = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("responses must be finite numbers")
    return values


def cmd_sample(cfg: RunConfig) -> dict[str, str]:
    manifest_path = Path(cfg.get("manifest"))
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        table = (manifest_path.parent / manifest["kernel_file"]).read_text(encoding="utf-8")
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read manifest or kernel file: {exc}") from exc
    if kernel_hash(table) != manifest.get("kernel_hash"):
        raise DataError("kernel file hash does not match the manifest (file modified or corrupted)")
    h = kernel_from_table(table, manifest["kernel"])
    seed = cfg.seed if "seed" in cfg.values else int(manifest.get("seed", 0))
    record = {"seed": seed, "kernel_hash": manifest["kernel_hash"], "manifest": str(manifest_path)}
    if "responses" in cfg.values:
        raw = _read_responses(cfg.get("responses"))
        noised = noised_responses(raw, h, seed)
        lines = ["response,noised"] + [f"{a!r},{b!r}" for a, b in zip(raw.tolist(), noised.tolist())]
    elif "input" in cfg.values:
        c = load_collection(cfg.get("input"), cfg.get("layout"))
        raw = eval_all(cfg.get("query"), c).points[:, 0]
        noised = noised_responses(raw, h, seed)
        lines = ["database_id,response,noised"] + [
            f"{d.id},{a!r},{b!r}" for d, a, b in zip(c.databases, raw.tolist(), noised.tolist())
        ]
    else:
        draws = sample_noise(h, seed, cfg.get("count"))
        lines = ["noise"] + [repr(v) for v in draws.tolist()]
    record["count"] = len(lines) - 1
    print(f"{record['count']} samples written (seed {seed})")
    return {"samples.csv": "\n".join(lines) + "\n", "samples.json": _json(record)}


def cmd_conditional(cfg: RunConfig) -> dict[str, str]:
    c = load_collection(cfg.get("input"), cfg.get("layout"))
    report = conditional_privacy(
        c,
        cfg.get("query"),
        cfg.get("adversary_query"),
        cfg.get("buckets"),
        cfg.get("epsilon"),
        cfg.fit,
        min_bucket_samples=cfg.get("min_bucket_samples", 10),
        threads=cfg.get("threads", 1),
    )
    out = report.to_dict()
    out["config"] = cfg.to_dict()
    print(f"worst bucket {report.worst}: delta={report.delta:.6g} delta_star={report.delta_star:.6g}")
    return {"conditional_report.json": _json(out)}


def cmd_self_check(cfg: RunConfig) -> tuple[dict[str, str], bool]:
    results = run_self_check(cfg.seed, cfg.get("tolerance_scale", 1.0))
    ok = all(r.passed for r in results)
    summary = {"passed": ok, "seed": cfg.seed, "checks": [r.to_dict() for r in results]}
    text = _json(summary)
    sys.stdout.write(text)
    files = {"self_check.json": text} if "out_dir" in cfg.values else {}
    return files, ok


HANDLERS = {
    "estimate": cmd_estimate,
    "curve": cmd_curve,
    "noise": cmd_noise,
    "sample": cmd_sample,
    "conditional": cmd_conditional,
}


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values; flags override it")
    for key, (_, text) in OPTIONS.items():
        common.add_argument("--" + key.replace("_", "-"), dest=key, help=text)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="empdp", description="Empirical differential privacy of statistical queries.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _fail(code: int, message: str) -> int:
    print(f"empdp: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = _load_config_file(args.pop("config")) if "config" in args else {}
        raw.update(args)
        cfg = build_config(command, raw)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))

    ok = True
    try:
        if command == "self-check":
            files, ok = cmd_self_check(cfg)
        else:
            files = HANDLERS[command](cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (DataError, QueryError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except (PrivacyError, DensityError, NoiseError, ValueError, FloatingPointError) as exc:
        return _fail(EXIT_COMPUTE, str(exc))
    try:
        _write_outputs(cfg.out_dir, files)
    except OSError as exc:
        return _fail(EXIT_DATA, f"cannot write outputs: {exc}")
    return EXIT_OK if ok else EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
