"""Command-line front end.

Commands: ``fit``, ``certify``, ``simulate`` and ``design-weights``. Exit codes:
0 success, 2 invalid input, 3 non-convergence, 4 simulation produced an
invalid cell. Errors are reported on stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np
from scipy.stats import norm

from .errors import NotConverged, SubscedError
from .linmodel import Design, fls_fit
from .robust.hc import HCVariant, hc_cov, homoscedastic_cov
from .robust.huber import HuberParams, huber_fit, huber_sandwich_cov
from .robust.tfit import t_em_fit, t_sandwich_ci
from .simharness import ExperimentSpec, ResultTable, load_csv_matrix, run_experiment
from .subscedastic import brute_force_excess, certify
from .weightdesign import (
    GroupSpec,
    MixedSpec,
    ParametricForm,
    VarianceForm,
    covariate_weights,
    groupwise_weights,
    mixed_effects_weights,
    parametric_fls_weights,
    variance_function,
)

__all__ = ["main", "build_parser", "dumps", "load_schema", "bundled_path"]

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_INVALID_CELL = 0, 2, 3, 4
ORACLE_TOL = 1e-10


class CLIError(Exception):
    def __init__(self, code: int, kind: str, reason: str):
        super().__init__(reason)
        self.code, self.kind, self.reason = code, kind, reason


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(EXIT_INPUT, "usage", message)


# -- serialization -----------------------------------------------------------

def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def dumps(obj: Any) -> str:
    """JSON with round-trip exact floats; non-finite numbers become null."""
    return json.dumps(_plain(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def load_schema(name: str) -> dict:
    return json.loads(resources.files("subsced").joinpath("schemas", f"{name}.schema.json").read_text())


def _validated(obj: Any, schema: str) -> Any:
    obj = _plain(obj)
    jsonschema.validate(obj, load_schema(schema))
    return obj


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("subsced").joinpath("data", name)))


def _emit(obj: Any, schema: str, out: str | None) -> None:
    text = dumps(_validated(obj, schema))
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fmt(v: float) -> str:
    return repr(float(v)) if np.isfinite(v) else ""


# -- input helpers -----------------------------------------------------------

def _read_vector(path: str) -> np.ndarray:
    """One-column CSV with a header row (as written by ``design-weights``)."""
    try:
        data, header, _ = load_csv_matrix(path)
    except OSError as e:
        raise CLIError(EXIT_INPUT, "io", f"{path}: {e.strerror}") from None
    if data.shape[1] != 1:
        raise CLIError(EXIT_INPUT, "validation", f"{path}: expected one column, got {data.shape[1]}")
    return data[:, 0]


def _read_data(path: str, response: str | None, drop: Sequence[str] = ()):
    try:
        data, header, y = load_csv_matrix(path, response)
    except OSError as e:
        raise CLIError(EXIT_INPUT, "io", f"{path}: {e.strerror}") from None
    keep = [i for i, h in enumerate(header) if h not in drop]
    return data[:, keep], [header[i] for i in keep], y, data, header


def _with_intercept(X: np.ndarray, names: list[str], intercept: bool):
    if not intercept:
        return X, names
    return np.hstack([np.ones((X.shape[0], 1)), X]), ["(intercept)"] + names


def _parse_list(text: str, cast=float) -> list:
    try:
        return [cast(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CLIError(EXIT_INPUT, "validation", f"cannot parse list {text!r}") from None


# -- fit ---------------------------------------------------------------------

def _wald(beta: np.ndarray, cov: np.ndarray, alpha: float) -> np.ndarray:
    half = norm.ppf(1 - alpha / 2) * np.sqrt(np.diag(cov))
    return np.column_stack([beta - half, beta + half])


def cmd_fit(args) -> int:
    drop = [args.group_column] if args.group_column else []
    X, names, y, _, _ = _read_data(args.data, args.response, drop)
    X, names = _with_intercept(X, names, not args.no_intercept)
    design = Design(X)
    if args.method in ("wls", "fls") and not args.weights:
        raise CLIError(EXIT_INPUT, "validation", f"--method {args.method} requires --weights")
    if args.method not in ("wls", "fls") and args.weights:
        raise CLIError(EXIT_INPUT, "validation", "--weights only applies to wls/fls")
    if args.method != "t" and (args.nu is not None or args.adaptive_nu):
        raise CLIError(EXIT_INPUT, "validation", "--nu/--adaptive-nu only apply to --method t")
    if not 0 < args.alpha < 1:
        raise CLIError(EXIT_INPUT, "validation", "--alpha must lie in (0, 1)")
    diag: dict[str, Any] = {"converged": True, "iterations": 0}
    if args.method in ("ols", "wls", "fls"):
        w = np.ones(design.n) if args.method == "ols" else _read_vector(args.weights)
        fit = fls_fit(design, y, None if args.method == "ols" else w)
        e = y - X @ fit.beta
        s = 1.0 / np.sqrt(w)
        # covariance estimates computed on the whitened problem
        wdesign = Design(X * s[:, None])
        est = args.cov
        cov = homoscedastic_cov(wdesign, e * s) if est == "hom" else hc_cov(wdesign, e * s, HCVariant(est))
        estimator = "homoscedastic" if est == "hom" else est
        intervals = _wald(fit.beta, cov, args.alpha)
        beta, diag["objective"] = fit.beta, fit.objective
    elif args.method == "t":
        try:
            fit, params, trace = t_em_fit(design, y, fix_nu=None if args.adaptive_nu else (args.nu or 7.0),
                                          max_iter=args.max_iter or 500)
        except NotConverged as e:
            raise CLIError(EXIT_NOT_CONVERGED, "not_converged", str(e)) from None
        intervals, cov = t_sandwich_ci(design, y, params, args.alpha)
        estimator, beta = "t-sandwich", params.beta
        diag.update(iterations=trace.iterations, objective=fit.objective, nu=params.nu, omega0=params.omega0,
                    adaptive_nu=bool(args.adaptive_nu))
    else:
        k = args.k if args.k is not None else HuberParams().k
        try:
            fit = huber_fit(design, y, HuberParams(k), max_iter=args.max_iter or 10000)
        except NotConverged as e:
            raise CLIError(EXIT_NOT_CONVERGED, "not_converged", str(e)) from None
        cov = huber_sandwich_cov(design, y - X @ fit.beta, k)
        estimator, beta = "huber-sandwich", fit.beta
        intervals = _wald(beta, cov, args.alpha)
        diag.update(iterations=fit.iterations, objective=fit.objective, k=k)
    report = {
        "method": args.method,
        "n": design.n,
        "p": design.p,
        "columns": names,
        "coefficients": beta,
        "covariance": {"estimator": estimator, "matrix": cov},
        "alpha": args.alpha,
        "intervals": intervals,
        "diagnostics": diag,
    }
    _emit(report, "fit", args.out)
    return EXIT_OK


# -- certify -----------------------------------------------------------------

def certify_report(candidate, truth, oracle: bool = False) -> dict:
    cert = certify(candidate, truth)
    out = cert.to_dict()
    if oracle:
        excess, _ = brute_force_excess(candidate, truth)
        out["oracle"] = {"excess": excess if np.isfinite(excess) else None,
                         "agreement": bool(cert.verdict == (not excess > ORACLE_TOL))}
    return out


def cmd_certify(args) -> int:
    c, t = _read_vector(args.candidate), _read_vector(args.truth)
    _emit(certify_report(c, t, args.oracle), "certificate", args.out)
    return EXIT_OK


# -- simulate ----------------------------------------------------------------

def _resolve_spec_path(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    b = bundled_path(p.name)
    if b.exists():
        return b
    raise CLIError(EXIT_INPUT, "io", f"{path}: no such file")


def load_experiments(path: str) -> tuple[list[ExperimentSpec], bytes]:
    p = _resolve_spec_path(path)
    raw = p.read_bytes()
    try:
        doc = json.loads(raw)
        jsonschema.validate(doc, load_schema("spec"))
    except (json.JSONDecodeError, jsonschema.ValidationError) as e:
        raise CLIError(EXIT_INPUT, "invalid_spec", f"{p}: {getattr(e, 'message', str(e))}") from None
    items = doc["experiments"] if "experiments" in doc else [doc]
    specs = []
    for item in items:
        item = dict(item)
        if item.get("csv_path") and not Path(item["csv_path"]).is_absolute():
            local = p.parent / item["csv_path"]
            item["csv_path"] = str(local if local.exists() else bundled_path(item["csv_path"]))
        specs.append(ExperimentSpec.from_dict(item))
    return specs, raw


def write_table(table: ResultTable, out: Path) -> list[str]:
    files = []
    for metric in table.metrics():
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "n", "value", "mc_stderr"])
        for r in table.rows:
            if r.metric == metric:
                w.writerow([r.estimator, r.n, _fmt(r.value), _fmt(r.mc_stderr)])
        name = f"{metric.lower()}_{table.experiment}.csv"
        (out / name).write_text(buf.getvalue(), encoding="utf-8")
        files.append(name)
    name = f"table_{table.experiment}.json"
    (out / name).write_text(dumps(_validated(table.to_dict(), "result_table")), encoding="utf-8")
    files.append(name)
    return files


def cmd_simulate(args) -> int:
    specs, raw = load_experiments(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"spec_sha256": hashlib.sha256(raw).hexdigest(), "experiments": []}
    any_invalid = False
    for spec in specs:
        table = run_experiment(spec, workers=args.workers)
        files = write_table(table, out)
        invalid = [f"{r.metric}:{r.estimator}:{r.n}" for r in table.rows if r.invalid]
        any_invalid |= bool(invalid)
        manifest["experiments"].append({"name": spec.name, "seed": spec.seed, "kind": spec.kind,
                                        "files": files, "invalid_cells": invalid})
    (out / "manifest.json").write_text(dumps(_validated(manifest, "manifest")), encoding="utf-8")
    return EXIT_INVALID_CELL if any_invalid else EXIT_OK


# -- design-weights ----------------------------------------------------------

def _require(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise CLIError(EXIT_INPUT, "usage",
                       f"--mode {args.mode} requires " + ", ".join(f"--{m}" for m in missing))


def cmd_design_weights(args) -> int:
    params: dict[str, Any] = {"mode": args.mode}
    if args.mode == "groupwise":
        _require(args, "gamma")
        if args.sizes:
            sizes = _parse_list(args.sizes, int)
            group_of = np.repeat(np.arange(len(sizes)), sizes)
            order = np.arange(len(sizes))
            params.update(sizes=sizes)
        elif args.data and args.group_column:
            data, header, _ = load_csv_matrix(args.data)
            if args.group_column not in header:
                raise CLIError(EXIT_INPUT, "validation", f"no column named {args.group_column!r}")
            labels = data[:, header.index(args.group_column)]
            levels = np.unique(labels)
            order_labels = _parse_list(args.order) if args.order else list(levels)
            if sorted(order_labels) != sorted(levels.tolist()):
                raise CLIError(EXIT_INPUT, "validation", "--order must list every group label once")
            pos = {lab: i for i, lab in enumerate(levels.tolist())}
            group_of = np.array([pos[v] for v in labels.tolist()])
            order = np.array([pos[v] for v in order_labels])
            params.update(group_column=args.group_column, order=order_labels)
        else:
            raise CLIError(EXIT_INPUT, "usage", "--mode groupwise requires --sizes or --data with --group-column")
        w = groupwise_weights(GroupSpec(group_of, order, args.gamma)).d
        params.update(gamma=args.gamma)
    elif args.mode == "covariate":
        _require(args, "data", "column", "form", "theta")
        data, header, _ = load_csv_matrix(args.data)
        if args.column not in header:
            raise CLIError(EXIT_INPUT, "validation", f"no column named {args.column!r}")
        v = variance_function(VarianceForm(args.form.upper()), args.theta)
        w = covariate_weights(v, data[:, header.index(args.column)]).d
        params.update(column=args.column, form=args.form.upper(), theta=args.theta)
    elif args.mode == "mixed":
        _require(args, "sizes", "gamma")
        spec = MixedSpec.from_sizes(_parse_list(args.sizes, int), args.gamma)
        # eigenvalues in the batch eigenbasis, batch directions first
        cov = mixed_effects_weights(spec)
        K = spec.A.shape[1]
        w = np.concatenate([spec.sizes + spec.gamma, np.full(cov.n - K, spec.gamma)])
        params.update(sizes=spec.sizes.astype(int).tolist(), gamma=args.gamma, basis="batch-eigenbasis")
    else:
        _require(args, "data", "response", "form")
        X, names, y, _, _ = _read_data(args.data, args.response)
        X, names = _with_intercept(X, names, not args.no_intercept)
        w = parametric_fls_weights(Design(X), y, ParametricForm(args.form.upper())).d
        params.update(response=args.response, form=args.form.upper(), intercept=not args.no_intercept)
    params["n"] = int(w.size)
    out = Path(args.out)
    out.write_text("weight\n" + "".join(_fmt(v) + "\n" for v in w), encoding="utf-8")
    sidecar = out.with_suffix(out.suffix + ".json") if out.suffix != ".json" else out.with_name(out.name + ".meta")
    sidecar.write_text(dumps(_validated(params, "weights_sidecar")), encoding="utf-8")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="subsced", description="Weighted regression under unknown heteroscedasticity.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a linear model to CSV data")
    f.add_argument("--data", required=True)
    f.add_argument("--response", required=True)
    f.add_argument("--method", required=True, choices=["ols", "wls", "fls", "t", "huber"])
    f.add_argument("--weights", help="one-column CSV of variances (wls/fls)")
    g = f.add_mutually_exclusive_group()
    g.add_argument("--nu", type=float, help="fixed degrees of freedom (default 7)")
    g.add_argument("--adaptive-nu", action="store_true", help="estimate nu by maximum likelihood")
    f.add_argument("--k", type=float, help="Huber threshold (default 1.345)")
    f.add_argument("--alpha", type=float, default=0.05)
    f.add_argument("--cov", default="HC3", choices=["hom", "HC0", "HC1", "HC2", "HC3"],
                   help="covariance estimate for ols/wls/fls")
    f.add_argument("--group-column", help="column excluded from the regressors")
    f.add_argument("--no-intercept", action="store_true")
    f.add_argument("--max-iter", type=int, help="iteration budget (default 500 for t, 10000 for huber)")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("certify", help="test candidate weights against true variances")
    c.add_argument("--candidate", required=True)
    c.add_argument("--truth", required=True)
    c.add_argument("--oracle", action="store_true", help="also run the brute-force search")
    c.add_argument("--out")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("simulate", help="run experiments from a JSON spec")
    s.add_argument("--spec", required=True, help="spec file, or the name of a bundled spec")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("design-weights", help="construct feasible weights")
    d.add_argument("--mode", required=True, choices=["groupwise", "covariate", "mixed", "parametric"])
    d.add_argument("--out", required=True)
    d.add_argument("--gamma", type=float)
    d.add_argument("--sizes", help="comma-separated group sizes, lowest-variance group first")
    d.add_argument("--data")
    d.add_argument("--group-column")
    d.add_argument("--order", help="comma-separated group labels, lowest variance first")
    d.add_argument("--column")
    d.add_argument("--form")
    d.add_argument("--theta", type=float)
    d.add_argument("--response")
    d.add_argument("--no-intercept", action="store_true")
    d.set_defaults(func=cmd_design_weights)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CLIError as e:
        err = {"error": e.kind, "reason": e.reason}
        code = e.code
    except NotConverged as e:
        err, code = {"error": "not_converged", "reason": str(e)}, EXIT_NOT_CONVERGED
    except (SubscedError, ValueError) as e:
        err, code = {"error": type(e).__name__, "reason": str(e)}, EXIT_INPUT
    except OSError as e:
        err, code = {"error": "io", "reason": str(e)}, EXIT_INPUT
    sys.stderr.write(json.dumps(err) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
