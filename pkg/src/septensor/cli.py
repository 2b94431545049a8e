"""septensor command line: solve, train, invert, study and oracle runs driven by one config file."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import field as fieldmod
from .errors import (AssemblyError, ConfigurationError, FormatError, InvalidArgumentError,
                     OracleError, OutOfDomainError, SingularMatrixError, SolverError, TrainingError,
                     UndefinedMetricError, UnsupportedError)
from .inverse import TargetField, invert
from .oracle import heat_dataset_2d
from .trainer import Dataset, train

log = logging.getLogger("septensor")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_CONFIG_ERRORS = (ConfigurationError, FormatError, InvalidArgumentError, OutOfDomainError,
                  UnsupportedError, FileNotFoundError)
_NUMERIC_ERRORS = (SolverError, TrainingError, OracleError, SingularMatrixError, AssemblyError,
                   UndefinedMetricError, FloatingPointError)

# CSV headers; changing any of these is a format change
ERRORS_HEADER = ("metric", "value")
CONVERGENCE_HEADER = ("elems", "s", "p", "params", "mean_error", "std_error")
TIMING_HEADER = ("elems", "s", "p", "mean_wall_time")
HISTORY_HEADER = ("epoch", "stage", "train_mse", "val_mse")
RESTARTS_HEADER = ("restart", "steps", "loss")       # followed by the free dim names
TRACE_HEADER = ("restart", "step", "best_loss")
DATASET_TARGET = "u"


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "PyYAML", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(out: Path, command: str, cfg: dict) -> None:
    files = sorted(p.name for p in out.iterdir() if p.is_file())
    man = {
        "command": command,
        "seed": int(cfg.get("seed", 0)),
        "config_sha256": cfgmod.config_hash(cfg),
        "config": cfg,
        "versions": _versions(),
        "outputs": {name: _sha256(out / name) for name in files},
    }
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands; each writes into ``out`` (a fresh directory)


def cmd_solve(cfg: dict, out: Path) -> None:
    prob, _ = cfgmod.build_problem(cfg)
    f, report = prob.solve()
    fieldmod.save(f, out / "field.inntd")
    (out / "report.json").write_text(report.to_json() + "\n")
    rows = []
    opts = cfg.get("errors", {})
    if prob.exact is not None:
        n = opts.get("n_points", 20000)
        rows.append(("rel_l2_pointwise", prob.error_pointwise(f, n, int(cfg.get("seed", 0)))))
    if prob.exact_terms and opts.get("integral", True):
        rows.append(("rel_l2_integral", prob.error_integral(f)))
    if rows:
        write_csv(out / "errors.csv", ERRORS_HEADER, rows)
    print(f"{prob.name}: {f.n_modes} modes in {report.wall_time:.2f} s")
    for name, v in rows:
        print(f"  {name} = {v:.3e}")


def _sweep_problem(cfg: dict, elems: int, s: int, p: int, seed: int):
    disc = dict(cfg.get("discretization", {}), n_elem=elems, s=s, p=p)
    return cfgmod.build_problem(dict(cfg, discretization=disc, seed=seed))[0]


def cmd_study(cfg: dict, out: Path) -> None:
    st = cfg.get("study")
    if st is None:
        raise ConfigurationError("config error at study: section required for the study command")
    if cfg["problem"] == "custom":
        raise ConfigurationError("config error at problem: studies sweep built-in problems only")
    R = st.get("repeats", 1)
    n_points = st.get("n_points", 20000)
    seed = int(cfg.get("seed", 0))
    conv, timing = [], []
    for elems in st["elems"]:
        for s, p in st["sp"]:
            errs, times, params = [], [], 0
            for r in range(R):
                prob = _sweep_problem(cfg, elems, s, p, seed + r)
                if prob.exact is None:
                    raise ConfigurationError(f"config error at problem: {prob.name} has no "
                                             "closed-form solution to study against")
                t0 = time.perf_counter()
                f, _ = prob.solve()
                times.append(time.perf_counter() - t0)
                errs.append(prob.error_pointwise(f, n_points, seed + r))
                params = params or f.n_modes * sum(d.n_nodes for d in f.dims)
            errs = np.array(errs)
            conv.append((elems, s, p, params, errs.mean(), errs.std()))
            timing.append((elems, s, p, float(np.mean(times))))
            print(f"elems={elems} s={s} p={p}: error {errs.mean():.3e} +- {errs.std():.1e}")
    write_csv(out / "convergence.csv", CONVERGENCE_HEADER, conv)
    write_csv(out / "timing.csv", TIMING_HEADER, timing)


def cmd_train(cfg: dict, out: Path) -> None:
    tr = cfg.get("trainer", {})
    if "data" not in tr:
        raise ConfigurationError("config error at trainer/data: dataset path required")
    dims = cfgmod.build_dims(cfg)
    data = Dataset.from_csv(tr["data"])
    names = [d.name for d in dims]
    if list(data.names) != names:
        raise FormatError(f"dataset columns {list(data.names)} do not match dims {names}")
    data.check_domain(dims)
    tcfg = cfgmod.train_config(cfg)
    f, report = train(dims, data, tcfg)
    fieldmod.save(f, out / "field.inntd")
    (out / "train_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    write_csv(out / "history.csv", HISTORY_HEADER,
              [(i + 1, st, a, b) for i, (st, a, b)
               in enumerate(zip(report.stage, report.train_mse, report.val_mse))])
    last_tr = report.train_mse[-1] if report.train_mse else float("nan")
    print(f"trained {f.n_modes} modes, {report.n_params} parameters; "
          f"stop: {report.stop_reason}; final train MSE {last_tr:.3e}")


def _inverse_inputs(cfg: dict):
    inv = cfg["inverse"]
    if "field" in inv:
        f = fieldmod.load(inv["field"])
    else:
        prob, _ = cfgmod.build_problem(cfg)
        f, _ = prob.solve()
    free = list(inv["free_dims"])
    fixed = [i for i, n in enumerate(f.names) if n not in free]
    if "target" in inv:
        ds = Dataset.from_csv(inv["target"])
        want = [f.names[i] for i in fixed]
        if list(ds.names) != want:
            raise FormatError(f"target columns {list(ds.names)} do not match {want}")
        return f, TargetField(ds.inputs, ds.targets), None
    truth = inv.get("truth")
    if truth is None:
        raise ConfigurationError("config error at inverse: give either target or truth")
    if sorted(truth) != sorted(free):
        raise ConfigurationError(f"config error at inverse/truth: need values for {free}")
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    n = inv.get("n_points", 2000)
    pts = np.empty((n, f.n_dims))
    for i, d in enumerate(f.dims):
        if d.name in truth:
            pts[:, i] = truth[d.name]
        else:
            pts[:, i] = rng.uniform(d.mesh.lower, d.mesh.upper, n)
    return f, TargetField(pts[:, fixed], f.evaluate_batch(pts)), truth


def cmd_invert(cfg: dict, out: Path) -> None:
    if "inverse" not in cfg:
        raise ConfigurationError("config error at inverse: section required for the invert command")
    icfg = cfgmod.inverse_config(cfg)
    f, target, truth = _inverse_inputs(cfg)
    res = invert(f, target, icfg)
    names = list(res.params)
    rows, trace_rows = [], []
    for r, (steps, trace, hist) in enumerate(zip(res.steps, res.traces, res.iterates)):
        j = int(np.flatnonzero(np.asarray(trace) == trace[-1])[0])
        rows.append((r, steps, trace[-1], *hist[j]))
        trace_rows.extend((r, i, v) for i, v in enumerate(trace))
    write_csv(out / "restarts.csv", RESTARTS_HEADER + tuple(names), rows)
    write_csv(out / "trace.csv", TRACE_HEADER, trace_rows)
    summary = [(f"param_{k}", v) for k, v in res.params.items()]
    summary += [("loss", res.loss), ("best_restart", res.restart), ("converged", int(res.converged))]
    if truth:
        summary += [(f"relerr_{k}", abs(res.params[k] - truth[k]) / abs(truth[k])) for k in names]
    write_csv(out / "result.csv", ERRORS_HEADER, summary)
    print("recovered " + ", ".join(f"{k} = {v:.6g}" for k, v in res.params.items())
          + f" (loss {res.loss:.3e}, restart {res.restart})")
    for r, steps, loss, *_ in rows:
        print(f"  restart {r}: loss {loss:.6e} after {steps} steps")


def cmd_oracle(cfg: dict, out: Path) -> None:
    if cfg["problem"] != "heat_spt":
        raise ConfigurationError(f"config error at problem: no oracle dataset for {cfg['problem']!r}")
    oc = {**cfgmod.PRESETS["heat_dataset"]["oracle"], **cfg.get("oracle", {})}
    kk, PP = np.meshgrid(oc["k"], oc["P"], indexing="ij")
    pairs = np.column_stack([kk.ravel(), PP.ravel()])
    X, y, names = heat_dataset_2d(oc["n"], oc["n_steps"], pairs, oc["n_snapshots"], oc["t_end"])
    Dataset(X, y, names).to_csv(out / "dataset.csv", DATASET_TARGET)
    print(f"wrote {y.size} rows ({len(pairs)} parameter pairs) to dataset.csv")


COMMANDS = {"solve": cmd_solve, "train": cmd_train, "invert": cmd_invert,
            "study": cmd_study, "oracle": cmd_oracle}


# ---------------------------------------------------------------------------


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="septensor", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML or JSON run configuration")
    ap.add_argument("--out", help="output directory (must not exist or be empty)")
    ap.add_argument("--seed", type=_u64, help="overrides the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _prepare_out(path: Path) -> Path:
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise ConfigurationError(f"output directory {path} exists and is not empty")
    path.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))


def run(command: str, config_path, out=None, seed=None) -> int:
    """Execute one command; returns the process exit code.

    Artifacts are written to a scratch directory next to ``out`` and moved
    into place only when the command succeeds.
    """
    tmp = None
    try:
        cfg = cfgmod.load(config_path)
        if seed is not None:
            cfg["seed"] = int(seed)
        cfg.setdefault("seed", 0)
        target = Path(out or cfg.get("output") or f"septensor-{command}")
        tmp = _prepare_out(target)
        COMMANDS[command](cfg, tmp)
        write_manifest(tmp, command, cfg)
        if target.exists():
            target.rmdir()
        os.replace(tmp, target)
        tmp = None
        return EXIT_OK
    except _CONFIG_ERRORS as exc:
        print(f"septensor: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"septensor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.out, args.seed)
