"""Command-line interface: ``bdlim fit | compare | simulate``.

Settings come from an optional TOML/JSON file (``--config``) with sections
``data``, ``basis``, ``model``, ``chain``, ``output`` and ``simulation``;
command-line flags override the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 sampler
failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .basis import build_basis, read_exposures_csv
from .errors import BdlimError, DataError, ParameterError, SamplerError
from .model import BdlimData, BdlimSpec, Pattern, load_config
from .posterior import ModelScore, normalized_model_probs, summarize_fit
from .samplers import ChainConfig, run_chains
from .simulation import MODELS, get_scenario, run_scenario

__all__ = ["main", "build_parser", "load_inputs", "EXIT_OK", "EXIT_CONFIG", "EXIT_DATA",
           "EXIT_SAMPLER"]

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SAMPLER = 4

EMIT_KINDS = ("json", "csv", "plot-data")

log = logging.getLogger("bdlim")


# ---------------------------------------------------------------- input files

def _read_table(path):
    """Return ``(header, ids, rows)`` for a CSV with an ``id`` column."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "id" not in header:
            raise DataError(f"{path}:1: missing 'id' column")
        id_col = header.index("id")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[id_col].strip())
            rows.append([c.strip() for i, c in enumerate(row) if i != id_col])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    return [h for i, h in enumerate(header) if i != id_col], ids, rows


def _numeric(path, rows):
    try:
        return np.array(rows, dtype=float)
    except ValueError:
        raise DataError(f"{path}: non-numeric value") from None


def _align(ids, other_ids, path):
    pos = {k: i for i, k in enumerate(other_ids)}
    missing = [k for k in ids if k not in pos]
    if missing:
        raise DataError(f"{path}: no row for id {missing[0]!r}")
    return np.array([pos[k] for k in ids], dtype=int)


def load_inputs(exposures, outcome, covariates=None, groups=None):
    """Read and align the input CSVs on the exposure ids.

    Returns ``(X, y, Z, group_index, group_labels)``; group labels are
    strings mapped to indices in order of first appearance.
    """
    X = read_exposures_csv(exposures)
    if X.ids is None:
        raise DataError(f"{exposures}: missing 'id' column")
    ids = list(X.ids)
    header, oid, rows = _read_table(outcome)
    if header != ["y"]:
        raise DataError(f"{outcome}:1: expected columns id,y")
    y = _numeric(outcome, rows)[_align(ids, oid, outcome), 0]
    if covariates:
        header, cid, rows = _read_table(covariates)
        Z = _numeric(covariates, rows).reshape(len(rows), len(header))[_align(ids, cid, covariates)]
    else:
        Z = np.zeros((len(ids), 0))
    if groups:
        header, gid, rows = _read_table(groups)
        if header != ["group"]:
            raise DataError(f"{groups}:1: expected columns id,group")
        raw = [rows[i][0] for i in _align(ids, gid, groups)]
        labels = list(dict.fromkeys(raw))
        g = np.array([labels.index(v) for v in raw], dtype=int)
    else:
        labels = ["all"]
        g = np.zeros(len(ids), dtype=int)
    return X, y, Z, g, tuple(labels)


# ---------------------------------------------------------------- settings

def _merge_settings(args) -> dict:
    """Config-file values overlaid with explicit flags."""
    cfg = {}
    base = Path.cwd()
    if args.config:
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ParameterError(f"{args.config}: {exc.strerror}") from None
        except ValueError as exc:
            raise ParameterError(f"{args.config}: {exc}") from None
        base = Path(args.config).resolve().parent
    s = {sec: dict(cfg.get(sec, {})) for sec in ("data", "basis", "model", "chain", "output",
                                                 "simulation")}
    for key in ("exposures", "outcome", "covariates", "groups"):
        if s["data"].get(key):
            s["data"][key] = str((base / s["data"][key]))
    flag_map = {
        ("data", "exposures"): "exposures", ("data", "outcome"): "outcome",
        ("data", "covariates"): "covariates", ("data", "groups"): "groups",
        ("basis", "knots"): "knots", ("basis", "variance_threshold"): "variance_threshold",
        ("basis", "presmooth_df"): "presmooth_df",
        ("model", "pattern"): "pattern", ("model", "family"): "family",
        ("chain", "n_iter"): "iter", ("chain", "n_burnin"): "burnin", ("chain", "thin"): "thin",
        ("chain", "n_chains"): "chains", ("chain", "seed"): "seed",
        ("output", "dir"): "out", ("output", "emit"): "emit",
        ("simulation", "scenarios"): "scenario", ("simulation", "replicates"): "replicates",
        ("simulation", "models"): "models", ("simulation", "jobs"): "jobs",
    }
    for (sec, key), attr in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            s[sec][key] = val
    emit = s["output"].get("emit", "json,csv")
    if isinstance(emit, str):
        emit = [e.strip() for e in emit.split(",") if e.strip()]
    bad = [e for e in emit if e not in EMIT_KINDS]
    if bad:
        raise ParameterError(f"unknown --emit kind {bad[0]!r}; choose from {', '.join(EMIT_KINDS)}")
    s["output"]["emit"] = list(emit)
    s["output"].setdefault("dir", "bdlim-out")
    return s


def _chain_config(s: dict, halve: bool = False) -> ChainConfig:
    known = set(ChainConfig.__dataclass_fields__)
    extra = set(s["chain"]) - known
    if extra:
        raise ParameterError(f"unknown [chain] keys: {sorted(extra)}")
    try:
        cfg = ChainConfig(**s["chain"])
    except TypeError as exc:
        raise ParameterError(str(exc)) from None
    if halve and not {"n_iter", "n_burnin"} & set(s["chain"]):
        cfg = cfg.halved()
    return cfg


def _prepare_fit(s: dict):
    d = s["data"]
    if not d.get("exposures") or not d.get("outcome"):
        raise ParameterError("--exposures and --outcome are required")
    try:
        X, y, Z, g, labels = load_inputs(d["exposures"], d["outcome"], d.get("covariates"),
                                         d.get("groups"))
    except OSError as exc:
        raise DataError(f"{exc.filename}: {exc.strerror}") from None
    b = s["basis"]
    basis, scores = build_basis(X, int(b.get("knots", 15)),
                                float(b.get("variance_threshold", 0.99)),
                                b.get("presmooth_df"))
    data = BdlimData(y, scores, g, Z, basis.column_sums, labels)
    return basis, data


def _spec(s: dict, data: BdlimData, pattern) -> BdlimSpec:
    model = {k: v for k, v in s["model"].items() if k not in ("pattern",)}
    spec = BdlimSpec.from_dict({**model, "pattern": pattern, "n_groups": data.J,
                                "covariate_count": data.p})
    data.check_against(spec)
    return spec


def _fit_one(s, data, pattern, config, n_jobs=1):
    spec = _spec(s, data, pattern)
    chains = run_chains(spec, data, config, n_jobs=n_jobs)
    for c in chains:
        c.group_labels = data.group_labels
    return spec, chains


# ---------------------------------------------------------------- writers

class _Writer:
    """Serializes every file write and records what was written."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def path(self, name) -> Path:
        p = self.dir / name
        self.written.append(str(p))
        return p

    def text(self, name, text):
        self.path(name).write_text(text)


def _emit_fit(w: _Writer, prefix: str, summary, chains, basis, emit):
    if "json" in emit:
        w.text(f"{prefix}summary.json", summary.to_json())
        w.text(f"{prefix}basis.json", basis.to_json())
    if "csv" in emit:
        summary.to_csv(w.path(f"{prefix}coefficients.csv"))
        path = w.path(f"{prefix}draws.csv")
        for i, c in enumerate(chains):
            c.to_csv(path, header=(i == 0), mode="w" if i == 0 else "a")
    if "plot-data" in emit:
        summary.plot_data_csv(w.path(f"{prefix}weights.csv"))


# ---------------------------------------------------------------- commands

def _ranges(times) -> str:
    """Compact ``1-4,9`` rendering of increasing grid values."""
    parts = []
    for t in times:
        t = int(t) if float(t).is_integer() else float(t)
        if parts and isinstance(t, int) and parts[-1][1] == t - 1:
            parts[-1][1] = t
        else:
            parts.append([t, t])
    return ",".join(f"{a}" if a == b else f"{a}-{b}" for a, b in parts)


def _save_partial(out_dir, exc: SamplerError, data):
    """Keep whatever a failed chain stored: its draws and the failure report."""
    w = _Writer(out_dir)
    if exc.partial is not None:
        exc.partial.group_labels = data.group_labels
        exc.partial.to_csv(w.path("partial_draws.csv"))
    state = {k: np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
             for k, v in (exc.state or {}).items()}
    w.text("failure.json", json.dumps({"error": str(exc), "chain": exc.chain_id,
                                       "state": state}, indent=2, default=str))
    log.error("partial output written to %s", ", ".join(w.written))


def cmd_fit(args) -> int:
    s = _merge_settings(args)
    pattern = s["model"].get("pattern", "n")
    basis, data = _prepare_fit(s)
    config = _chain_config(s)
    try:
        spec, chains = _fit_one(s, data, pattern, config, args.jobs or 1)
    except SamplerError as exc:
        _save_partial(s["output"]["dir"], exc, data)
        raise
    summary = summarize_fit(chains, data, basis)
    w = _Writer(s["output"]["dir"])
    _emit_fit(w, "", summary, chains, basis, s["output"]["emit"])
    windows = {lab: _ranges(summary.time_grid[list(summary.weights[j].windows)])
               for j, lab in enumerate(summary.group_labels)}
    print(json.dumps({"pattern": spec.pattern.value, "family": spec.family.value,
                      "groups": {lab: j for j, lab in enumerate(data.group_labels)},
                      "mlppd": summary.score.mlppd, "dic": summary.score.dic,
                      "windows": windows, "files": w.written}, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    s = _merge_settings(args)
    basis, data = _prepare_fit(s)
    config = _chain_config(s)
    patterns = [Pattern.parse(p) for p in (args.patterns or "n,b,w,bw").split(",")]
    w = _Writer(s["output"]["dir"])
    results, failed = {}, {}
    for pat in patterns:
        try:
            _, chains = _fit_one(s, data, pat, config, args.jobs or 1)
        except SamplerError as exc:
            failed[pat.value] = str(exc)
            log.warning("pattern %s failed: %s", pat.value, exc)
            continue
        results[pat.value] = (chains, summarize_fit(chains, data, basis))
    if not results:
        raise SamplerError("every pattern failed: " + "; ".join(f"{k}: {v}" for k, v in failed.items()))
    probs = normalized_model_probs({k: v[1].score.mlppd for k, v in results.items()})
    rows = []
    for name, (chains, summ) in results.items():
        sc = summ.score
        summ.score = ModelScore(sc.mlppd, sc.dic, sc.p_d, probs[name])
        rows.append({"pattern": name, "mlppd": sc.mlppd, "dic": sc.dic, "p_d": sc.p_d,
                     "normalized_probability": probs[name]})
        _emit_fit(w, f"{name}_", summ, chains, basis, s["output"]["emit"])
    table = {"models": rows, "failed": failed, "renormalized": bool(failed),
             "best_mlppd": max(rows, key=lambda r: r["mlppd"])["pattern"],
             "best_dic": min(rows, key=lambda r: r["dic"])["pattern"],
             "groups": {lab: j for j, lab in enumerate(data.group_labels)}}
    if "json" in s["output"]["emit"]:
        w.text("compare.json", json.dumps(table, indent=2))
    if "csv" in s["output"]["emit"]:
        with w.path("compare.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    print(json.dumps(table, indent=2))
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = _merge_settings(args)
    sim = s["simulation"]
    names = sim.get("scenarios", "B.2")
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    models = sim.get("models", ",".join(MODELS))
    if isinstance(models, str):
        models = [m.strip() for m in models.split(",") if m.strip()]
    overrides = dict(sim.get("overrides", {}))
    config = _chain_config(s, halve=True)
    scenarios = [get_scenario(name, **overrides) for name in names]
    w = _Writer(s["output"]["dir"])
    out = []
    for scen in scenarios:
        table = run_scenario(scen, models, config, master_seed=config.seed,
                             n_replicates=sim.get("replicates"), n_jobs=int(sim.get("jobs", 1)))
        stem = scen.id.replace(".", "")
        if "csv" in s["output"]["emit"]:
            table.to_csv(w.path(f"{stem}_groups.csv"), w.path(f"{stem}_models.csv"))
        if "json" in s["output"]["emit"]:
            w.text(f"{stem}_metrics.json", table.to_json())
        out.append({"scenario": scen.id, "replicates": table.n_replicates,
                    "failed": table.n_failed, "seconds": round(table.seconds, 1)})
    print(json.dumps({"runs": out, "files": w.written}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, data: bool = True):
    p.add_argument("--config", help="TOML or JSON settings file")
    if data:
        p.add_argument("--exposures", help="CSV with id,t1..tT")
        p.add_argument("--outcome", help="CSV with id,y")
        p.add_argument("--covariates", help="CSV with id,z1..zp")
        p.add_argument("--groups", help="CSV with id,group")
        p.add_argument("--knots", type=int)
        p.add_argument("--variance-threshold", type=float)
        p.add_argument("--presmooth-df", type=int)
        p.add_argument("--family", choices=["gaussian", "logit"])
    p.add_argument("--iter", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes (chains, or replicates for simulate)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--emit", help="comma list of json,csv,plot-data")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdlim", description="Bayesian distributed lag interaction models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one heterogeneity pattern")
    _common(p)
    p.add_argument("--pattern", choices=["n", "b", "w", "bw"])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="fit several patterns and score them")
    _common(p)
    p.add_argument("--patterns", help="comma list (default n,b,w,bw)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="run simulation scenarios")
    _common(p, data=False)
    p.add_argument("--scenario", help="comma list of scenario ids, e.g. B.2,B.4")
    p.add_argument("--replicates", type=int)
    p.add_argument("--models", help="comma list of patterns to fit")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BdlimError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
