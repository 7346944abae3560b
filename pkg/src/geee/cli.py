"""Command line front end.

Subcommands
-----------
fit       fit GEEE models to a long-format CSV and print a coefficient table
select    compare working correlations by QIC
simulate  run the Monte-Carlo study described by a key=value config file

Exit codes: 0 success, 2 usage, 3 input parse error, 4 rank deficiency,
5 non-convergence, 6 invalid config, 7 numerical failure.  No output file
is written when a command fails.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy

from . import __version__
from .correlation import STRUCTURE_ORDER, CorrelationKind
from .data import LongitudinalDataset
from .errors import (DegreesOfFreedomError, GeeeError, InvalidInputError, NumericalError, RankError)
from .expectile import AsymmetrySequence
from .fit import FitControl, fit_multi
from .inference import normal_interval, sandwich_general
from .selection import qic_from_fit, select_from_entries
from .simulation import (GRID_GAMMAS, GRID_NS, GRID_RHOS, SimulationScenario, marginal_label,
                         qic_frequency_study, run_study)

log = logging.getLogger("geee")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_RANK = 4
EXIT_CONVERGENCE = 5
EXIT_CONFIG = 6
EXIT_NUMERICAL = 7


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _exit_code(exc):
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, RankError):
        return EXIT_RANK
    if isinstance(exc, (NumericalError, DegreesOfFreedomError)):
        return EXIT_NUMERICAL
    return EXIT_PARSE


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class Design:
    data: LongitudinalDataset
    names: list
    subjects: list


def _subject_key(s):
    try:
        return (0, int(s), s)
    except ValueError:
        return (1, 0, s)


def _parse_terms(covariates):
    terms = []
    for raw in covariates or []:
        for term in raw.split(","):
            term = term.strip()
            if term:
                terms.append(term)
    return terms


def read_long_csv(path, response, covariates=(), intercept=True, time_div=None) -> Design:
    """Read a long-format CSV into a dataset.

    Rows are grouped by the ``subject`` column and ordered by occasion.  The
    occasion comes from an ``occasion`` column, else from ``time`` divided
    by ``time_div`` and shifted so the earliest occasion in the file is 1,
    else from the rank of ``time`` within the subject, else from the row
    order within the subject.  When ``time_div`` is given
    the ``time`` column is also rescaled wherever it is used as a covariate.
    Interactions are written ``a:b``.
    """
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"{path}: cannot read input ({exc.strerror})", EXIT_PARSE) from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CliError(f"{path}: file is empty", EXIT_PARSE) from None
    col = {name: j for j, name in enumerate(header)}
    terms = _parse_terms(covariates)
    needed = ["subject", response] + sorted({v for t in terms for v in t.split(":")} - {response})
    missing = [c for c in needed if c not in col]
    if missing:
        raise CliError(f"{path}: line 1: missing column(s) {', '.join(missing)}; header is {', '.join(header)}",
                       EXIT_PARSE)
    if time_div is not None and not time_div > 0:
        raise CliError("--time-div must be positive", EXIT_PARSE)
    occasion_col = "occasion" if "occasion" in col else ("time" if "time" in col else None)
    numeric = sorted(set(needed[1:]) | ({occasion_col} if occasion_col else set()))

    records = []
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CliError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}", EXIT_PARSE)
        subject = row[col["subject"]].strip()
        if not subject:
            raise CliError(f"{path}: line {line}, column 'subject': empty cell", EXIT_PARSE)
        values = {}
        for name in numeric:
            cell = row[col[name]].strip()
            if not cell:
                raise CliError(f"{path}: line {line}, column '{name}': empty cell (missing values are not imputed; "
                               f"omit the row instead)", EXIT_PARSE)
            try:
                v = float(cell)
            except ValueError:
                raise CliError(f"{path}: line {line}, column '{name}': non-numeric value {cell!r}",
                               EXIT_PARSE) from None
            if not math.isfinite(v):
                raise CliError(f"{path}: line {line}, column '{name}': non-finite value {cell!r}", EXIT_PARSE)
            if name == "time" and time_div is not None:
                v /= time_div
            values[name] = v
        records.append((line, subject, values))
    if not records:
        raise CliError(f"{path}: no data rows", EXIT_PARSE)

    # occasion index
    if occasion_col == "occasion" or (occasion_col == "time" and time_div is not None):
        raw_occ = np.array([r[2][occasion_col] for r in records])
        shift = 1.0 - raw_occ.min() if occasion_col == "time" else 0.0
        occ = raw_occ + shift
        bad = np.flatnonzero((np.abs(occ - np.round(occ)) > 1e-9) | (np.round(occ) < 1))
        if bad.size:
            line = records[bad[0]][0]
            raise CliError(f"{path}: line {line}, column '{occasion_col}': occasion must be a positive integer "
                           f"(after --time-div)", EXIT_PARSE)
        occ = np.round(occ).astype(int)
    else:
        # rank by time within subject when available, else by row order
        occ = np.empty(len(records), dtype=int)
        members = {}
        for k, (_, subject, values) in enumerate(records):
            members.setdefault(subject, []).append(k)
        for subject, idx in members.items():
            if occasion_col == "time":
                idx = sorted(idx, key=lambda k: records[k][2]["time"])
                for a, b in zip(idx, idx[1:]):
                    if records[a][2]["time"] == records[b][2]["time"]:
                        raise CliError(f"{path}: line {records[b][0]}: duplicate time for subject {subject!r} "
                                       f"(first seen on line {records[a][0]})", EXIT_PARSE)
            for rank, k in enumerate(idx, start=1):
                occ[k] = rank

    seen = {}
    for k, (line, subject, _) in enumerate(records):
        key = (subject, int(occ[k]))
        if key in seen:
            raise CliError(f"{path}: line {line}: duplicate occasion {key[1]} for subject {subject!r} "
                           f"(first seen on line {seen[key]})", EXIT_PARSE)
        seen[key] = line

    names = (["(Intercept)"] if intercept else []) + terms
    if not names:
        raise CliError("the model has no terms: add covariates or keep the intercept", EXIT_PARSE)
    subjects = sorted({r[1] for r in records}, key=_subject_key)
    by_subject = {s: [] for s in subjects}
    for k, rec in enumerate(records):
        by_subject[rec[1]].append((int(occ[k]), rec[2]))
    ys, Xs, positions = [], [], []
    for s in subjects:
        rows = sorted(by_subject[s], key=lambda t: t[0])
        positions.append([o for o, _ in rows])
        ys.append(np.array([v[response] for _, v in rows]))
        cols = []
        if intercept:
            cols.append(np.ones(len(rows)))
        for t in terms:
            cols.append(np.array([math.prod(v[f] for f in t.split(":")) for _, v in rows]))
        Xs.append(np.column_stack(cols))
    try:
        data = LongitudinalDataset(ys, Xs, positions=positions, ids=subjects)
    except RankError as exc:
        raise CliError(f"{path}: design matrix with terms {', '.join(names)} is rank deficient ({exc})",
                       EXIT_RANK) from exc
    return Design(data, names, subjects)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write_outputs(out, files):
    """Write every file or none: stage in a temporary directory, then move."""
    if out is None:
        return
    os.makedirs(out, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".geee-", dir=out)
    try:
        for name, text in files.items():
            with open(os.path.join(stage, name), "w", newline="") as fh:
                fh.write(text)
        for name in files:
            os.replace(os.path.join(stage, name), os.path.join(out, name))
    finally:
        for name in os.listdir(stage):
            os.remove(os.path.join(stage, name))
        os.rmdir(stage)


def _fmt(v, digits=4):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v:.{digits}f}"


def _print_table(header, rows, stream=None):
    stream = stream or sys.stdout
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    for k, r in enumerate(cells):
        stream.write("  ".join(c.rjust(w) if k else c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")


def _taus(args):
    taus = sorted(set(args.tau or [0.5]))
    try:
        return AsymmetrySequence(tuple(taus))
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def _control(args):
    return FitControl(max_iterations=args.max_iter)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args):
    design = read_long_csv(args.input, args.response, args.covariates, not args.no_intercept, args.time_div)
    if not 0.0 < args.level < 1.0:
        raise CliError("--level must lie in (0, 1)", EXIT_USAGE)
    data, names = design.data, design.names
    taus = _taus(args)
    fit = fit_multi(data, taus, args.structure, _control(args))
    for w in fit.warnings:
        log.warning(w)
    if not fit.converged:
        raise CliError(f"{fit.structure.label} fit did not converge within {args.max_iter} iterations "
                       f"(final normalized score {fit.final_score_norm:.3g})", EXIT_CONVERGENCE)
    cov = sandwich_general(fit, data)
    p = data.p
    table, csv_rows, blocks = [], [], []
    for k, b in enumerate(fit.blocks):
        coefs = []
        for j, name in enumerate(names):
            est, se = float(b.beta[j]), float(cov.se[k * p + j])
            lo, hi = normal_interval(est, se, args.level)
            table.append([_fmt(b.tau, 2), name, _fmt(est), _fmt(se), f"({_fmt(lo)}, {_fmt(hi)})"])
            csv_rows.append([repr(b.tau), name, repr(est), repr(se), repr(lo), repr(hi)])
            coefs.append({"term": name, "estimate": est, "se": se, "lower": lo, "upper": hi})
        alpha = b.nuisance.alpha
        blocks.append({
            "tau": b.tau, "coefficients": coefs, "converged": b.converged, "iterations": b.iterations,
            "final_score_norm": b.final_score_norm, "sigma2": b.nuisance.sigma2,
            "alpha": alpha.tolist() if isinstance(alpha, np.ndarray) else alpha,
            "alpha_clamped": bool(b.nuisance.clamped), "warnings": list(b.warnings),
        })
    print(f"GEEE fit: structure={fit.structure.label} subjects={data.n} observations={data.N} "
          f"level={args.level:g}")
    _print_table(["tau", "term", "estimate", "se", "interval"], table)
    summary = {
        "input": os.path.basename(args.input), "structure": fit.structure.value, "taus": list(taus.taus),
        "level": args.level, "terms": names, "subjects": data.n, "observations": data.N,
        "blocks": blocks, "vcov": cov.vcov.tolist(), "version": __version__,
    }
    _write_outputs(args.out, {
        "coefficients.csv": _csv_text(["tau", "term", "estimate", "se", "lower", "upper"], csv_rows),
        "summary.json": _json_text(summary),
    })
    return EXIT_OK


def cmd_select(args):
    design = read_long_csv(args.input, args.response, args.covariates, not args.no_intercept, args.time_div)
    data = design.data
    taus = _taus(args)
    candidates = [CorrelationKind.parse(c) for c in (args.candidates or [k.value for k in STRUCTURE_ORDER])]
    entries, failures = [], {}
    for kind in dict.fromkeys(candidates):
        try:
            fit = fit_multi(data, taus, kind, _control(args))
            entries.append(qic_from_fit(fit.with_vcov(sandwich_general(fit, data).vcov), data))
        except (DegreesOfFreedomError, NumericalError, RankError) as exc:
            failures[kind] = str(exc)
    report = select_from_entries(entries, failures)
    for kind, msg in report.failures.items():
        log.warning("%s: %s", kind.label, msg)
    if report.selected is None:
        raise CliError("no candidate structure produced a converged fit", EXIT_CONVERGENCE)
    rows = [[e.structure.label, _fmt(e.qic, 3), _fmt(e.quasi_likelihood, 3), _fmt(e.penalty, 3),
             "yes" if e.converged else "no"] for e in report.entries]
    print(f"QIC comparison: taus={', '.join(f'{t:g}' for t in taus.taus)} subjects={data.n} "
          f"observations={data.N}")
    _print_table(["structure", "qic", "quasi", "penalty", "converged"], rows)
    print(f"selected: {report.selected.label}")
    summary = {
        "input": os.path.basename(args.input), "taus": list(taus.taus), "terms": design.names,
        "selected": report.selected.value,
        "entries": [{"structure": e.structure.value, "qic": e.qic, "quasi_likelihood": e.quasi_likelihood,
                     "penalty": e.penalty, "converged": e.converged} for e in report.entries],
        "failures": {k.value: v for k, v in report.failures.items()}, "version": __version__,
    }
    _write_outputs(args.out, {
        "qic.csv": _csv_text(["structure", "qic", "quasi_likelihood", "penalty", "converged"],
                             [[e.structure.value, repr(e.qic), repr(e.quasi_likelihood), repr(e.penalty),
                               e.converged] for e in report.entries]),
        "summary.json": _json_text(summary),
    })
    return EXIT_OK


# simulation config ---------------------------------------------------------

_LIST_KEYS = ("gamma", "marginal", "rho", "n", "design")
_SCALAR_KEYS = {
    "replications": int, "seed": int, "m": int, "covariate_df": float, "covariate_sd": float,
    "beta0": float, "beta1": float,
}
_SPECIAL_KEYS = ("taus", "structures", "m_range", "extended")
CONFIG_KEYS = _LIST_KEYS + tuple(_SCALAR_KEYS) + _SPECIAL_KEYS


def _split(value):
    return [v.strip() for v in value.replace(";", ",").split(",") if v.strip()]


def read_simulation_config(text, source="<config>"):
    """Parse ``key = value`` lines into the list of scenarios they describe.

    ``gamma``, ``marginal``, ``rho``, ``n`` and ``design`` accept comma
    separated lists; the scenarios are their Cartesian product.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[simulation]\n" + text, source=source)
    except configparser.Error as exc:
        raise CliError(f"{source}: {exc}", EXIT_CONFIG) from exc
    cfg = {k.strip().lower(): v.strip() for k, v in parser["simulation"].items()}
    unknown = sorted(set(cfg) - set(CONFIG_KEYS))
    if unknown:
        raise CliError(f"{source}: unknown key(s) {', '.join(unknown)}; valid keys are {', '.join(CONFIG_KEYS)}",
                       EXIT_CONFIG)
    problems = []
    common = {}
    for key, conv in _SCALAR_KEYS.items():
        if key in cfg:
            try:
                common[key] = conv(cfg[key])
            except ValueError:
                problems.append(f"{key}: expected {conv.__name__}, got {cfg[key]!r}")
    if "taus" in cfg:
        try:
            common["taus"] = tuple(float(v) for v in _split(cfg["taus"]))
        except ValueError:
            problems.append(f"taus: expected numbers, got {cfg['taus']!r}")
    if "structures" in cfg:
        common["structures"] = tuple(_split(cfg["structures"]))
    if "m_range" in cfg:
        try:
            lo, hi = (int(v) for v in _split(cfg["m_range"]))
            common["m_range"] = (lo, hi)
        except ValueError:
            problems.append(f"m_range: expected two integers, got {cfg['m_range']!r}")
    if "extended" in cfg:
        flag = cfg["extended"].lower()
        if flag not in ("true", "false", "yes", "no", "1", "0"):
            problems.append(f"extended: expected true or false, got {cfg['extended']!r}")
        common["extended"] = flag in ("true", "yes", "1")
    lists = {}
    converters = {"gamma": float, "marginal": str, "rho": float, "n": int, "design": str}
    defaults = {"gamma": [0.0], "marginal": ["normal"], "rho": [0.5], "n": [100], "design": ["balanced"]}
    for key in _LIST_KEYS:
        if key in cfg:
            try:
                lists[key] = [converters[key](v) for v in _split(cfg[key])]
            except ValueError:
                problems.append(f"{key}: expected a list of {converters[key].__name__}, got {cfg[key]!r}")
                continue
            if not lists[key]:
                problems.append(f"{key}: empty list")
        else:
            lists[key] = defaults[key]
    if problems:
        raise CliError(f"{source}: " + "; ".join(problems), EXIT_CONFIG)
    return _expand(lists, common, source)


def _expand(lists, common, source):
    scenarios = []
    for gamma, marginal, design, n, rho in itertools.product(lists["gamma"], lists["marginal"], lists["design"],
                                                             lists["n"], lists["rho"]):
        try:
            scenarios.append(SimulationScenario(gamma=gamma, marginal=marginal, rho=rho, n=n, design=design,
                                                **common))
        except (InvalidInputError, TypeError) as exc:
            raise CliError(f"{source}: invalid scenario (gamma={gamma}, marginal={marginal}, design={design}, "
                           f"n={n}, rho={rho}): {exc}", EXIT_CONFIG) from exc
    return scenarios


def full_scale_scenarios(seed):
    """The full reference grid: every model, marginal, design, size and rho with 400 replications."""
    lists = {"gamma": list(GRID_GAMMAS), "marginal": ["normal", "t3", "chisq3"], "design": ["balanced", "unbalanced"],
             "n": list(GRID_NS), "rho": list(GRID_RHOS)}
    return _expand(lists, {"replications": 400, "seed": seed}, "--full-scale")


def _scenario_key(s):
    return (f"{s.gamma:g}", marginal_label(s.marginal), s.design, s.n)


def _metric_tables(results):
    long_rows, bias_eff, sd_se, bias_rmse = [], {}, {}, {}
    for res in results:
        s = res.scenario
        for r in res.rows:
            long_rows.append([f"{s.gamma:g}", marginal_label(s.marginal), f"{s.rho:g}", s.n, s.design,
                              f"{r.tau:g}", r.structure.label, repr(r.bias), repr(r.eff),
                              "" if r.sd is None else repr(r.sd), repr(r.se), repr(r.rmse),
                              r.replications_used, r.nonconverged])
            row_key = (f"{s.gamma:g}", marginal_label(s.marginal), f"{r.tau:g}", f"{s.rho:g}", r.structure.label)
            col = f"{s.design}_n{s.n}"
            bias_eff.setdefault(row_key, {})[col] = (r.bias, r.eff)
            sd_se.setdefault(row_key, {})[col] = (r.sd, r.se)
            bias_rmse.setdefault(row_key, {})[col] = (r.bias, r.rmse)
    cols = sorted({c for d in bias_eff.values() for c in d}, key=lambda c: (c.split("_")[0], int(c.split("_n")[1])))

    def wide(table, names):
        header = ["gamma", "marginal", "tau", "rho", "structure"] + [f"{c}_{m}" for c in cols for m in names]
        rows = []
        for key, cells in table.items():
            row = list(key)
            for c in cols:
                pair = cells.get(c)
                row += ["" if pair is None or v is None else f"{v:.3f}" for v in (pair or (None, None))]
            rows.append(row)
        return _csv_text(header, rows)

    header = ["gamma", "marginal", "rho", "n", "design", "tau", "structure", "bias", "eff", "sd", "se", "rmse",
              "replications_used", "nonconverged"]
    return {
        "metrics.csv": _csv_text(header, long_rows),
        "table_bias_eff.csv": wide(bias_eff, ("bias", "eff")),
        "table_sd_se.csv": wide(sd_se, ("sd", "se")),
        "table_bias_rmse.csv": wide(bias_rmse, ("bias", "rmse")),
    }


def _qic_table(results):
    freq = qic_frequency_study([r.scenario for r in results], results=results)
    cells = sorted({(k[2], k[3]) for k in freq}, key=lambda c: (c[0], c[1]))
    header = ["gamma", "marginal"] + [f"{d}_n{n}_{k.label}" for d, n in cells for k in STRUCTURE_ORDER]
    rows = []
    for gm in sorted({(k[0], k[1]) for k in freq}):
        row = [f"{gm[0]:g}", gm[1]]
        for d, n in cells:
            counts = freq.get((gm[0], gm[1], d, n))
            row += [counts[k] if counts else "" for k in STRUCTURE_ORDER]
        rows.append(row)
    return _csv_text(header, rows), freq


def cmd_simulate(args):
    if args.full_scale:
        scenarios = full_scale_scenarios(args.seed if args.seed is not None else SimulationScenario().seed)
        source_text = "full-scale reference grid"
    else:
        if args.config is None:
            raise CliError("simulate needs --config or --full-scale", EXIT_USAGE)
        try:
            with open(args.config) as fh:
                source_text = fh.read()
        except OSError as exc:
            raise CliError(f"{args.config}: cannot read config ({exc.strerror})", EXIT_CONFIG) from exc
        scenarios = read_simulation_config(source_text, args.config)
        if args.seed is not None:
            scenarios = _expand_override(scenarios, seed=args.seed)
    if args.replications is not None:
        scenarios = _expand_override(scenarios, replications=args.replications)
    control = _control(args)
    results, timings = [], []
    for s in scenarios:
        t0 = time.perf_counter()
        res = run_study(s, control, args.jobs)
        timings.append({"scenario": s.label, "seconds": time.perf_counter() - t0})
        log.info("%s done in %.1f s (%d failed replications)", s.label, timings[-1]["seconds"],
                 res.failed_replications)
        results.append(res)
    files = _metric_tables(results)
    qic_text, freq = _qic_table(results)
    files["table_qic.csv"] = qic_text

    rows = []
    for res in results:
        for r in res.rows:
            if r.tau == res.scenario.taus[len(res.scenario.taus) // 2]:
                rows.append([res.scenario.label, f"{r.tau:g}", r.structure.label, _fmt(r.bias), _fmt(r.eff, 3),
                             _fmt(r.sd), _fmt(r.se), _fmt(r.rmse)])
    _print_table(["scenario", "tau", "structure", "bias", "eff", "sd", "se", "rmse"], rows)

    summary = {
        "scenarios": [{
            "label": res.scenario.label, "gamma": res.scenario.gamma, "marginal": marginal_label(res.scenario.marginal),
            "rho": res.scenario.rho, "n": res.scenario.n, "design": res.scenario.design,
            "replications": res.scenario.replications, "failed_replications": res.failed_replications,
            "failure_messages": list(res.failure_messages),
            "qic_selection_counts": {k.value: v for k, v in res.qic_selection_counts.items()},
            "rows": [{"tau": r.tau, "structure": r.structure.value, "bias": r.bias, "eff": r.eff, "sd": r.sd,
                      "se": r.se, "rmse": r.rmse, "replications_used": r.replications_used,
                      "nonconverged": r.nonconverged} for r in res.rows],
        } for res in results],
        "qic_frequency": [{"gamma": k[0], "marginal": k[1], "design": k[2], "n": k[3],
                           "counts": {s.value: c for s, c in v.items()}} for k, v in sorted(freq.items())],
    }
    manifest = {
        "version": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "scipy": scipy.__version__, "seed": scenarios[0].seed if scenarios else None,
        "config": source_text, "jobs_parallel": bool(args.jobs and args.jobs > 1),
        "outputs": sorted(list(files) + ["summary.json", "manifest.json"]),
    }
    files["summary.json"] = _json_text(summary)
    files["manifest.json"] = _json_text(manifest)
    files["timings.json"] = _json_text({"scenarios": timings,
                                        "total_seconds": sum(t["seconds"] for t in timings)})
    _write_outputs(args.out, files)
    return EXIT_OK


def _expand_override(scenarios, **changes):
    try:
        return [replace(s, **changes) for s in scenarios]
    except InvalidInputError as exc:
        raise CliError(f"invalid override: {exc}", EXIT_CONFIG) from exc


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_data_args(p):
    p.add_argument("input", help="long-format CSV with a header row and a 'subject' column")
    p.add_argument("--response", required=True, help="response column")
    p.add_argument("--covariates", action="append", default=[],
                   help="comma separated covariate columns; 'a:b' adds the product of a and b (repeatable)")
    p.add_argument("--no-intercept", action="store_true", help="drop the intercept column")
    p.add_argument("--time-div", type=float, default=None,
                   help="divide the 'time' column by this unit; the result also indexes occasions")
    p.add_argument("--tau", type=float, action="append", help="expectile level (repeatable, default 0.5)")
    p.add_argument("--max-iter", type=int, default=100, help="iteration limit per level")
    p.add_argument("--out", default=None, help="directory for CSV and JSON output")


def build_parser():
    parser = argparse.ArgumentParser(prog="geee", description="Generalized expectile estimating equations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and report coefficients with robust intervals")
    _add_data_args(p)
    p.add_argument("--structure", choices=[k.value for k in STRUCTURE_ORDER], default="ind")
    p.add_argument("--level", type=float, default=0.95, help="confidence level of the intervals")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="compare working correlations by QIC")
    _add_data_args(p)
    p.add_argument("--structure", dest="candidates", action="append",
                   choices=[k.value for k in STRUCTURE_ORDER], help="candidate structure (repeatable, default all)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run the Monte-Carlo study")
    p.add_argument("--config", help="key = value scenario file")
    p.add_argument("--out", default=None, help="directory for the result tables")
    p.add_argument("--seed", type=int, default=None, help="override the root seed")
    p.add_argument("--replications", type=int, default=None, help="override the replication count")
    p.add_argument("--full-scale", action="store_true",
                   help="run the complete reference grid with 400 replications (slow)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for replications")
    p.add_argument("--max-iter", type=int, default=100, help="iteration limit per fit")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, GeeeError) as exc:
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
