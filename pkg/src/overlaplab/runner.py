"""Suite orchestration and report persistence.

Suites run in a thread pool; every random stream is derived from the master
seed and the suite's position in the config, so scheduling cannot change any
number.  All artifacts are written atomically (temp file, then rename) with
the manifest last, so an interrupted run never leaves a manifest pointing at
half-written reports.  The CSV summary is generated from report dictionaries
through one code path shared by `run` and `summarize`, keeping its bytes
identical however it is produced.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import ConfigError, ExperimentConfig, SuiteSpec
from .identities import gg_identity_test, mixture_law_check
from .invariance import invariance_test, theorem2_test
from .rng import seed_root, subseq
from .ultrametric import barycenter_report, census_report, extension_probe

TOOL_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.csv"
CSV_FIELDS = ("suite", "kind", "case", "n", "lhs", "rhs", "std_error", "z",
              "status")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _scaled_count(count: int, scale: float) -> int:
    return max(1, int(round(count * scale)))


def execute_suite(spec: SuiteSpec, config: ExperimentConfig,
                  seq, scale: float = 1.0) -> list:
    """Run one suite and return its TestReports (in a deterministic order)."""
    budget = spec.budget if scale == 1.0 else spec.budget.scaled(scale)
    source = config.sources[spec.source_name] if spec.source_name else None
    p = spec.params
    common = {"significance": spec.significance, "case_label": spec.label}
    if spec.kind == "gg":
        return [gg_identity_test(source, p["f"], p["psi"], p["n"], budget, seq,
                                 bootstrap=config.bootstrap,
                                 exact_cap=config.exact_cap, **common)]
    if spec.kind == "mixture":
        return [mixture_law_check(source, p["n"], budget, seq,
                                  bins=p.get("bins"),
                                  min_count=p.get("min_count", 50.0),
                                  bootstrap=config.bootstrap,
                                  exact_cap=config.exact_cap, **common)]
    if spec.kind == "invariance":
        return invariance_test(source, p["phi"], p["funcs"], budget, seq,
                               t_grid=p["t_grid"], h=p["h"],
                               bootstrap=config.bootstrap,
                               exact_cap=config.exact_cap, **common)
    if spec.kind == "theorem2":
        return [theorem2_test(source, p["phi"], p["funcs"], p["partition"],
                              budget, seq, bootstrap=config.bootstrap,
                              exact_cap=config.exact_cap, **common)]
    if spec.kind == "ultrametric":
        return [census_report(source, _scaled_count(p["triples"], scale),
                              p["epsilon"], seq, groups=budget.groups,
                              tree_checks=p["tree_checks"],
                              tree_size=p["tree_size"],
                              case_label=spec.label)]
    if spec.kind == "extension":
        return [extension_probe(source, p["constraint"], budget, seq,
                                bootstrap=config.bootstrap, **common)]
    if spec.kind == "barycenter":
        return [barycenter_report(_scaled_count(p["patterns"], scale), seq,
                                  case_label=spec.label)]
    raise ConfigError(f"suites[{spec.index}].kind: unknown suite kind {spec.kind!r}")


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_csv_text(suite_rows: list) -> str:
    """CSV text from (suite_index, kind, report_dict) rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for index, kind, rep in suite_rows:
        writer.writerow([
            _csv_cell(index),
            _csv_cell(kind),
            _csv_cell(rep["case_label"]),
            _csv_cell(rep["n"]),
            _csv_cell(float(rep["lhs"]["mean"])),
            _csv_cell(float(rep["rhs"]["mean"])),
            _csv_cell(float(rep["difference"]["std_error"])),
            _csv_cell(float(rep["z_score"])),
            _csv_cell(rep["status"]),
        ])
    return buf.getvalue()


def _flat_rows(suite_reports: list) -> list:
    rows = []
    for spec_index, kind, reports in suite_reports:
        for rep in reports:
            rows.append((spec_index, kind, rep))
    return rows


def config_digest(config: ExperimentConfig, master_seed: int,
                  budget_scale: float) -> str:
    payload = {"config": config.raw, "master_seed": master_seed,
               "budget_scale": budget_scale}
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"),
                       default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class RunResult:
    """Everything `run` produced: manifest content, reports, exit code."""

    manifest: dict
    out_dir: Path
    reports: list
    exit_code: int


def run_experiment(config: ExperimentConfig, *,
                   seed: Optional[int] = None,
                   out_dir: Optional[str] = None,
                   jobs: Optional[int] = None,
                   budget_scale: float = 1.0) -> RunResult:
    """Execute all suites, persist reports, CSV summary, and manifest."""
    master_seed = seed if seed is not None else config.master_seed
    if master_seed is None:
        raise ConfigError("master_seed: set it in the config or pass --seed "
                          "(seeds are always explicit)")
    if budget_scale <= 0:
        raise ConfigError(f"budget scale must be positive, got {budget_scale}")
    workers = jobs if jobs is not None else config.jobs
    if workers < 1:
        raise ConfigError(f"jobs must be >= 1, got {workers}")
    out = Path(out_dir if out_dir is not None
               else (config.out_dir or "overlaplab_out"))
    out.mkdir(parents=True, exist_ok=True)
    root = seed_root(master_seed)
    started = time.perf_counter()

    def job(spec: SuiteSpec) -> list:
        return execute_suite(spec, config, subseq(root, spec.index),
                             scale=budget_scale)

    suites = config.suites
    if workers == 1 or len(suites) <= 1:
        results = [job(spec) for spec in suites]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(job, spec) for spec in suites]
            results = [f.result() for f in futures]

    report_paths = []
    suite_rows = []
    all_reports = []
    for spec, reports in zip(suites, results):
        name = f"suite_{spec.index:02d}_{spec.kind}.json"
        payload = {
            "suite": spec.index,
            "kind": spec.kind,
            "source": spec.source_name,
            "label": spec.label,
            "reports": [r.to_dict() for r in reports],
        }
        _atomic_write(out / name,
                      json.dumps(payload, indent=2).encode("utf-8"))
        report_paths.append(name)
        suite_rows.append((spec.index, spec.kind, payload["reports"]))
        all_reports.extend(reports)

    csv_text = summary_csv_text(_flat_rows(suite_rows))
    _atomic_write(out / SUMMARY_NAME, csv_text.encode("utf-8"))

    aggregate_pass = all(r.passed for r in all_reports
                         if r.asserted and r.applicable)
    statuses = [{"suite": spec.index, "kind": spec.kind,
                 "statuses": [r.status for r in reports]}
                for spec, reports in zip(suites, results)]
    manifest = {
        "tool_version": TOOL_VERSION,
        "config_hash": config_digest(config, master_seed, budget_scale),
        "master_seed": master_seed,
        "budget_scale": budget_scale,
        "jobs": workers,
        "report_files": report_paths,
        "summary_csv": SUMMARY_NAME,
        "aggregate_pass": aggregate_pass,
        "suite_statuses": statuses,
        "total_runtime_s": time.perf_counter() - started,
    }
    _atomic_write(out / MANIFEST_NAME,
                  json.dumps(manifest, indent=2).encode("utf-8"))
    return RunResult(manifest=manifest, out_dir=out, reports=results,
                     exit_code=0 if aggregate_pass else 1)


def _format_table(rows: list) -> str:
    header = ("suite", "kind", "case", "n", "lhs", "rhs", "SE", "z", "verdict")
    cells = [header]
    for index, kind, rep in rows:
        cells.append((
            str(index), kind, rep["case_label"], str(rep["n"]),
            f"{float(rep['lhs']['mean']):.6g}",
            f"{float(rep['rhs']['mean']):.6g}",
            f"{float(rep['difference']['std_error']):.3g}",
            f"{float(rep['z_score']):.3g}",
            rep["status"],
        ))
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _phi_curve_text(reports: list) -> Optional[str]:
    points = []
    zero = None
    for rep in reports:
        meta = rep.get("metadata", {})
        if rep.get("kind") == "invariance" and "t" in meta:
            points.append((float(meta["t"]), float(rep["lhs"]["mean"]),
                           float(rep["lhs"]["std_error"])))
            if zero is None and "phi_zero" in meta:
                zero = (0.0, float(meta["phi_zero"]["mean"]),
                        float(meta["phi_zero"]["std_error"]))
    if not points:
        return None
    if zero is not None:
        points.append(zero)
    points.sort()
    lines = ["# t  estimate  std_error"]
    lines += [f"{t:.17g} {est:.17g} {se:.17g}" for t, est, se in points]
    return "\n".join(lines) + "\n"


def _census_text(reports: list) -> Optional[str]:
    for rep in reports:
        census = rep.get("metadata", {}).get("census")
        if census:
            lines = ["# class  count"]
            for key in ("equilateral", "isosceles", "violating"):
                lines.append(f"{key} {census[key]}")
            return "\n".join(lines) + "\n"
    return None


def summarize(manifest_path, out_dir: Optional[str] = None):
    """Render the run table, refresh the CSV, and emit plot data files.

    Returns (text, exit_code); missing report files are listed in the text
    with exit code 1.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        return f"manifest not found: {manifest_path}", 1
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    out = Path(out_dir) if out_dir is not None else base
    out.mkdir(parents=True, exist_ok=True)
    missing = []
    suite_rows = []
    data_files = []
    for name in manifest.get("report_files", []):
        path = base / name
        if not path.exists():
            missing.append(name)
            continue
        payload = json.loads(path.read_text())
        reports = payload.get("reports", [])
        suite_rows.append((payload["suite"], payload["kind"], reports))
        if payload["kind"] == "invariance":
            text = _phi_curve_text(reports)
            if text is not None:
                fname = f"phi_curve_suite{payload['suite']:02d}.dat"
                _atomic_write(out / fname, text.encode("utf-8"))
                data_files.append(fname)
        if payload["kind"] == "ultrametric":
            text = _census_text(reports)
            if text is not None:
                fname = f"census_suite{payload['suite']:02d}.dat"
                _atomic_write(out / fname, text.encode("utf-8"))
                data_files.append(fname)
    rows = _flat_rows(suite_rows)
    _atomic_write(out / SUMMARY_NAME, summary_csv_text(rows).encode("utf-8"))
    lines = [_format_table(rows)] if rows else ["(no tests)"]
    overall = "pass" if manifest.get("aggregate_pass") else "FAIL"
    lines.append("")
    lines.append(f"aggregate: {overall}   seed={manifest.get('master_seed')}   "
                 f"tool={manifest.get('tool_version')}")
    if data_files:
        lines.append("plot data: " + ", ".join(data_files))
    if missing:
        lines.append("missing report files: " + ", ".join(missing))
        return "\n".join(lines), 1
    return "\n".join(lines), 0
