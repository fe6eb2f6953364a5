"""File formats: dataset CSV, stage artifacts (JSON / npz / CSV) and run
manifests.  Every structured artifact carries a schema name and version;
all writes go through a temporary file and an atomic rename."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import SchemaError, ValidationError
from .mcmc.chain import PosteriorDraws
from .mcmc.summary import QUANTILE_LEVELS, PosteriorSummary
from .selection import SelectionReport
from .survival_core import PmleEstimate, SiteSurvivalData

__all__ = [
    "parse_dataset",
    "write_dataset",
    "Stage1Document",
    "SiteRecord",
    "save_stage1",
    "load_stage1",
    "save_draws",
    "load_draws",
    "save_summary",
    "load_summary",
    "save_report",
    "load_report",
    "save_json",
    "load_json",
    "write_manifest",
    "atomic_write_text",
    "file_sha256",
]

SCHEMA_VERSION = 1
STAGE1 = "spatialcox.stage1"
SUMMARY = "spatialcox.summary"
REPORT = "spatialcox.report"
DRAWS = "spatialcox.draws"
TRUTH = "spatialcox.truth"
MANIFEST = "spatialcox.manifest"


# ---------------------------------------------------------------- plumbing


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else x
    return obj


def save_json(path, schema: str, payload: dict) -> None:
    doc = {"schema": schema, "version": SCHEMA_VERSION}
    doc.update(_jsonable(payload))
    atomic_write_text(path, json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_json(path, schema: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a valid {schema} document ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        found = doc.get("schema") if isinstance(doc, dict) else type(doc).__name__
        raise SchemaError(f"{path}: expected schema {schema!r}, found {found!r}")
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: expected {schema} version {SCHEMA_VERSION}, "
                          f"found {doc.get('version')!r}")
    return doc


def _nan(x):
    return math.nan if x is None else x


def _array(x, dtype=float):
    return np.array([[_nan(v) for v in row] if isinstance(row, list) else _nan(row)
                     for row in x], dtype=dtype)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- dataset


def parse_dataset(path):
    """Read ``site_id,time,status,x1,...,xp`` rows grouped by site.

    Returns ``(sites, covariate_names)``; sites keep the order in which
    their ids first appear.  Errors name the offending line.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["site_id", "time", "status"] or len(header) < 4:
            raise ValidationError(
                f"{path}:1: header must be site_id,time,status,x1,...,xp; got {header}")
        names = header[3:]
        width = len(header)
        rows: dict = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != width:
                raise ValidationError(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
            site = rec[0].strip()
            try:
                t = float(rec[1])
                st = float(rec[2])
                x = [float(v) for v in rec[3:]]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if not (math.isfinite(t) and t > 0):
                raise ValidationError(f"{path}:{lineno}: time must be positive, got {rec[1]}")
            if st not in (0.0, 1.0):
                raise ValidationError(f"{path}:{lineno}: status must be 0 or 1, got {rec[2]}")
            if not all(math.isfinite(v) for v in x):
                raise ValidationError(f"{path}:{lineno}: non-finite covariate value")
            rows.setdefault(site, []).append((t, int(st), x))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    sites = []
    for site, recs in rows.items():
        sites.append(SiteSurvivalData(
            site, np.array([r[0] for r in recs]), np.array([r[1] for r in recs]),
            np.array([r[2] for r in recs], dtype=float).reshape(len(recs), len(names))))
    return sites, names


def write_dataset(sites, path, names=None) -> None:
    p = sites[0].p
    names = list(names) if names else [f"x{k + 1}" for k in range(p)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["site_id", "time", "status", *names])
    for s in sites:
        for t, st, x in zip(s.times, s.status, s.covariates):
            w.writerow([s.site_id, repr(float(t)), int(st), *(repr(float(v)) for v in x)])
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------- stage 1


@dataclass
class SiteRecord:
    site_id: str
    beta_hat: np.ndarray | None
    v_hat: np.ndarray | None
    converged: bool
    n_events: int
    log_pl: float | None
    excluded: bool
    reason: str | None


@dataclass
class Stage1Document:
    covariates: list
    sites: list
    exclusion_threshold: float = 100.0
    fit_options: dict = field(default_factory=dict)

    def included(self) -> list[PmleEstimate]:
        return [PmleEstimate(r.site_id, r.beta_hat, r.v_hat, r.converged, r.n_events,
                             r.log_pl) for r in self.sites if not r.excluded]

    @classmethod
    def from_fit(cls, dataset, estimates, excluded, covariates, exclusion_threshold=100.0,
                 fit_options=None):
        by_id = {e.site_id: e for e in estimates}
        exc = {e.site_id: e for e in excluded}
        records = []
        for s in dataset:
            if s.site_id in by_id:
                e = by_id[s.site_id]
                records.append(SiteRecord(str(s.site_id), e.beta_hat, e.v_hat, e.converged,
                                          e.n_events, e.log_pl, False, None))
            else:
                x = exc[s.site_id]
                e = x.estimate
                records.append(SiteRecord(
                    str(s.site_id), None if e is None else e.beta_hat,
                    None if e is None else e.v_hat, bool(e and e.converged), s.n_events,
                    None if e is None else e.log_pl, True, x.reason))
        return cls(list(covariates), records, exclusion_threshold, dict(fit_options or {}))


def save_stage1(doc: Stage1Document, path) -> None:
    sites = []
    for r in doc.sites:
        bh = None if r.beta_hat is None or not np.all(np.isfinite(r.beta_hat)) else r.beta_hat
        vh = None if r.v_hat is None or not np.all(np.isfinite(r.v_hat)) else r.v_hat
        sites.append({"site_id": r.site_id, "beta_hat": bh, "v_hat": vh,
                      "converged": bool(r.converged), "n_events": int(r.n_events),
                      "log_pl": r.log_pl, "excluded": bool(r.excluded), "reason": r.reason})
    save_json(path, STAGE1, {"covariates": doc.covariates,
                             "exclusion_threshold": doc.exclusion_threshold,
                             "fit_options": doc.fit_options, "sites": sites})


def load_stage1(path) -> Stage1Document:
    doc = load_json(path, STAGE1)
    try:
        p = len(doc["covariates"])
        records = []
        for s in doc["sites"]:
            bh = None if s["beta_hat"] is None else np.array(s["beta_hat"], dtype=float)
            vh = None if s["v_hat"] is None else np.array(s["v_hat"], dtype=float)
            if not s["excluded"] and (bh is None or bh.shape != (p,) or vh.shape != (p, p)):
                raise SchemaError(f"{path}: site {s['site_id']!r} has malformed estimates")
            records.append(SiteRecord(str(s["site_id"]), bh, vh, bool(s["converged"]),
                                      int(s["n_events"]), s.get("log_pl"),
                                      bool(s["excluded"]), s.get("reason")))
        return Stage1Document(list(doc["covariates"]), records,
                              float(doc.get("exclusion_threshold", 100.0)),
                              dict(doc.get("fit_options", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed stage-1 document ({exc!r})") from exc


# ---------------------------------------------------------------- draws


def save_draws(draws: PosteriorDraws, path) -> None:
    """``.npz`` (binary) or ``.csv`` chosen by suffix; identical row layout."""
    path = Path(path)
    table = draws.as_table()
    cols = draws.columns()
    if path.suffix == ".csv":
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(cols)
        for row in table:
            buf.write(f"{int(row[0])},{int(row[1])},"
                      + ",".join(repr(float(v)) for v in row[2:]) + "\n")
        atomic_write_text(path, buf.getvalue())
        return
    buf = io.BytesIO()
    np.savez_compressed(buf, schema=np.array(DRAWS), version=np.array(SCHEMA_VERSION),
                        table=table, columns=np.array(cols),
                        shape=np.array([draws.n_sites, draws.p]),
                        site_ids=np.array([str(s) for s in draws.site_ids]))
    atomic_write_bytes(path, buf.getvalue())


def load_draws(path) -> PosteriorDraws:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, encoding="utf-8") as fh:
            cols = next(csv.reader([fh.readline()]), [])
            if cols[:2] != ["chain", "iteration"] or cols[-1] != "tau":
                raise SchemaError(f"{path}: not a draws table")
            p = sum(c.startswith("lambda[") for c in cols)
            n = (len(cols) - 3 - 2 * p) // p if p else 0
            try:
                table = np.loadtxt(fh, delimiter=",", ndmin=2)
            except ValueError as exc:
                raise SchemaError(f"{path}: malformed draws table ({exc})") from exc
        if table.shape[1] != len(cols):
            raise SchemaError(f"{path}: rows have {table.shape[1]} values for {len(cols)} columns")
        return PosteriorDraws.from_table(table, n, p)
    try:
        with np.load(path, allow_pickle=False) as z:
            if str(z["schema"]) != DRAWS or int(z["version"]) != SCHEMA_VERSION:
                raise SchemaError(f"{path}: expected {DRAWS} v{SCHEMA_VERSION}, found "
                                  f"{z['schema']} v{z['version']}")
            n, p = (int(v) for v in z["shape"])
            return PosteriorDraws.from_table(z["table"], n, p, tuple(z["site_ids"].tolist()))
    except (OSError, KeyError, ValueError, EOFError) as exc:
        raise SchemaError(f"{path}: unreadable draws file ({exc})") from exc


# ---------------------------------------------------------------- summary / report


def save_summary(summary: PosteriorSummary, path) -> None:
    save_json(path, SUMMARY, {
        "site_ids": [str(s) for s in summary.site_ids],
        "n_draws": summary.n_draws,
        "beta_mean": summary.beta_mean,
        "lambda_mean": summary.lambda_mean,
        "c_mean": summary.c_mean,
        "tau_mean": summary.tau_mean,
        "ess": summary.ess,
        "quantiles": {repr(q): summary.beta_quantiles[j]
                      for j, q in enumerate(QUANTILE_LEVELS)},
    })


def load_summary(path) -> PosteriorSummary:
    doc = load_json(path, SUMMARY)
    try:
        return PosteriorSummary(
            beta_mean=_array(doc["beta_mean"]),
            lambda_mean=_array(doc["lambda_mean"]),
            c_mean=_array(doc["c_mean"]),
            tau_mean=float(doc["tau_mean"]),
            ess={"lambda": _array(doc["ess"]["lambda"]), "c": _array(doc["ess"]["c"]),
                 "tau": float(doc["ess"]["tau"])},
            beta_quantiles=np.stack([_array(doc["quantiles"][repr(q)])
                                     for q in QUANTILE_LEVELS]),
            n_draws=int(doc["n_draws"]),
            site_ids=tuple(doc["site_ids"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed summary ({exc!r})") from exc


def save_report(report: SelectionReport, path, thresholds: dict | None = None) -> None:
    save_json(path, REPORT, {"thresholds": thresholds or {}, "predictors": report.records()})


def load_report(path) -> SelectionReport:
    doc = load_json(path, REPORT)
    try:
        recs = doc["predictors"]
        return SelectionReport(
            selected=np.array([bool(r["selected"]) for r in recs]),
            spatially_varying=[r["spatially_varying"] for r in recs],
            lambda_mean=np.array([_nan(r["lambda_mean"]) for r in recs], dtype=float),
            c_mean=np.array([_nan(r["c_mean"]) for r in recs], dtype=float),
            names=tuple(r["name"] for r in recs),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed report ({exc!r})") from exc


# ---------------------------------------------------------------- manifest


def write_manifest(out_dir, command: str, argv, seed=None, config_path=None,
                   inputs=(), started=None) -> None:
    """Record what produced the files in ``out_dir`` (re-runnable from ``argv``)."""
    now = _dt.datetime.now(_dt.timezone.utc).isoformat()
    hashes = {str(p): file_sha256(p) for p in inputs if p and os.path.isfile(p)}
    save_json(Path(out_dir) / "manifest.json", MANIFEST, {
        "command": command,
        "argv": list(argv),
        "config_path": None if config_path is None else str(config_path),
        "input_hashes": hashes,
        "seed": seed,
        "tool_version": __version__,
        "started": started or now,
        "finished": now,
    })
