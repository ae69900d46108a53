"""Spike files, experiment configs and result bundles with a provenance manifest.

Spike files are JSON lines: a header ``{"meta": {"trials": N, "horizon": T}}``
(optionally ``"units": [...]`` to fix the unit order and declare silent units)
followed by one ``{"trial": r, "unit": "u", "t": seconds}`` record per event.
The CSV form has the columns ``trial,unit,t``; its horizon and trial count come
from the caller.  Times are written with shortest round-trip formatting, so
write-then-read reproduces every timestamp bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .ccg import CcgResult
from .core import EventSequence, TrialSet
from .estimate import FitResult
from .inference import NetworkEdges, QQTable, RocCurve
from .simulate import PRESETS, NetworkSpec
from .theory import TheoryCurves

__all__ = ["SpikeFormatError", "read_spikes", "write_spikes", "ExperimentConfig", "Table", "write_results",
           "config_hash", "toolkit_version"]


class SpikeFormatError(ValueError):
    """Malformed spike file; the message names the line and field."""


def toolkit_version() -> str:
    from . import __version__
    return __version__


# ---------------------------------------------------------------------------
# Spike files


def _detect(path: Path, fmt: str) -> str:
    if fmt != "auto":
        return fmt
    if path.suffix.lower() == ".csv":
        return "csv"
    if path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        return "jsonl"
    with open(path) as fh:
        first = fh.readline().strip()
    return "jsonl" if first.startswith("{") else "csv"


def _record(line_no: int, trial, unit, t, n_trials: int, horizon: float):
    try:
        r = int(trial)
        if isinstance(trial, float) and trial != r:
            raise ValueError
    except (TypeError, ValueError):
        raise SpikeFormatError(f"line {line_no}: field 'trial' must be an integer, got {trial!r}") from None
    if not 0 <= r < n_trials:
        raise SpikeFormatError(f"line {line_no}: field 'trial' = {r} outside [0, {n_trials})")
    if unit is None or str(unit) == "":
        raise SpikeFormatError(f"line {line_no}: field 'unit' is missing")
    try:
        x = float(t)
    except (TypeError, ValueError):
        raise SpikeFormatError(f"line {line_no}: field 't' must be a number, got {t!r}") from None
    if not np.isfinite(x) or x < 0 or x > horizon:
        raise SpikeFormatError(f"line {line_no}: field 't' = {x!r} outside [0, {horizon}]")
    return r, str(unit), x


def _assemble(events, units: Sequence[str], n_trials: int, horizon: float) -> TrialSet:
    procs = {}
    for u in units:
        seqs = []
        for r in range(n_trials):
            ts = np.asarray(events.get((u, r), []), float)
            if ts.size > 1 and np.any(np.diff(ts) < 0):
                warnings.warn(f"unit {u!r} trial {r}: timestamps were not sorted; sorting them")
                ts = np.sort(ts)
            if ts.size > 1 and np.any(np.diff(ts) == 0):
                dup = ts[1:][np.diff(ts) == 0][0]
                raise SpikeFormatError(f"unit {u!r} trial {r}: duplicate timestamp {dup!r}")
            seqs.append(EventSequence(ts, horizon))
        procs[u] = tuple(seqs)
    return TrialSet(procs, n_trials, horizon)


def read_spikes(path, format: Literal["auto", "jsonl", "csv"] = "auto", *, horizon: Optional[float] = None,
                trials: Optional[int] = None) -> TrialSet:
    """Read and validate a spike file.

    ``horizon`` and ``trials`` override (JSONL) or supply (CSV) the header
    values.  For CSV without ``trials`` the count is one more than the
    largest trial index seen.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"spike file not found: {path}")
    fmt = _detect(path, format)
    rows = []
    units: list[str] = []
    if fmt == "jsonl":
        meta = None
        with open(path) as fh:
            for k, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SpikeFormatError(f"line {k}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict):
                    raise SpikeFormatError(f"line {k}: expected a JSON object")
                if "meta" in obj:
                    if meta is not None:
                        raise SpikeFormatError(f"line {k}: second meta header")
                    meta = obj["meta"]
                    if not isinstance(meta, dict):
                        raise SpikeFormatError(f"line {k}: field 'meta' must be an object")
                    units.extend(str(u) for u in meta.get("units", []))
                    continue
                for key in ("trial", "unit", "t"):
                    if key not in obj:
                        raise SpikeFormatError(f"line {k}: missing field {key!r}")
                rows.append((k, obj["trial"], obj["unit"], obj["t"]))
        meta = meta or {}
        T = horizon if horizon is not None else meta.get("horizon")
        n = trials if trials is not None else meta.get("trials")
        if T is None or n is None:
            raise SpikeFormatError("missing meta header: supply horizon and trial count")
    elif fmt == "csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise SpikeFormatError("line 1: empty CSV file without header")
            header = [h.strip() for h in header]
            missing = [c for c in ("trial", "unit", "t") if c not in header]
            if missing:
                raise SpikeFormatError(f"line 1: missing column(s) {', '.join(missing)}")
            col = {c: header.index(c) for c in ("trial", "unit", "t")}
            for k, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise SpikeFormatError(f"line {k}: expected {len(header)} fields, got {len(row)}")
                rows.append((k, row[col["trial"]], row[col["unit"]], row[col["t"]]))
        if horizon is None:
            raise SpikeFormatError("CSV spike files need an explicit horizon")
        T = horizon
        if trials is not None:
            n = trials
        else:
            try:
                n = max((int(r[1]) for r in rows), default=-1) + 1
            except ValueError:
                n = None
            n = n if n is not None else 0
            if n == 0 and rows:
                raise SpikeFormatError(f"line {rows[0][0]}: field 'trial' must be an integer")
    else:
        raise ValueError(f"unknown spike format {fmt!r}")
    try:
        T, n = float(T), int(n)
    except (TypeError, ValueError):
        raise SpikeFormatError("meta: horizon must be a number and trials an integer") from None
    if not T > 0 or n < 0:
        raise SpikeFormatError("meta: horizon must be positive and trials non-negative")
    events = defaultdict(list)
    for k, trial, unit, t in rows:
        r, u, x = _record(k, trial, unit, t, n, T)
        if u not in units:
            units.append(u)
        events[(u, r)].append(x)
    return _assemble(events, units, n, T)


def write_spikes(data: TrialSet, path, format: Literal["jsonl", "csv"] = "jsonl") -> Path:
    """Write a TrialSet; events are ordered by trial, unit, time."""
    path = Path(path)
    if format == "jsonl":
        with open(path, "w") as fh:
            meta = {"trials": data.trial_count, "horizon": data.trial_horizon, "units": data.process_ids}
            fh.write(json.dumps({"meta": meta}) + "\n")
            for r in range(data.trial_count):
                for u in data.process_ids:
                    for t in data.processes[u][r].timestamps:
                        fh.write(f'{{"trial": {r}, "unit": {json.dumps(u)}, "t": {float(t)!r}}}\n')
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "unit", "t"])
            for r in range(data.trial_count):
                for u in data.process_ids:
                    for t in data.processes[u][r].timestamps:
                        w.writerow([r, u, repr(float(t))])
    else:
        raise ValueError(f"unknown spike format {format!r}")
    return path


# ---------------------------------------------------------------------------
# Experiment configuration

EMIT_KINDS = ("fits", "curves", "ccg", "theory", "network", "qq", "spikes")


class ExperimentConfig(BaseModel):
    """One JSON document describing a run; CLI flags override its fields."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: Union[str, NetworkSpec] = "linear_cox_basic"
    estimator: dict[str, Any] = Field(default_factory=dict)
    ccg: dict[str, Any] = Field(default_factory=dict)
    replications: int = Field(1, ge=1)
    seed: int = 0
    output_dir: str = "out"
    emit: frozenset[str] = frozenset(EMIT_KINDS)

    @field_validator("scenario")
    @classmethod
    def _known_preset(cls, v):
        if isinstance(v, str) and v not in PRESETS:
            raise ValueError(f"unknown preset {v!r}; choose one of {', '.join(PRESETS)}")
        return v

    @field_validator("emit")
    @classmethod
    def _known_kinds(cls, v):
        bad = set(v) - set(EMIT_KINDS)
        if bad:
            raise ValueError(f"unknown emit kind(s) {sorted(bad)}; choose from {', '.join(EMIT_KINDS)}")
        return frozenset(v)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.model_validate(json.load(fh))

    def canonical(self) -> dict:
        d = self.model_dump(mode="json")
        d["emit"] = sorted(d["emit"])
        return d


def config_hash(config: Union[ExperimentConfig, Mapping, None]) -> str:
    """sha256 of the canonical (sorted-key, compact) JSON form of a config."""
    if config is None:
        d = {}
    elif isinstance(config, ExperimentConfig):
        d = config.canonical()
    else:
        d = dict(config)
    text = json.dumps(d, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    if isinstance(x, BaseModel):
        return x.model_dump(mode="json")
    raise TypeError(f"cannot serialize {type(x).__name__}")


# ---------------------------------------------------------------------------
# Result bundles


@dataclass(frozen=True)
class Table:
    """Plain column table written as CSV (experiment summaries, replicate estimates)."""

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    @classmethod
    def from_records(cls, records: Sequence[Mapping]) -> "Table":
        cols = tuple(records[0]) if records else ()
        return cls(cols, tuple(tuple(r[c] for c in cols) for r in records))

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _kind(obj) -> str:
    if isinstance(obj, FitResult):
        return "fits"
    if isinstance(obj, CcgResult):
        return "ccg"
    if isinstance(obj, TheoryCurves):
        return "theory"
    if isinstance(obj, NetworkEdges):
        return "network"
    if isinstance(obj, QQTable):
        return "qq"
    if isinstance(obj, TrialSet):
        return "spikes"
    if isinstance(obj, (Table, RocCurve)):
        return "curves"
    raise TypeError(f"cannot write objects of type {type(obj).__name__}")


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def write_results(bundle: Mapping[str, Any], out_dir, *, config=None, seed: Optional[int] = None,
                  emit: Optional[Sequence[str]] = None) -> dict:
    """Write every object in ``bundle`` under ``out_dir`` and a manifest.json.

    File names derive from the bundle keys only, so a rerun overwrites the
    same files.  ``emit`` restricts which artifact kinds are written.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    keep = set(EMIT_KINDS if emit is None else emit)
    artifacts = []

    def record(name, kind, fname):
        artifacts.append({"name": name, "kind": kind, "path": fname})

    for name in sorted(bundle):
        obj = bundle[name]
        kind = _kind(obj)
        if kind not in keep:
            continue
        base = _safe(name)
        try:
            if kind == "fits":
                (out / f"{base}.json").write_text(obj.to_json())
                record(name, kind, f"{base}.json")
                if obj.impact_slices:
                    from .estimate import write_impact_csv
                    write_impact_csv(obj, out / f"{base}_impact.csv")
                    record(f"{name}_impact", "curves", f"{base}_impact.csv")
            elif kind == "network":
                obj.to_csv(out / f"{base}.csv")
                obj.to_json(out / f"{base}.json")
                record(name, kind, f"{base}.csv")
                record(f"{name}_graph", kind, f"{base}.json")
            elif kind == "spikes":
                write_spikes(obj, out / f"{base}.jsonl")
                record(name, kind, f"{base}.jsonl")
            else:
                obj.to_csv(out / f"{base}.csv")
                record(name, kind, f"{base}.csv")
        except OSError as exc:
            raise OSError(f"failed writing artifact {name!r} under {out}: {exc}") from exc
    manifest = {"version": toolkit_version(), "config_hash": config_hash(config), "seed": seed,
                "artifacts": artifacts}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
