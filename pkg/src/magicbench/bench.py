"""Benchmark sweeps over the transverse field, with scoring against ED.

A sweep runs every ``(h, method, repeat)`` job of a :class:`SweepConfig`,
scores the resulting statevector against the exact ground state and appends
one JSON line per job to ``records.jsonl``.  Rerunning a sweep skips the jobs
already on disk, so an interrupted sweep resumes where it stopped.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from ._io import atomic_write_bytes, atomic_write_text
from .core import TfimModel, expectation_of_terms, tfim_terms
from .errors import ConfigError
from .magic import infidelity, m2_fast

log = logging.getLogger(__name__)

METHODS = ("ed", "rbm", "rbm_symmetric", "dmrg", "vqe")
# run once per (n, h); the rest run `repeats` times
DETERMINISTIC = ("ed", "dmrg")
RECORDS_JSONL = "records.jsonl"
CSV_COLUMNS = (
    "method", "n", "J", "h", "repeat", "seed", "energy", "m2", "infidelity",
    "energy_error_abs", "energy_error_rel", "m2_error_abs", "wall_time_s", "converged",
)
METRICS = ("energy", "m2", "infidelity", "energy_error_abs", "energy_error_rel", "m2_error_abs")
PLOTS = {
    "energy_error_abs": ("energy_error_abs", "mean", "|E - E_ED|"),
    "m2_error_abs": ("m2_error_abs", "mean", "|M2 - M2_ED|"),
    "infidelity": ("infidelity", "mean", "1 - |<psi|psi_ED>|^2"),
    "energy_stat_error": ("energy", "stderr", "statistical error of E"),
    "m2_stat_error": ("m2", "stderr", "statistical error of M2"),
}


def default_h_grid(n: int) -> list[float]:
    """25 points with step 0.125 for n <= 8, else 13 points with step 0.25, over [0, 3]."""
    step = 0.125 if n <= 8 else 0.25
    count = int(round(3.0 / step)) + 1
    return [round(k * step, 12) for k in range(count)]


@dataclass
class SweepConfig:
    n: int = 8
    J: float = -1.0
    h_grid: list = None
    methods: list = field(default_factory=lambda: ["ed", "rbm", "dmrg", "vqe"])
    repeats: int = 10
    method_configs: dict = field(default_factory=dict)
    overrides: list = field(default_factory=list)
    output_dir: str = "results"
    seed_base: int = 0
    periodic: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.h_grid is None:
            self.h_grid = default_h_grid(self.n)
        self.h_grid = [float(h) for h in self.h_grid]
        self.methods = list(self.methods)
        self.validate()

    def validate(self) -> None:
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.h_grid:
            raise ConfigError("h_grid is empty")
        if any(b <= a for a, b in zip(self.h_grid, self.h_grid[1:])):
            raise ConfigError("h_grid must be strictly increasing")
        if any(h < 0 for h in self.h_grid):
            raise ConfigError("h_grid values must be >= 0")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods contains duplicates")
        bad = set(self.method_configs) - set(METHODS)
        if bad:
            raise ConfigError(f"method_configs for unknown methods {sorted(bad)}")
        for o in self.overrides:
            if not {"h", "method", "params"} <= set(o):
                raise ConfigError("each override needs h, method and params")
        TfimModel(self.n, self.J, 0.0, self.periodic)

    @classmethod
    def from_dict(cls, data: dict) -> SweepConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path) -> SweepConfig:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def params_for(self, method: str, h: float) -> dict:
        params = dict(self.method_configs.get(method, {}))
        for o in self.overrides:
            if o["method"] == method and math.isclose(float(o["h"]), h, abs_tol=1e-12):
                params.update(o["params"])
        return params

    def jobs(self) -> list[tuple[float, str, int]]:
        return [
            (h, method, r)
            for h in self.h_grid
            for method in self.methods
            for r in range(1 if method in DETERMINISTIC else self.repeats)
        ]


def job_seed(seed_base: int, h: float, method: str, repeat: int) -> int:
    """``seed_base`` xor a 63-bit hash of the job, stable across runs and platforms."""
    digest = hashlib.blake2b(f"{h!r}|{method}|{repeat}".encode(), digest_size=8).digest()
    return (int(seed_base) ^ int.from_bytes(digest, "little")) & ((1 << 63) - 1)


@dataclass
class BenchmarkRecord:
    method: str
    n: int
    J: float
    h: float
    repeat: int
    seed: int
    energy: float | None = None
    m2: float | None = None
    infidelity: float | None = None
    energy_error_abs: float | None = None
    energy_error_rel: float | None = None
    m2_error_abs: float | None = None
    wall_time_s: float = 0.0
    converged: bool = False
    failed: bool = False
    error: str | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.method, self.n, self.h, self.repeat)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BenchmarkRecord:
        return cls(**d)


@dataclass
class Reference:
    energy: float
    state: np.ndarray
    m2: float
    gap: float = math.inf
    degenerate: bool = False


def _reference(model: TfimModel) -> Reference:
    from .exact import solve_ed

    res = solve_ed(model)
    return Reference(res.energy, res.state, m2_fast(res.state).m2, res.gap, res.degenerate)


def _solve(method: str, model: TfimModel, seed: int, params: dict, ref: Reference):
    """Returns ``(state, energy, converged, metadata)``."""
    if method == "ed":
        gap = ref.gap if math.isfinite(ref.gap) else None
        return ref.state, ref.energy, True, {"gap": gap, "degenerate": ref.degenerate}
    if method == "dmrg":
        from .dmrg import DMRGSolver

        est = DMRGSolver(**params).fit(model)
        return est.state_, est.energy_, est.converged_, est.metadata()
    if method in ("rbm", "rbm_symmetric"):
        from .nqs.training import RBMSolver

        params = {**params, "symmetric": method == "rbm_symmetric", "seed": seed % (1 << 32)}
        est = RBMSolver(**params).fit(model)
        meta = est.metadata()
        meta.pop("config", None)
        return est.state_, est.energy_, est.converged_, meta
    if method == "vqe":
        from .vqe import VQESolver

        est = VQESolver(**{**params, "seed": seed % (1 << 32)}).fit(model)
        return est.state_, est.energy_, est.converged_, est.metadata()
    raise ConfigError(f"unknown method {method!r}")


def run_job(method: str, n: int, J: float, h: float, periodic: bool, repeat: int, seed: int,
            params: dict, ref: Reference) -> BenchmarkRecord:
    """Run one solver and score it; failures become flagged records."""
    rec = BenchmarkRecord(method, n, J, h, repeat, seed)
    model = TfimModel(n, J, h, periodic)
    start = time.perf_counter()
    try:
        with threadpool_limits(1):
            state, energy, converged, meta = _solve(method, model, seed, params, ref)
        # the reported energy is always re-evaluated on the returned state
        energy = expectation_of_terms(tfim_terms(model), state)
        m2 = m2_fast(state).m2
        rec.energy = float(energy)
        rec.m2 = float(m2)
        rec.infidelity = infidelity(state, ref.state)
        rec.energy_error_abs = abs(rec.energy - ref.energy)
        rec.energy_error_rel = rec.energy_error_abs / abs(ref.energy) if ref.energy else rec.energy_error_abs
        rec.m2_error_abs = abs(rec.m2 - ref.m2)
        rec.converged = bool(converged)
        rec.metadata = _jsonable(meta)
        if ref.degenerate:
            # scored against the parity-even representative of a degenerate pair
            rec.metadata["reference_degenerate"] = True
    except Exception as exc:  # noqa: BLE001 - a failed job must not stop the sweep
        log.warning("%s at h=%s repeat %d failed: %s", method, h, repeat, exc)
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time_s = time.perf_counter() - start
    return rec


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def load_records(path) -> list[BenchmarkRecord]:
    """Read ``records.jsonl`` or ``records.json``.  A torn final line is ignored."""
    path = Path(path)
    if not path.exists():
        return []
    text = path.read_text()
    if path.suffix == ".json":
        return [BenchmarkRecord.from_dict(d) for d in json.loads(text)]
    out = []
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            out.append(BenchmarkRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                log.warning("ignoring truncated last line of %s", path)
                continue
            raise
    return out


class _Writer:
    """Single appender for ``records.jsonl``; each record is flushed and synced."""

    def __init__(self, path: Path):
        self.path = path
        # drop a torn trailing line left by an interrupted run
        if path.exists():
            text = path.read_text()
            if text and not text.endswith("\n"):
                atomic_write_text(path, text[: text.rfind("\n") + 1])
        self.fh = open(path, "a")

    def write(self, rec: BenchmarkRecord) -> None:
        self.fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def close(self):
        self.fh.close()


def _sort_key(rec: BenchmarkRecord):
    order = METHODS.index(rec.method) if rec.method in METHODS else len(METHODS)
    return (rec.n, rec.h, order, rec.method, rec.repeat)


def run_sweep(config: SweepConfig, progress=None) -> list[BenchmarkRecord]:
    """Run all pending jobs of ``config`` and return every record of the sweep.

    Completed jobs found in ``output_dir/records.jsonl`` are not rerun.
    ED references are computed only for fields that still have pending jobs.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / RECORDS_JSONL
    existing = {r.key: r for r in load_records(path)}
    pending = [
        (h, m, r) for h, m, r in config.jobs() if (m, config.n, h, r) not in existing
    ]
    refs = {}
    with threadpool_limits(1):
        for h in sorted({h for h, _, _ in pending}):
            refs[h] = _reference(TfimModel(config.n, config.J, h, config.periodic))
    args = [
        (m, config.n, config.J, h, config.periodic, r, job_seed(config.seed_base, h, m, r),
         config.params_for(m, h), refs[h])
        for h, m, r in pending
    ]
    writer = _Writer(path)
    try:
        if config.workers == 1 or len(args) <= 1:
            results = (run_job(*a) for a in args)
            for rec in results:
                writer.write(rec)
                existing[rec.key] = rec
                if progress:
                    progress(rec)
        else:
            with ProcessPoolExecutor(config.workers) as pool:
                futures = [pool.submit(run_job, *a) for a in args]
                for fut in futures:
                    rec = fut.result()
                    writer.write(rec)
                    existing[rec.key] = rec
                    if progress:
                        progress(rec)
    finally:
        writer.close()
    wanted = {(m, config.n, h, r) for h, m, r in config.jobs()}
    return sorted((r for k, r in existing.items() if k in wanted), key=_sort_key)


@dataclass
class AggregateRow:
    method: str
    n: int
    h: float
    count: int
    failed: int
    mean: dict
    stderr: dict


def _stats(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = math.fsum(arr) / len(arr)
    if len(arr) < 2:
        return mean, 0.0
    return mean, float(np.std(arr, ddof=1) / math.sqrt(len(arr)))


def aggregate(records) -> list[AggregateRow]:
    """Mean and ``std(ddof=1) / sqrt(k)`` per ``(method, n, h)``; failed records are counted, not used."""
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault((r.method, r.n, r.h), []).append(r)
    rows = []
    for (method, n, h), recs in sorted(groups.items(), key=lambda kv: _sort_key(kv[1][0])):
        ok = [r for r in recs if not r.failed]
        if not ok:
            warnings.warn(f"no successful records for {method} n={n} h={h}; skipped", stacklevel=2)
            continue
        mean, err = {}, {}
        for metric in METRICS:
            mean[metric], err[metric] = _stats([getattr(r, metric) for r in ok])
        rows.append(AggregateRow(method, n, h, len(ok), len(recs) - len(ok), mean, err))
    return rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records) -> str:
    return _csv_text(CSV_COLUMNS, [[_fmt(getattr(r, c)) for c in CSV_COLUMNS] for r in records])


def records_json(records) -> str:
    """Deterministic JSON of the records; wall-clock time is left out."""
    items = []
    for r in sorted(records, key=_sort_key):
        d = r.to_dict()
        d.pop("wall_time_s")
        items.append(d)
    return json.dumps(items, sort_keys=True, indent=1) + "\n"


def aggregates_csv(rows) -> str:
    header = ["method", "n", "h", "count", "failed"]
    for m in METRICS:
        header += [f"{m}_mean", f"{m}_stderr"]
    body = []
    for row in rows:
        line = [row.method, row.n, _fmt(row.h), row.count, row.failed]
        for m in METRICS:
            line += [_fmt(row.mean[m]), _fmt(row.stderr[m])]
        body.append(line)
    return _csv_text(header, body)


def plot_names(n: int) -> list[str]:
    return [f"n{n}_{metric}.svg" for metric in PLOTS]


def _svg(rows, n, metric, stat, ylabel) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "magicbench", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        methods = []
        for row in rows:
            if row.method not in methods and row.method != "ed":
                methods.append(row.method)
        for method in methods:
            pts = [(r.h, getattr(r, stat)[metric]) for r in rows if r.method == method and r.n == n]
            hs = [p[0] for p in pts]
            ys = [p[1] if p[1] > 0 else np.nan for p in pts]
            ax.plot(hs, ys, marker="o", markersize=3, label=method)
        ax.set_yscale("log", nonpositive="mask")
        ax.set_xlabel("h")
        ax.set_ylabel(ylabel)
        ax.set_title(f"n = {n}")
        if methods:
            ax.legend()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def emit_report(rows, records, output_dir) -> list[Path]:
    """Write records.csv, records.json, aggregates.csv and one SVG per (n, plot).

    Every file goes through a temporary file and a rename.  No SVG is
    written when there are no aggregate rows.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=_sort_key)
    written = []
    for name, text in (
        ("records.csv", records_csv(records)),
        ("records.json", records_json(records)),
        ("aggregates.csv", aggregates_csv(rows)),
    ):
        atomic_write_text(out / name, text)
        written.append(out / name)
    plotted = [r for r in rows if r.method != "ed"]
    for n in sorted({r.n for r in plotted}):
        for (metric, (column, stat, ylabel)), name in zip(PLOTS.items(), plot_names(n)):
            atomic_write_bytes(out / name, _svg(rows, n, column, stat, ylabel))
            written.append(out / name)
    return written
