"""Command line entry point: ``magicbench {sweep,report,ed,magic}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import MagicBenchError

STATE_HEADER = "magicbench-state v1"


def write_state(path, psi: np.ndarray) -> None:
    from ._io import atomic_write_text

    n = psi.shape[0].bit_length() - 1
    lines = [f"{STATE_HEADER} n={n}"]
    lines += [f"{z.real!r} {z.imag!r}" for z in map(complex, psi)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_state(path) -> np.ndarray:
    """Parse the plain-text statevector format: a header line then ``re im`` per amplitude."""
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 3 or " ".join(parts[:2]) != STATE_HEADER or not parts[2].startswith("n="):
            raise ValueError(f"{path}: bad header {header!r}, expected '{STATE_HEADER} n=<n>'")
        n = int(parts[2][2:])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != 1 << n:
        raise ValueError(f"{path}: expected {1 << n} amplitudes, found {len(rows)}")
    if any(len(r) != 2 for r in rows):
        raise ValueError(f"{path}: every amplitude line needs 're im'")
    vals = np.array(rows, dtype=float)
    return vals[:, 0] + 1j * vals[:, 1]


def _cmd_sweep(args) -> int:
    from .bench import SweepConfig, aggregate, emit_report, run_sweep

    cfg = SweepConfig.from_yaml(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed_base = args.seed
    if args.output is not None:
        cfg.output_dir = args.output
    cfg.validate()
    total = len(cfg.jobs())

    def progress(rec):
        status = "FAILED" if rec.failed else f"dE={rec.energy_error_abs:.3e}"
        print(f"{rec.method:>13} h={rec.h:<6g} rep={rec.repeat:<2d} {status} ({rec.wall_time_s:.1f}s)",
              flush=True)

    records = run_sweep(cfg, progress=None if args.quiet else progress)
    emit_report(aggregate(records), records, cfg.output_dir)
    failed = sum(r.failed for r in records)
    print(f"{len(records)}/{total} records in {cfg.output_dir}; {failed} failed")
    return 2 if failed else 0


def _cmd_report(args) -> int:
    from .bench import aggregate, emit_report, load_records

    records = load_records(args.records)
    out = args.output or str(Path(args.records).parent)
    files = emit_report(aggregate(records), records, out)
    for f in files:
        print(f)
    return 2 if any(r.failed for r in records) else 0


def _cmd_ed(args) -> int:
    from .core import TfimModel
    from .exact import solve_ed
    from .magic import m2_fast

    model = TfimModel(args.n, args.J, args.h, not args.open)
    res = solve_ed(model)
    out = {
        "n": args.n,
        "J": args.J,
        "h": args.h,
        "periodic": not args.open,
        "energy": res.energy,
        "gap": res.gap,
        "degenerate": res.degenerate,
        "m2": m2_fast(res.state).m2,
        "solver": res.solver,
    }
    print(json.dumps(out))
    if args.output:
        write_state(args.output, res.state)
    return 0


def _cmd_magic(args) -> int:
    from .magic import m2_fast

    psi = read_state(args.state)
    norm = float(np.linalg.norm(psi))
    if not np.isclose(norm, 1.0, atol=1e-8):
        print(f"warning: state norm {norm:.12g}; normalizing", file=sys.stderr)
        psi = psi / norm
    res = m2_fast(psi)
    print(json.dumps({"n": psi.shape[0].bit_length() - 1, "m2": res.m2,
                      "pauli_fourth_moment": res.pauli_fourth_moment}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magicbench", description="Ground-state accuracy and magic benchmarks for the TFIM.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="run (or resume) a benchmark sweep")
    s.add_argument("--config", required=True, help="YAML sweep configuration")
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int, help="override seed_base")
    s.add_argument("--output", help="override output_dir")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=_cmd_sweep)

    r = sub.add_parser("report", help="rebuild CSV, JSON and plots from records")
    r.add_argument("--records", required=True, help="records.jsonl or records.json")
    r.add_argument("--output")
    r.set_defaults(func=_cmd_report)

    e = sub.add_parser("ed", help="exact ground state of one TFIM instance")
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--h", type=float, required=True)
    e.add_argument("--J", type=float, default=-1.0)
    e.add_argument("--open", action="store_true", help="open instead of periodic boundary")
    e.add_argument("--output", help="write the ground state in the plain-text state format")
    e.set_defaults(func=_cmd_ed)

    m = sub.add_parser("magic", help="stabilizer Renyi entropy of a stored statevector")
    m.add_argument("--state", required=True)
    m.set_defaults(func=_cmd_magic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MagicBenchError, ValueError, OSError) as exc:
        print(f"magicbench: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
