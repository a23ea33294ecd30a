"""Command-line driver: multi-run experiments, comparisons and QUBO export.

Settings are resolved as command line > config file > built-in defaults.
The config file is flat ``key = value`` text; keys are the long option names
(dashes or underscores) and ``#`` starts a comment.

Exit status is 0 on success, 1 on usage errors and 2 on data errors
(unreadable or malformed instances, unwritable outputs, mismatched runs).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import re
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .annealer import ExactSolver, SimulatedAnnealingSolver
from .datasets import port1_path
from .metrics import (
    HV_DISPLAY_SCALE,
    attainment_surface,
    default_reference,
    eaf,
    eaf_grid,
    hypervolume_2d,
)
from .pareto import Archive
from .portfolio import (
    EncodingFeasibility,
    EncodingScheme,
    PortfolioParseError,
    build_qubos,
    parse_orlib,
)
from .qubo import write_triplets
from .scalarise import RunConfig, run_sbda

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
MANIFEST = "manifest.json"


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (converter, default)
SETTINGS = {
    "instance": (str, "port1"),
    "K": (int, 10),
    "eps": (float, 0.01),
    "delta": (float, 1.0),
    "bits_per_asset": (int, 8),
    "s_type": (str, "iterative"),
    "k": (int, 10),
    "time": (str, "0.05n"),
    "sweeps_per_iteration": (int, None),
    "n_top": (int, 1000),
    "runs": (int, 20),
    "seed": (int, 0),
    "out": (str, None),
    "jobs": (int, None),
    "solver": (str, "anneal"),
    "penalty": (float, None),
    "admit_infeasible": (_flag, False),
    "sld_literal": (_flag, False),
    "count_duplicates": (_flag, False),
    "raw_gap_space": (_flag, False),
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- settings

def read_config(path) -> dict:
    """Parse a flat ``key = value`` file into typed settings."""
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, _, value = line.partition(" ")
        key = key.strip().replace("-", "_")
        name = key
        if name not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[name] = SETTINGS[name][0](value.strip())
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {name}: {exc}") from exc
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    merged = {name: default for name, (_, default) in SETTINGS.items()}
    if getattr(args, "config", None):
        merged.update(read_config(args.config))
    for name in SETTINGS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    if merged["runs"] < 1:
        raise UsageError("runs must be at least 1")
    if merged["s_type"] not in ("random", "uniform", "iterative"):
        raise UsageError(f"unknown s_type {merged['s_type']!r}")
    if merged["solver"] not in ("anneal", "exact"):
        raise UsageError(f"unknown solver {merged['solver']!r}")
    return merged


def parse_time_budget(text: str, n_variables: int) -> float:
    """Total seconds per run: ``"0.05n"`` scales with the variable count."""
    budget = str(text).strip()
    match = re.fullmatch(r"([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\*?\s*n", budget)
    try:
        seconds = float(match.group(1)) * n_variables if match else float(budget)
    except ValueError as exc:
        raise UsageError(f"bad time budget {text!r}; use seconds or a multiple of n like 0.05n") from exc
    if not seconds > 0:
        raise UsageError("time budget must be positive")
    return seconds


# ---------------------------------------------------------------- instances

def load_instance_text(source: str) -> tuple[str, str, str]:
    """(text, name, source) for a path or one of the names ``port1`` and ``toy``."""
    bundled = {"toy": "toy3", "port1": "port1_synthetic"}
    if source in bundled and not (source == "port1" and port1_path()):
        name = bundled[source]
        return load_bundled_text(name), name, f"bundled:{name}"
    path = Path(port1_path() if source == "port1" else source)
    try:
        return path.read_text("utf-8"), path.stem, str(path.resolve())
    except OSError as exc:
        raise DataError(f"cannot read instance {path}: {exc}") from exc


def load_bundled_text(name: str) -> str:
    from importlib import resources

    return resources.files("sbda").joinpath(f"data/{name}.txt").read_text("utf-8")


def _encoding(settings: dict, n_assets: int) -> EncodingScheme:
    try:
        return EncodingScheme(
            n_assets, K=settings["K"], eps=settings["eps"], delta=settings["delta"],
            bits_per_asset=settings["bits_per_asset"],
        )
    except ValueError as exc:
        raise UsageError(f"invalid encoding: {exc}") from exc


def _problem(settings: dict):
    text, name, source = load_instance_text(settings["instance"])
    try:
        inst = parse_orlib(text, name)
    except PortfolioParseError as exc:
        raise DataError(f"{source}: {exc}") from exc
    enc = _encoding(settings, inst.n_assets)
    return text, source, inst, enc, build_qubos(inst, enc)


# ---------------------------------------------------------------- output helpers

def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(path) -> Path:
    if path is None:
        raise UsageError("an output directory is required (--out)")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _num(value) -> str:
    """Shortest round-trip text of a number."""
    return repr(float(value))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def front_name(index: int) -> str:
    return f"front_{index:03d}.csv"


def log_name(index: int) -> str:
    return f"log_{index:03d}.json"


# ---------------------------------------------------------------- run

def _run_one(job: dict) -> dict:
    """Worker body: one seeded SB-DA run, written atomically to the output directory."""
    settings = job["settings"]
    inst = parse_orlib(job["text"], job["name"])
    enc = _encoding(settings, inst.n_assets)
    B, D, G = build_qubos(inst, enc)
    if settings["solver"] == "exact":
        solver = ExactSolver()
    else:
        solver = SimulatedAnnealingSolver(sweeps_hint=settings["sweeps_per_iteration"])
    cfg = RunConfig(
        k=settings["k"], total_time=job["total_time"], n_top=settings["n_top"],
        s_type=settings["s_type"], seed=job["seed"], penalty_override=settings["penalty"],
        gap_space="raw" if settings["raw_gap_space"] else "normalised",
        sld_literal=settings["sld_literal"], admit_infeasible=settings["admit_infeasible"],
    )
    started = time.perf_counter()
    result = run_sbda(B, D, G, cfg, solver, EncodingFeasibility(enc))
    wall = time.perf_counter() - started

    out = Path(job["out"])
    buf = io.StringIO()
    result.front.to_csv(buf)
    _atomic_write(out / front_name(job["index"]), buf.getvalue())
    _atomic_write(
        out / log_name(job["index"]),
        _dumps({"run": job["index"], "seed": job["seed"], "wall_time": wall, "iterations": result.log}),
    )
    return {"index": job["index"], "seed": job["seed"], "wall_time": wall}


def hv_table(fronts, ref, count_duplicates: bool, seeds=None, method: str = ""):
    """Rows of ``hv.csv``: one per run, then mean and sample standard deviation."""
    rows = []
    hvs, counts = [], []
    for i, front in enumerate(fronts):
        hv = hypervolume_2d(front.points, ref) if len(front) else 0.0
        count = front.count(distinct_points=not count_duplicates)
        hvs.append(hv)
        counts.append(count)
        seed = "" if seeds is None else seeds[i]
        rows.append([i, method, seed, _num(hv), _num(hv / HV_DISPLAY_SCALE), count])
    ddof = 1 if len(hvs) > 1 else 0
    for label, fn in (("mean", np.mean), ("std", lambda v: np.std(v, ddof=ddof))):
        hv = float(fn(hvs))
        rows.append([label, method, "", _num(hv), _num(hv / HV_DISPLAY_SCALE), _num(fn(counts))])
    header = ["run", "method", "seed", "hypervolume", "hypervolume_scaled", "count"]
    return header, rows, np.array(hvs), np.array(counts)


def cmd_run(settings: dict) -> int:
    text, source, inst, enc, (B, D, G) = _problem(settings)
    out = _out_dir(settings["out"])
    total_time = parse_time_budget(settings["time"], enc.n_variables)
    if settings["sweeps_per_iteration"] is not None and settings["sweeps_per_iteration"] < 1:
        raise UsageError("sweeps-per-iteration must be positive")
    try:
        RunConfig(k=settings["k"], n_top=settings["n_top"], s_type=settings["s_type"],
                  penalty_override=settings["penalty"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ref = default_reference(B, D)
    seeds = [settings["seed"] + i for i in range(settings["runs"])]
    jobs = [
        {"settings": settings, "text": text, "name": inst.name, "out": str(out),
         "index": i, "seed": s, "total_time": total_time}
        for i, s in enumerate(seeds)
    ]
    workers = settings["jobs"] or os.cpu_count() or 1
    workers = max(1, min(workers, len(jobs)))
    started = time.perf_counter()
    if workers == 1:
        done = [_run_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(_run_one, jobs))
    total_wall = time.perf_counter() - started

    fronts = [_read_front(out / front_name(i), enc.n_variables) for i in range(len(jobs))]
    header, rows, hvs, counts = hv_table(fronts, ref, settings["count_duplicates"], seeds, settings["s_type"])
    _atomic_write(out / "hv.csv", _csv_text(header, rows))

    manifest = {
        "software": {"package": "sbda", "version": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "instance": {"source": source, "name": inst.name, "n_assets": inst.n_assets,
                     "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()},
        "encoding": {"K": enc.K, "eps": enc.eps, "delta": enc.delta,
                     "bits_per_asset": enc.bits_per_asset, "n_variables": enc.n_variables},
        "settings": {k: v for k, v in settings.items() if k not in ("out",)},
        "time_budget": {"total": total_time, "per_iteration": total_time / settings["k"],
                        "sweeps_per_iteration": settings["sweeps_per_iteration"]},
        "reference": [ref.r1, ref.r2],
        "hv_display_scale": HV_DISPLAY_SCALE,
        "runs": [{"index": d["index"], "seed": d["seed"], "front": front_name(d["index"]),
                  "log": log_name(d["index"]), "wall_time": d["wall_time"]} for d in done],
        "wall_time_total": total_wall,
        "workers": workers,
    }
    _atomic_write(out / MANIFEST, _dumps(manifest))
    print(f"{len(jobs)} run(s) -> {out}")
    print(f"hypervolume {hvs.mean() / HV_DISPLAY_SCALE:.6g} +- "
          f"{(hvs.std(ddof=1) if len(hvs) > 1 else 0.0) / HV_DISPLAY_SCALE:.6g} (x1e23), "
          f"non-dominated {counts.mean():.2f}")
    return EXIT_OK


# ---------------------------------------------------------------- stored runs

def _read_front(path: Path, n_bits: int | None = None) -> Archive:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return Archive.from_csv(fh, n_bits)
    except OSError as exc:
        raise DataError(f"cannot read front {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed front file {path}: {exc}") from exc


def load_run_dir(path) -> tuple[dict, list]:
    """Manifest and per-run fronts of a completed ``run`` directory."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"run directory not found: {root}")
    try:
        manifest = json.loads((root / MANIFEST).read_text("utf-8"))
    except OSError as exc:
        raise DataError(f"no manifest in {root}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest in {root}: {exc}") from exc
    n_bits = manifest.get("encoding", {}).get("n_variables")
    fronts = [_read_front(root / r["front"], n_bits) for r in manifest["runs"]]
    return manifest, fronts


def _same_problem(a: dict, b: dict) -> bool:
    return a["instance"]["sha256"] == b["instance"]["sha256"] and a["encoding"] == b["encoding"]


def cmd_metrics(run_dir, out=None, reference=None, count_duplicates=None) -> int:
    manifest, fronts = load_run_dir(run_dir)
    target = _out_dir(out if out is not None else run_dir)
    ref = reference if reference is not None else manifest["reference"]
    dup = manifest["settings"].get("count_duplicates", False) if count_duplicates is None else count_duplicates
    seeds = [r["seed"] for r in manifest["runs"]]
    header, rows, hvs, counts = hv_table(fronts, ref, dup, seeds, manifest["settings"].get("s_type", ""))
    _atomic_write(target / "hv.csv", _csv_text(header, rows))

    runs = [f.points for f in fronts]
    grid = eaf_grid(runs)
    probs = eaf(runs, grid) if len(runs) else np.empty(0)
    _atomic_write(
        target / "eaf.csv",
        _csv_text(["f1", "f2", "eaf"], [[_num(x), _num(y), _num(p)] for (x, y), p in zip(grid, probs)]),
    )
    print(f"hypervolume {hvs.mean() / HV_DISPLAY_SCALE:.6g} (x1e23) over {len(fronts)} run(s), "
          f"non-dominated {counts.mean():.2f}")
    return EXIT_OK


def _levels(text, n_runs: int) -> list[int]:
    if text is None:
        return sorted({1, math.ceil(n_runs / 2), n_runs})
    try:
        levels = sorted({int(v) for v in str(text).split(",") if v.strip()})
    except ValueError as exc:
        raise UsageError(f"bad level list {text!r}") from exc
    bad = [lv for lv in levels if not 1 <= lv <= n_runs]
    if bad:
        raise UsageError(f"levels must lie in [1, {n_runs}]: {bad}")
    return levels


def cmd_compare(dir_a, dir_b, out, levels=None, max_cells=None) -> int:
    man_a, fronts_a = load_run_dir(dir_a)
    man_b, fronts_b = load_run_dir(dir_b)
    if not _same_problem(man_a, man_b):
        raise DataError(f"{dir_a} and {dir_b} were run on different instances or encodings")
    target = _out_dir(out)
    runs_a = [f.points for f in fronts_a]
    runs_b = [f.points for f in fronts_b]
    grid = eaf_grid(runs_a + runs_b, max_cells) if max_cells else eaf_grid(runs_a + runs_b)
    pa, pb = eaf(runs_a, grid), eaf(runs_b, grid)
    rows = [[_num(x), _num(y), _num(a), _num(b), _num(a - b)] for (x, y), a, b in zip(grid, pa, pb)]
    _atomic_write(target / "eafdiff.csv", _csv_text(["f1", "f2", "eaf_a", "eaf_b", "diff"], rows))
    for tag, runs in (("a", runs_a), ("b", runs_b)):
        for level in _levels(levels, len(runs)):
            surface = attainment_surface(runs, level)
            _atomic_write(
                target / f"surface_{tag}_L{level}.csv",
                _csv_text(["f1", "f2"], [[_num(x), _num(y)] for x, y in surface.staircase]),
            )
    print(f"compared {len(runs_a)} vs {len(runs_b)} run(s) on {len(grid)} grid points -> {target}")
    return EXIT_OK


def cmd_dump_qubo(settings: dict) -> int:
    _, _, inst, enc, (B, D, G) = _problem(settings)
    out = _out_dir(settings["out"])
    for label, Q in (("B", B), ("D", D), ("G", G)):
        buf = io.StringIO()
        write_triplets(Q, buf)
        _atomic_write(out / f"{label}.txt", buf.getvalue())
    _atomic_write(out / "G_constant.txt", f"{G.offset!r}\n")
    print(f"{inst.name}: {enc.n_variables} variables, G constant {G.offset!r} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_problem_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--instance", help="instance file, or 'port1' / 'toy' (default port1)")
    p.add_argument("--K", type=int, help="assets to select (default 10)")
    p.add_argument("--eps", type=float, help="minimum weight of a selected asset (default 0.01)")
    p.add_argument("--delta", type=float, help="maximum weight of a selected asset (default 1)")
    p.add_argument("--bits-per-asset", dest="bits_per_asset", type=int, help="default 8")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sbda", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    run = sub.add_parser("run", parents=[common], help="seeded multi-run experiment")
    _add_problem_options(run)
    run.add_argument("--s-type", dest="s_type", choices=("random", "uniform", "iterative"))
    run.add_argument("--k", type=int, help="weights per run (default 10)")
    run.add_argument("--time", help="total seconds per run, or a multiple of n such as 0.05n")
    run.add_argument("--sweeps-per-iteration", dest="sweeps_per_iteration", type=int,
                     help="fixed annealing sweeps per solver call; replaces the clock")
    run.add_argument("--n-top", dest="n_top", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
    run.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    run.add_argument("--solver", choices=("anneal", "exact"))
    run.add_argument("--penalty", type=float, help="fixed penalty weight instead of the automatic one")
    run.add_argument("--admit-infeasible", dest="admit_infeasible", action="store_true", default=None)
    run.add_argument("--sld-literal", dest="sld_literal", action="store_true", default=None)
    run.add_argument("--count-duplicates", dest="count_duplicates", action="store_true", default=None)
    run.add_argument("--raw-gap-space", dest="raw_gap_space", action="store_true", default=None)

    dump = sub.add_parser("dump-qubo", parents=[common], help="write B, D and G as triplet files")
    _add_problem_options(dump)

    met = sub.add_parser("metrics", parents=[common], help="recompute hv.csv and eaf.csv from stored fronts")
    met.add_argument("run_dir")
    met.add_argument("--out", help="output directory (default: the run directory)")
    met.add_argument("--reference", nargs=2, type=float, metavar=("R1", "R2"))
    met.add_argument("--count-duplicates", dest="count_duplicates", action="store_true", default=None)

    cmp_ = sub.add_parser("compare", parents=[common], help="EAF difference and attainment surfaces of two run directories")
    cmp_.add_argument("dir_a")
    cmp_.add_argument("dir_b")
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--levels", help="comma-separated attainment levels (default 1, median, all)")
    cmp_.add_argument("--max-cells", dest="max_cells", type=int, help="cap on EAF grid size")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        verbose = getattr(args, "verbose", 0) or 0
        logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("a command is required: run, compare, dump-qubo or metrics")
        if args.command == "run":
            return cmd_run(resolve_settings(args))
        if args.command == "dump-qubo":
            return cmd_dump_qubo(resolve_settings(args))
        if args.command == "metrics":
            return cmd_metrics(args.run_dir, args.out, args.reference, args.count_duplicates)
        return cmd_compare(args.dir_a, args.dir_b, args.out, args.levels, args.max_cells)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
