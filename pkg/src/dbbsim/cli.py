"""``dbbsim`` command line: compress, prune, simulate, sweep, report, defaults.

Errors print one line ``dbbsim: error=<Code>: <message>`` on stderr and exit
with a code that tells the failure class apart:

    1  data error (density bound exceeded, accumulator overflow)
    2  I/O error (unreadable, corrupt or existing output file)
    3  configuration or usage error
    4  workload error (network file, unknown network, bad shapes)
    70 internal error
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .arch import ArrayConfig, Mode, dump_arch_config, load_arch_config
from .dbb_format import DbbConfig, DbbTensor, block_tensor, deserialize_tensor, serialize_tensor
from .energy_model import (
    DEFAULT_COEFFICIENTS,
    compare,
    dump_coefficients,
    estimate,
    load_coefficients,
)
from .errors import (
    ConfigError,
    CorruptHeader,
    DbbError,
    DensityExceeded,
    NetworkSchemaError,
    ShapeMismatch,
    TruncatedStream,
    UnknownNetwork,
    UnsupportedLayer,
)
from .problem import GemmProblem
from .pruning import prune_blocks
from .rawtensor import load_dense
from .report import SimReport, rows_to_csv
from .systolic_sim import run_gemm, run_network
from .workloads import resolve_network, synth_microbench

EXIT_OK, EXIT_DATA, EXIT_IO, EXIT_CONFIG, EXIT_WORKLOAD, EXIT_INTERNAL = 0, 1, 2, 3, 4, 70


class UsageError(ConfigError):
    code = "Usage"


class OutputExists(DbbError):
    code = "OutputExists"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (CorruptHeader, TruncatedStream, OutputExists, OSError)):
        return EXIT_IO
    if isinstance(exc, (NetworkSchemaError, UnknownNetwork, UnsupportedLayer, ShapeMismatch)):
        return EXIT_WORKLOAD
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DbbError):
        return EXIT_CONFIG if exc.code in ("InvalidNnz", "StageCapExceeded") else EXIT_DATA
    return EXIT_INTERNAL


def error_code_for(exc: BaseException) -> str:
    if isinstance(exc, DbbError):
        return exc.code
    if isinstance(exc, OSError):
        return "IOError"
    return "Internal"


# -- output helpers -----------------------------------------------------------------


def _check_writable(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise OutputExists(f"{path} exists; pass --force to overwrite")


def _emit(text: str | bytes, out: str | None, force: bool) -> None:
    if out is None:
        if isinstance(text, bytes):
            sys.stdout.buffer.write(text)
        else:
            sys.stdout.write(text)
        return
    path = Path(out)
    _check_writable(path, force)
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text)


def _parse_range(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            step = 1 if hi >= lo else -1
            out.extend(range(lo, hi + step, step))
        elif part:
            out.append(int(part))
    if not out:
        raise UsageError(f"empty range {text!r}")
    return out


def _parse_gemm(text: str) -> tuple[int, int, int]:
    try:
        rows, cols, k = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--gemm expects ROWSxCOLSxK, got {text!r}") from None
    return rows, cols, k


def _coeffs(args):
    return load_coefficients(args.energy) if getattr(args, "energy", None) else DEFAULT_COEFFICIENTS


# -- compress / prune ---------------------------------------------------------------


def _write_dbb(t: DbbTensor, args, verb: str) -> None:
    data = serialize_tensor(t)
    _check_writable(Path(args.output), args.force)
    Path(args.output).write_bytes(data)
    dense = t.dense_bytes
    ratio = t.payload_bytes / dense if dense else 0.0
    stored_nz = int(np.count_nonzero(t.values))
    print(f"{verb} {args.input} -> {args.output}: {t.config} DBB, "
          f"{stored_nz}/{dense} nonzeros, storage ratio {ratio:.4f} "
          f"({t.payload_bytes} of {dense} dense bytes)")


def cmd_compress(args) -> int:
    x = load_dense(args.input)
    t = block_tensor(x, args.axis, DbbConfig(args.bz, args.nnz))
    _write_dbb(t, args, "compressed")
    return EXIT_OK


def cmd_prune(args) -> int:
    x = load_dense(args.input)
    t = prune_blocks(x, args.axis, DbbConfig(args.bz, args.nnz))
    _write_dbb(t, args, "pruned")
    return EXIT_OK


# -- simulate -------------------------------------------------------------------------


def _config(args) -> ArrayConfig:
    if args.arch:
        config = load_arch_config(args.arch)
        if args.mode and Mode.parse(args.mode) is not config.mode:
            raise UsageError(f"--mode {args.mode} conflicts with mode {config.mode} in {args.arch}")
        return config
    return ArrayConfig.reference(args.mode or "sa")


def _gemm_problem(args, a_nnz: int | None = None) -> GemmProblem:
    a_nnz = a_nnz if a_nnz is not None else (args.a_nnz or 8)
    if args.activation or args.weight:
        if not (args.activation and args.weight):
            raise UsageError("--activation and --weight must be given together")
        a = load_dense(args.activation)
        w = load_dense(args.weight)
        return GemmProblem(a, w, a_nnz=a_nnz, name="gemm", seed=None)
    rows, cols, k = _parse_gemm(args.gemm)
    w_nnz = DbbConfig.parse(args.w_dbb).nnz if args.w_dbb else 4
    return synth_microbench(rows, cols, k, w_nnz, a_nnz, seed=args.seed, name="gemm")


def _network(args):
    net = resolve_network(args.network)
    w_dbb = DbbConfig.parse(args.w_dbb) if args.w_dbb else None
    if w_dbb is not None and w_dbb.is_dense:
        w_dbb = DbbConfig(w_dbb.block_size, w_dbb.block_size)
    if w_dbb is not None or args.a_nnz is not None:
        net = net.with_densities(w_dbb, args.a_nnz)
    if args.kinds:
        net = net.select([k.strip() for k in args.kinds.split(",")])
    return net


def _simulate_one(args, config: ArrayConfig, a_nnz: int | None = None):
    """Returns (report, output matrix or None)."""
    if args.network:
        return run_network(_network_with(args, a_nnz), config, seed=args.seed), None
    problem = _gemm_problem(args, a_nnz)
    want_matrix = bool(getattr(args, "matrix_out", None))
    output, report = run_gemm(problem, config, compute_output=want_matrix)
    return report, output


def _network_with(args, a_nnz):
    net = _network(args)
    return net.with_densities(None, a_nnz) if a_nnz is not None else net


def _report_json(report: SimReport, coeffs) -> str:
    data = report.to_dict()
    data["energy"] = estimate(report, coeffs).to_dict()
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _report_csv(report: SimReport, coeffs) -> str:
    parts = report.layers or [report]
    rows = report.csv_rows()
    for row, part in zip(rows, parts):
        row["energy_pj"] = estimate(part, coeffs).total
    return rows_to_csv(rows)


def cmd_simulate(args) -> int:
    if bool(args.network) == bool(args.gemm or args.activation or args.weight):
        raise UsageError("give exactly one workload: --network, --gemm, or --activation/--weight")
    config = _config(args)
    coeffs = _coeffs(args)
    report, output = _simulate_one(args, config)
    if args.matrix_out:
        if output is None:
            raise UsageError("--matrix-out needs a GEMM workload")
        path = Path(args.matrix_out)
        _check_writable(path, args.force)
        with path.open("wb") as f:
            np.save(f, output, allow_pickle=False)
    text = _report_json(report, coeffs) if args.format == "json" else _report_csv(report, coeffs)
    _emit(text, args.out, args.force)
    return EXIT_OK


# -- sweep ------------------------------------------------------------------------------


def _sweep_configs(args) -> list[tuple[str, ArrayConfig]]:
    configs = []
    for text in args.modes.split(",") if args.modes else []:
        configs.append(ArrayConfig.reference(text.strip()))
    for path in args.arch or []:
        configs.append(load_arch_config(path))
    if not configs:
        raise UsageError("sweep needs --modes and/or --arch")
    out, seen = [], set()
    for config in configs:
        label = config.mode.value
        if label in seen:
            label = f"{label}@{config.notation}"
        if label in seen:
            raise UsageError(f"duplicate sweep configuration {label}")
        seen.add(label)
        if not args.strict_dap:
            config = config.replace(dap_strict=False)
        out.append((label, config))
    return out


def cmd_sweep(args) -> int:
    if bool(args.network) == bool(args.gemm):
        raise UsageError("give exactly one workload: --network or --gemm")
    args.activation = args.weight = args.matrix_out = None
    points = _parse_range(args.a_nnz)
    configs = _sweep_configs(args)
    baseline = Mode.parse(args.baseline)
    base_config = next((c for _, c in configs if c.mode is baseline), None)
    if base_config is None:
        base_config = ArrayConfig.reference(baseline)
        if not args.strict_dap:
            base_config = base_config.replace(dap_strict=False)
    coeffs = _coeffs(args)
    jobs = [(label, config, a) for a in points for label, config in configs]
    jobs += [("__baseline__", base_config, a) for a in points]

    def run(job):
        label, config, a = job
        return _simulate_one(args, config, a)[0]

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(run, jobs))
    by_job = {(j[0], j[2]): r for j, r in zip(jobs, results)}
    rows = []
    for a in points:
        base = by_job[("__baseline__", a)]
        base_e = estimate(base, coeffs).total
        for label, config in configs:
            r = by_job[(label, a)]
            e = estimate(r, coeffs).total
            rows.append({"mode": label, "arch": config.notation, "a_nnz": a,
                         "cycles": r.cycles, "baseline": baseline.value,
                         "speedup": base.cycles / r.cycles,
                         "energy_pj": e, "energy_ratio": e / base_e if base_e else float("nan"),
                         "effective_tops": r.effective_tops, "utilization": r.utilization})
    if args.format == "json":
        text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    else:
        text = rows_to_csv(rows)
    _emit(text, args.out, args.force)
    if args.plot:
        from .plotting import plot_sweep

        path = Path(args.plot)
        _check_writable(path, args.force)
        plot_sweep(rows, path)
    return EXIT_OK


# -- report ------------------------------------------------------------------------------


def _load_report(path: Path) -> SimReport:
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptHeader(f"{path}: not a JSON report ({e.msg} at line {e.lineno})") from None
    if not isinstance(data, dict) or "cycles" not in data:
        raise CorruptHeader(f"{path}: not a simulation report")
    return SimReport.from_dict(data)


def _load_sweep(path: Path) -> list[dict]:
    import csv

    with path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    need = {"mode", "a_nnz", "speedup", "energy_ratio"}
    if not rows or not need <= set(rows[0]):
        raise CorruptHeader(f"{path}: not a sweep CSV (needs columns {sorted(need)})")
    return [dict(r, a_nnz=int(r["a_nnz"]), speedup=float(r["speedup"]),
                 energy_ratio=float(r["energy_ratio"])) for r in rows]


def cmd_report(args) -> int:
    from .plotting import plot_breakdown, plot_layers, plot_sweep

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    coeffs = _coeffs(args)
    inputs = [Path(p) for p in args.inputs]
    written = []

    def target(name: str) -> Path:
        path = out_dir / name
        _check_writable(path, args.force)
        written.append(path)
        return path

    sweeps = [p for p in inputs if p.suffix.lower() == ".csv"]
    sim_paths = [p for p in inputs if p.suffix.lower() != ".csv"]
    for p in sweeps:
        plot_sweep(_load_sweep(p), target(f"{p.stem}_sweep.png"))

    if sim_paths:
        labels = args.labels.split(",") if args.labels else [p.stem for p in sim_paths]
        if len(labels) != len(sim_paths):
            raise UsageError(f"{len(labels)} labels for {len(sim_paths)} reports")
        reports = [(label, _load_report(p)) for label, p in zip(labels, sim_paths)]
        summary = []
        for label, r in reports:
            e = estimate(r, coeffs)
            summary.append({"label": label, "name": r.name, "mode": r.mode, "arch": r.arch,
                            "cycles": r.cycles, "effective_tops": r.effective_tops,
                            "utilization": r.utilization, "sram_bytes": r.sram_bytes,
                            **{f"energy_{k}": v for k, v in e.to_dict().items()}})
            target(f"{label}_layers.csv").write_text(_report_csv(r, coeffs))
            plot_layers(r, target(f"{label}_layers.png"))
        target("summary.csv").write_text(rows_to_csv(summary))
        target("summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if len(reports) >= 2:
            rows = compare(reports, args.baseline, coeffs)
            target("compare.csv").write_text(rows_to_csv(rows))
            target("compare.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
            plot_breakdown(rows, target("energy_breakdown.png"))
    for path in written:
        print(path)
    return EXIT_OK


def cmd_defaults(args) -> int:
    if args.what == "energy":
        text = dump_coefficients()
    else:
        text = dump_arch_config(ArrayConfig.reference(args.mode or "sa"))
    _emit(text, args.out, args.force)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dbbsim", description="DBB sparse systolic array toolkit")
    p.add_argument("--version", action="version", version=f"dbbsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common_out(sp, fmt=True):
        sp.add_argument("--out", help="output file (default stdout)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if fmt:
            sp.add_argument("--format", choices=("json", "csv"), default="json")

    for name, fn, helptext in (("compress", cmd_compress, "losslessly compress to DBB"),
                               ("prune", cmd_prune, "magnitude-prune to DBB")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("input", help="RAWI or DBBT tensor file")
        sp.add_argument("output", help="DBBT output file")
        sp.add_argument("--bz", type=int, default=8)
        sp.add_argument("--nnz", type=int, default=4)
        sp.add_argument("--axis", type=int, default=-1, help="blocking axis (default last)")
        sp.add_argument("--force", action="store_true")
        sp.set_defaults(func=fn)

    def workload(sp):
        sp.add_argument("--network", help="built-in name or network JSON file")
        sp.add_argument("--gemm", help="synthetic GEMM ROWSxCOLSxK")
        sp.add_argument("--kinds", help="comma list of layer kinds to keep (conv,pointwise,...)")
        sp.add_argument("--w-dbb", help="weight density NNZ/BZ or dense (all layers)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--energy", help="energy coefficient file")

    sp = sub.add_parser("simulate", help="simulate a network or GEMM on one array")
    workload(sp)
    sp.add_argument("--activation", help="activation matrix file (rows x k)")
    sp.add_argument("--weight", help="weight matrix file (k x cols), RAWI or DBBT")
    sp.add_argument("--arch", help="architecture config file")
    sp.add_argument("--mode", help="reference array: sa, sa-zvcg, s2ta-w, s2ta-aw")
    sp.add_argument("--a-nnz", type=int, help="activation nnz per 8-block (all layers)")
    sp.add_argument("--matrix-out", help="write the GEMM output matrix (.npy)")
    common_out(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="sweep activation density across arrays")
    workload(sp)
    sp.add_argument("--modes", default="sa,sa-zvcg,s2ta-w,s2ta-aw")
    sp.add_argument("--arch", action="append", help="extra architecture file (repeatable)")
    sp.add_argument("--a-nnz", default="8-1", help="densities, e.g. 8-1 or 1,2,4,8")
    sp.add_argument("--baseline", default="sa", help="mode that speedup and energy are relative to")
    sp.add_argument("--strict-dap", action="store_true",
                    help="enforce the DAP stage cap (a_nnz 6 and 7 then fail on s2ta-aw)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--plot", help="also write a PNG of the curves")
    common_out(sp, fmt=False)
    sp.add_argument("--format", choices=("json", "csv"), default="csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="render figures and tables from reports")
    sp.add_argument("inputs", nargs="+", help="simulate JSON reports and/or sweep CSVs")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--labels", help="comma list of labels for the JSON reports")
    sp.add_argument("--baseline", help="label to normalize against (default first)")
    sp.add_argument("--energy", help="energy coefficient file")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("defaults", help="print the default energy table or an array config")
    sp.add_argument("what", choices=("energy", "arch"))
    sp.add_argument("--mode", help="reference array for 'arch'")
    common_out(sp, fmt=False)
    sp.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as e:          # --help / --version
        return int(e.code or 0)
    except Exception as e:           # noqa: BLE001
        code = exit_code_for(e)
        print(f"dbbsim: error={error_code_for(e)}: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
