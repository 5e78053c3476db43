"""Command-line driver: ``weakfp {simulate,fit,eval,bench,study}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import experiment as ex
from .assembly import AssemblyError
from .data import DataError, load_aggregate_csv, save_aggregate_csv
from .metrics import convergence_study
from .plotting import bench_figure, drift_figure, png_beside, study_figure, write_csv
from .regression import RegressionError
from .simulate import SimulationError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("weakfp")


class StageError(Exception):
    def __init__(self, stage: str, code: int, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.code = code


def _code_for(exc: BaseException) -> int | None:
    if isinstance(exc, ex.ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, (RegressionError, SimulationError, AssemblyError, np.linalg.LinAlgError,
                        FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (KeyError, TypeError, ValueError)):
        return EXIT_CONFIG
    return None


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        code = _code_for(exc)
        if code is None:
            raise
        raise StageError(name, code, exc) from exc


def _config(args) -> dict:
    with stage("config"):
        cfg = ex.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfg.setdefault("seed", 0)
        return cfg


def _output(args, cfg: dict, key: str, default: str) -> Path:
    return Path(args.out or cfg.get("outputs", {}).get(key) or default)


def cmd_simulate(args) -> None:
    cfg = _config(args)
    with stage("simulate"):
        data = ex.simulate(cfg)
    out = _output(args, cfg, "data", "data.csv")
    save_aggregate_csv(data, out)
    log.info("wrote %s (%d snapshots)", out, len(data))


def cmd_fit(args) -> None:
    cfg = _config(args)
    if args.data:
        with stage("load"):
            data = load_aggregate_csv(args.data)
    else:
        with stage("simulate"):
            data = ex.simulate(cfg)
    with stage("fit"):
        res = ex.fit(data, cfg)
    evaluation = None
    if "model" in cfg:
        with stage("evaluate"):
            evaluation = ex.evaluate(res.learned, cfg["model"], cfg.get("evaluation", {}).get("l2_interval"))
    report = ex.build_report(cfg, cfg["seed"], data, res, evaluation)
    out = _output(args, cfg, "report", "report.json")
    ex.write_json(report, out)
    log.info("wrote %s", out)
    plot = args.plot or cfg.get("outputs", {}).get("plot_data")
    if plot:
        plot = Path(plot) if Path(plot).is_absolute() or args.plot else out.parent / plot
        header, rows = ex.drift_plot_rows(res.learned, res.bounds, cfg.get("model"))
        write_csv(plot, header, rows)
        drift_figure(header, rows, png_beside(plot))
        log.info("wrote %s and %s", plot, png_beside(plot))
    if args.dump_system:
        prefix = Path(args.dump_system)
        res.system.save_csv(f"{prefix}_matrix.csv", f"{prefix}_rhs.csv")
    nz = report["coefficients"]["nonzero"]
    print(json.dumps({"nonzero": nz, "sigma": report["sigma"]["value"],
                      "mre": None if evaluation is None or evaluation.errors is None else evaluation.errors.mre}))


def cmd_eval(args) -> None:
    if not args.report:
        raise StageError("eval", EXIT_CONFIG, ValueError("--report is required"))
    with stage("load"):
        try:
            report = json.loads(Path(args.report).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.report}: {exc}") from exc
    cfg = ex.load_config(args.config) if args.config else None
    with stage("evaluate"):
        ev = ex.evaluate_report(report, cfg)
    text = json.dumps(ev.to_json(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_bench(args) -> None:
    cfg = _config(args) if args.config else {"seed": args.seed or 0}
    with stage("bench"):
        rows = ex.run_bench(cfg, cfg["seed"])
    out = Path(args.out or "bench.csv")
    header = ["factor", "L", "N", "M", "d", "assembly_s", "regression_s", "total_s", "stridge_pct"]
    write_csv(out, header, [[r[h] for h in header] for r in rows])
    bench_figure(rows, png_beside(out))
    for r in rows:
        print(", ".join(f"{h}={r[h]:.4g}" if isinstance(r[h], float) else f"{h}={r[h]}" for h in header))


def _parse_sweep(text: str) -> dict:
    try:
        key, values = text.split("=", 1)
        return {key: [json.loads(v) for v in values.split(",")]}
    except (ValueError, json.JSONDecodeError) as exc:
        raise ex.ConfigError(f"bad --sweep {text!r}; expected key=v1,v2,...") from exc


def cmd_study(args) -> None:
    cfg = _config(args)
    with stage("config"):
        spec = cfg.get("study", {})
        sweep = _parse_sweep(args.sweep) if args.sweep else spec.get("sweep")
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else spec.get("seeds", [0, 1, 2])
        if not sweep or len(next(iter(sweep.values()))) < 2:
            raise ex.ConfigError("a study needs a sweep with at least two values")
    result = convergence_study(cfg, sweep, seeds)
    out = Path(args.out or "study.csv")
    write_csv(out, ["parameter", "value", "mean_mre", "n_ok", "n_failed"],
              [[r["parameter"], r["value"], r["mean_mre"], len(r["mres"]), len(r["failures"])]
               for r in result["rows"]])
    study_figure(result["rows"], png_beside(out))
    print(json.dumps({"slope": result["slope"], "rows": result["rows"]}, default=float))


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "eval": cmd_eval, "bench": cmd_bench, "study": cmd_study}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakfp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="preset name or JSON config path")
        s.add_argument("--data", help="aggregate data CSV")
        s.add_argument("--out", help="output path")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--threads", type=int, default=os.cpu_count(), help="BLAS threads")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            s.add_argument("--plot", help="drift comparison CSV (a PNG is written beside it)")
            s.add_argument("--dump-system", help="write PREFIX_matrix.csv and PREFIX_rhs.csv")
        if name == "eval":
            s.add_argument("--report", help="fit report JSON")
        if name == "study":
            s.add_argument("--sweep", help="dotted.key=v1,v2,...")
            s.add_argument("--seeds", help="comma-separated seeds")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command in ("simulate", "fit", "study") and not args.config:
        print("error [config]: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=max(1, args.threads or 1)):
            COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return exc.code
    except ex.ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error [data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
