"""Command-line entry point.

Every command computes its whole result before touching the output directory,
then writes its reports plus ``manifest.json``. ``replay`` re-runs a manifest.
Exit codes: 0 success, 1 validation error, 2 runtime or convergence error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Callable

from . import __version__
from .agreement import UndefinedKappaError, fleiss_kappa, read_ratings
from .arenasim import format_attacker_stats, load_config, run_arena
from .attribution import AttributionParams, evaluate_detector, attribute, best_params, read_traces, sweep_detector
from .btrank import FitOptions, bootstrap_ranks, fit_bt, leaderboard
from .corruption import CorruptionSpec, Mode, displacement_experiment
from .errors import ConvergenceError, ValidationError
from .prefdata import FORMATS, GroundTruthModelSpec, PreferenceDataset, generate_synthetic, load_dataset, record_to_json
from . import reports

logger = logging.getLogger("arenarank")

MANIFEST = "manifest.json"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D401 - argparse hook
        raise _UsageError(f"{self.prog}: {message}")


def _rates(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"rates must be comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0; simulate: config seed)")
    common.add_argument("--out", default="report", help="output directory")

    fit = _Parser(add_help=False)
    fit.add_argument("--regularization", type=float, default=FitOptions.regularization)
    fit.add_argument("--tolerance", type=float, default=FitOptions.tolerance)
    fit.add_argument("--max-iterations", type=int, default=FitOptions.max_iterations)

    data = _Parser(add_help=False)
    data.add_argument("--input", required=True, help="battle file")
    data.add_argument("--format", choices=FORMATS, default="canonical_jsonl")

    parser = _Parser(prog="arenarank", description="Leaderboard robustness toolkit")
    parser.add_argument("--version", action="version", version=f"arenarank {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rank", parents=[common, data, fit], help="fit a Bradley-Terry leaderboard")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for rank intervals")

    p = sub.add_parser("corrupt", parents=[common, data, fit], help="rank displacement under vote corruption")
    p.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    p.add_argument("--rate", required=True, type=_rates, help="percent; comma-separated for several columns")
    p.add_argument("--target")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tpr", type=float, default=1.0)
    p.add_argument("--tnr", type=float, default=1.0)
    p.add_argument("--competitors", type=_names, default=[], help="comma-separated models to vote against")
    p.add_argument("--models", type=_names, default=None, help="table rows (default: target, else all)")

    p = sub.add_parser("attribute", parents=[common], help="attribution decisions and detector quality")
    p.add_argument("--traces", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--target", help="model whose traces count as positives")
    p.add_argument("--sweep", action="store_true", help="grid-search (p, t); needs --target")

    p = sub.add_parser("simulate", parents=[common, fit], help="run the mock arena")
    p.add_argument("--config", required=True)
    p.add_argument("--battles", type=int, required=True)

    p = sub.add_parser("kappa", parents=[common], help="Fleiss' kappa per dimension")
    p.add_argument("--ratings", required=True)
    p.add_argument("--scale100", action="store_true", help="report kappa x 100")

    p = sub.add_parser("gen", parents=[common], help="synthetic battles from ground-truth scores")
    p.add_argument("--models", required=True, help="JSON model spec")
    p.add_argument("--n", type=int, required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def _fit_opts(args) -> FitOptions:
    return FitOptions(args.regularization, args.tolerance, args.max_iterations)


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


# -- commands: each returns ({filename: text}, [input paths]) ------------------

def cmd_rank(args):
    ds = load_dataset(args.input, args.format)
    opts = _fit_opts(args)
    if args.bootstrap < 0:
        raise ValidationError("--bootstrap must be >= 0")
    if args.bootstrap:
        lb = bootstrap_ranks(ds, args.bootstrap, _seed(args), opts)
    else:
        lb = leaderboard(fit_bt(ds, opts))
    headers, rows = reports.leaderboard_rows(lb)
    files = {"leaderboard.txt": reports.leaderboard_text(lb), "leaderboard.csv": reports.csv_text(headers, rows)}
    return files, [args.input]


def cmd_corrupt(args):
    ds = load_dataset(args.input, args.format)
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    if not args.rate:
        raise ValidationError("--rate needs at least one value")
    specs = [
        CorruptionSpec(args.mode, r, args.target, (args.tpr, args.tnr), _seed(args), tuple(args.competitors))
        for r in args.rate
    ]
    for spec in specs:
        spec.validate_for(ds)
    rows = args.models or ([args.target] if args.target else list(ds.roster))
    unknown = [m for m in rows if m not in ds.index]
    if unknown:
        raise ValidationError(f"--models lists models outside the roster: {unknown}")
    opts = _fit_opts(args)
    base = leaderboard(fit_bt(ds, opts))
    summaries = [displacement_experiment(ds, spec, args.trials, opts, base) for spec in specs]
    files = {
        "displacement.txt": reports.displacement_text(summaries, rows),
        "displacement_summary.csv": reports.displacement_stats_csv(summaries),
        "displacement_trials.csv": reports.displacement_trials_csv(summaries),
    }
    return files, [args.input]


def cmd_attribute(args):
    params = AttributionParams(args.p, args.t)
    traces = read_traces(args.traces)
    if not traces:
        raise ValidationError(f"no traces in {args.traces}")
    if args.sweep and not args.target:
        raise ValidationError("--sweep needs --target")
    rows = []
    for i, tr in enumerate(traces):
        res = attribute(tr, params)
        rows.append([i, tr.true_source or "", tr.n, f"{res.confidence:.6f}", res.decision])
    files = {"decisions.csv": reports.csv_text(["trace", "true_source", "n", "confidence", "decision"], rows)}
    if args.target:
        quality = evaluate_detector(traces, args.target, params)
        text = reports.detector_text([(args.target, quality)])
        if args.sweep:
            sweep = sweep_detector(traces, args.target)
            best, best_q = best_params(sweep)
            files["sweep.csv"] = reports.sweep_csv(sweep)
            text += f"\nbest grid point: p={best.p:g} t={best.t:g}\n"
            text += reports.detector_text([(args.target, best_q)])
        files["detector.txt"] = text
    return files, [args.traces]


def cmd_simulate(args):
    config = load_config(args.config)
    outcome = run_arena(config, args.battles, _seed(args, config.seed))
    lb = leaderboard(fit_bt(_observed(outcome.battles), _fit_opts(args)))
    battles = "".join(json.dumps(record_to_json(r), ensure_ascii=False) + "\n" for r in outcome.battles.records)
    files = {
        "battles.jsonl": battles,
        "attacker_stats.txt": format_attacker_stats(outcome.attacker_stats),
        "leaderboard.txt": reports.leaderboard_text(lb),
    }
    return files, [args.config]


def _observed(ds: PreferenceDataset) -> PreferenceDataset:
    """Drop roster models that never appear (possible in tiny runs)."""
    return PreferenceDataset.from_records(ds.records)


def cmd_kappa(args):
    groups = read_ratings(args.ratings)
    dims: list[str] = []
    table: dict[str, dict[str, float | None]] = {}
    rows = []
    for g, per_dim in groups.items():
        table[g] = {}
        for dim, matrix in per_dim.items():
            if dim not in dims:
                dims.append(dim)
            try:
                k = fleiss_kappa(matrix)
            except UndefinedKappaError:
                k = None
            table[g][dim] = k
            rows.append([g, dim, len(matrix.counts), matrix.annotators_per_item, "" if k is None else repr(k)])
    files = {
        "kappa.txt": reports.kappa_text(table, dims, args.scale100),
        "kappa.csv": reports.csv_text(["group", "dimension", "items", "annotators", "kappa"], rows),
    }
    return files, [args.ratings]


def cmd_gen(args):
    spec = GroundTruthModelSpec.load(args.models)
    ds = generate_synthetic(spec, args.n, _seed(args))
    battles = "".join(json.dumps(record_to_json(r), ensure_ascii=False) + "\n" for r in ds.records)
    return {"battles.jsonl": battles}, [args.models]


COMMANDS: dict[str, Callable] = {
    "rank": cmd_rank,
    "corrupt": cmd_corrupt,
    "attribute": cmd_attribute,
    "simulate": cmd_simulate,
    "kappa": cmd_kappa,
    "gen": cmd_gen,
}


# -- manifests ----------------------------------------------------------------

def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _strip_out(argv: list[str]) -> list[str]:
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        out.append(tok)
    return out


def _manifest(args, argv: list[str], inputs: list[str]) -> str:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "command")}
    manifest = {
        "command": args.command,
        "argv": _strip_out(argv),
        "params": params,
        "seed": args.seed,
        "version": f"arenarank {__version__}",
        "inputs": {p: _digest(p) for p in inputs},
    }
    return json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"


def _write(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8", newline="\n")


def _replay(args) -> int:
    path = Path(args.manifest)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        argv = list(manifest["argv"])
        inputs = dict(manifest["inputs"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from exc
    for p, digest in inputs.items():
        if not Path(p).is_file():
            raise ValidationError(f"manifest input missing: {p}")
        if _digest(p) != digest:
            raise ValidationError(f"manifest input changed since the recorded run: {p}")
    return main(argv + ["--out", args.out])


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command == "replay":
            return _replay(args)
        files, inputs = COMMANDS[args.command](args)
        files[MANIFEST] = _manifest(args, argv, inputs)
        _write(Path(args.out), files)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
