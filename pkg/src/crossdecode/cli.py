"""Command-line interface.

Exit codes: 0 on success, 1 on a configuration error, 2 when partitioning
or matching is infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .alt_tests import STRATIFICATIONS, TESTS as ALT_TESTS, run_alt_test
from .data import load_session, save_session
from .decoders import CVConfig, KINDS
from .direction import LabelerConfig, label_directions, to_names
from .divergence import ABLATIONS, VIF_MODES, RunResult, TestConfig, run_context_test
from .errors import ConfigError, InfeasibleError, SessionFormatError
from .simulator import SimSpec, generate, ground_truth
from .sweeps import SweepSettings, default_tests, sweep_power, sweep_type1
from .vif import estimate_vif

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Everything the ``test`` subcommand needs.  Exactly one of ``data`` and
    ``simulate`` must be set."""

    data: str | None = None
    simulate: dict | None = None
    decoders: tuple[str, ...] = ("poisson",)
    lag: int = 9
    vif_mode: str = "fixed"
    vif: float = 12.0
    k_min: int = 1
    matching: bool = True
    stratification: bool = True
    ablations: tuple[str, ...] = ()
    seeds: int = 400
    master_seed: int = 0
    p_alpha: float = 0.5
    folds: int = 5
    alt_tests: tuple[str, ...] = ()
    alt_stratify: str = "location-direction"
    min_success_fraction: float = 0.9
    jobs: int = 1
    out: str | None = None

    def __post_init__(self):
        if (self.data is None) == (self.simulate is None):
            raise ConfigError("exactly one of 'data' and 'simulate' must be given")
        if self.seeds < 1:
            raise ConfigError("seeds must be at least 1")
        for d in self.decoders:
            if d not in KINDS:
                raise ConfigError(f"unknown decoder {d!r}; choose from {', '.join(KINDS)}")
        if self.vif_mode not in VIF_MODES:
            raise ConfigError(f"unknown vif mode {self.vif_mode!r}")
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ConfigError(f"unknown ablation {a!r}")
        for t in self.alt_tests:
            if t not in ALT_TESTS:
                raise ConfigError(f"unknown alternative test {t!r}")
        if self.alt_stratify not in STRATIFICATIONS:
            raise ConfigError(f"unknown stratification {self.alt_stratify!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        for key in ("decoders", "ablations", "alt_tests"):
            if key in d:
                if isinstance(d[key], str):
                    d[key] = [d[key]]
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from err

    def test_config(self) -> TestConfig:
        try:
            return TestConfig(
                lag=self.lag, decoders=self.decoders, vif_mode=self.vif_mode, vif=self.vif, k_min=self.k_min,
                n_repetitions=self.seeds, master_seed=self.master_seed, p_alpha=self.p_alpha,
                cv=CVConfig(folds=self.folds), matching=self.matching, stratify=self.stratification,
                ablations=self.ablations, min_success_fraction=self.min_success_fraction, jobs=self.jobs,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        for key in ("decoders", "ablations", "alt_tests"):
            d[key] = list(d[key])
        return d


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

class _StagedOutput:
    """Write into a temporary directory and move files into place on success."""

    def __init__(self, out: Path):
        self.out = Path(out)

    def __enter__(self) -> Path:
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=self.out.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for p in sorted(self.tmp.iterdir()):
                    os.replace(p, self.out / p.name)
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _write_csv(path: Path, header: list[str], rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _dump_json(obj, path: Path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def build_report(cfg: RunConfig, result: RunResult, alt: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "software_version": __version__,
        "config": cfg.to_dict(),
        "divergence": {k: v.to_dict() for k, v in sorted(result.reports.items())},
        "alt_tests": {k: v.to_dict() for k, v in sorted(alt.items())},
        "failures": [{"repetition": k, "seed": s, "reason": m} for k, s, m in result.failures],
        "hyperparameters": [dict(sorted(h.items())) for h in result.hyperparameters],
    }


def load_report(path: str | Path) -> dict:
    """Read a report, rejecting unknown schema versions."""
    d = json.loads(Path(path).read_text())
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {version!r}")
    return d


def write_run_outputs(out_dir: Path, cfg: RunConfig, result: RunResult, alt: dict) -> None:
    _dump_json(build_report(cfg, result, alt), out_dir / "report.json")
    _write_csv(out_dir / "accuracies.csv",
               ["repetition", "seed", "decoder", "stratum", "train_context", "test_context", "accuracy", "se",
                "n_test", "k_hat"],
               ([a.repetition, a.seed, a.decoder, a.stratum, a.train_context, a.test_context, repr(a.accuracy),
                 repr(a.se), a.n_test, a.k_hat] for a in result.accuracies))
    rows = []
    for (c, st), curves in sorted(result.tuning.items()):
        for i in range(curves.shape[0]):
            for j in range(curves.shape[1]):
                rows.append([c, st, i, j, repr(float(curves[i, j]))])
    _write_csv(out_dir / "tuning_curves.csv", ["context", "stratum", "neuron", "location", "rate"], rows)
    rows = []
    for (kind, st, c), gamma in sorted(result.autocov.items()):
        rows += [[kind, st, c, i, repr(float(g))] for i, g in enumerate(gamma)]
    _write_csv(out_dir / "autocov.csv", ["decoder", "stratum", "context", "lag", "gamma"], rows)


def run(cfg: RunConfig) -> Path:
    """Execute the ``test`` pipeline and write all outputs to ``cfg.out``."""
    if cfg.out is None:
        raise ConfigError("an output directory is required")
    if cfg.data is not None:
        if not Path(cfg.data).exists():
            raise ConfigError(f"data file {cfg.data} does not exist")
        ds = load_session(cfg.data)
    else:
        try:
            ds = generate(SimSpec.from_dict(cfg.simulate))
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid simulation spec: {err}") from err
    tcfg = cfg.test_config()
    out = Path(cfg.out)
    with _StagedOutput(out) as tmp:
        result = run_context_test(ds, tcfg)
        alt = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for t in cfg.alt_tests:
                alt[t] = run_alt_test(ds, t, cfg.alt_stratify)
        write_run_outputs(tmp, cfg, result, alt)
    return out


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in _csv_list(text)]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _csv_list(text)]


def _add_labeler_flags(p):
    d = LabelerConfig()
    p.add_argument("--sg-window", type=int, default=d.sg_window)
    p.add_argument("--sg-order", type=int, default=d.sg_order)
    p.add_argument("--velocity-threshold", type=float, default=d.velocity_threshold)
    p.add_argument("--peak-prominence", type=float, default=d.peak_prominence)
    p.add_argument("--mixing-ratio-cutoff", type=float, default=d.mixing_ratio_cutoff)


def _add_sweep_flags(p):
    p.add_argument("--scales", type=_float_list, default=None)
    p.add_argument("--seeds", type=int, default=50, help="simulated datasets per grid point")
    p.add_argument("--repetitions", type=int, default=1, help="partition/match repetitions per dataset")
    p.add_argument("--tests", type=_csv_list, default=None, help="comma-separated test names")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output CSV of rejection rates")
    p.add_argument("--pvalues-out", default=None, help="optional CSV of every raw p-value")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossdecode", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic session")
    p.add_argument("--spec", help="SimSpec JSON file")
    p.add_argument("--seed", type=int, default=None, help="override the SimSpec seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("label-direction", help="label F/B/none from a trajectory CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_labeler_flags(p)

    p = sub.add_parser("test", help="run the cross-context decoding test")
    p.add_argument("--config", help="RunConfig JSON; flags below override it")
    p.add_argument("--data", help="session CSV")
    p.add_argument("--spec", help="SimSpec JSON to simulate instead of reading data")
    p.add_argument("--decoders", type=_csv_list)
    p.add_argument("--lag", type=int)
    p.add_argument("--vif-mode", choices=VIF_MODES)
    p.add_argument("--vif", type=float)
    p.add_argument("--k-min", type=int)
    p.add_argument("--no-matching", action="store_true", help="also report p without covariate matching")
    p.add_argument("--no-stratification", action="store_true", help="also report p without stratification")
    p.add_argument("--no-vif", action="store_true", help="accepted for symmetry; p without VIF is always reported")
    p.add_argument("--seeds", type=int, help="number of repetitions")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--p-alpha", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--alt-tests", type=_csv_list)
    p.add_argument("--stratify", choices=STRATIFICATIONS)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("alt-test", help="run one alternative two-sample test")
    p.add_argument("--data", required=True)
    p.add_argument("--test", required=True, choices=ALT_TESTS)
    p.add_argument("--stratify", default="location-direction", choices=STRATIFICATIONS)
    p.add_argument("--permutations", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSON")

    p = sub.add_parser("vif", help="estimate the variance inflation factor of an error vector")
    p.add_argument("--in", dest="inp", required=True, help="CSV with an 'error' column (or one column)")
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--max-lag", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV of the autocovariance curve")

    p = sub.add_parser("sweep-type1", help="type I error over a null grid")
    p.add_argument("--n-both", type=_int_list, default=[2, 10, 50])
    _add_sweep_flags(p)

    p = sub.add_parser("sweep-power", help="rejection rate as context-dependent neurons increase")
    p.add_argument("--n-signal", type=_int_list, default=[20, 30, 50])
    p.add_argument("--n-context", type=_int_list, default=None)
    p.add_argument("--n-total", type=int, default=50)
    _add_sweep_flags(p)
    return parser


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file {path} does not exist") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from None


def _cmd_simulate(args) -> None:
    spec = SimSpec.from_dict(_read_json(args.spec)) if args.spec else SimSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    with _StagedOutput(Path(args.out)) as tmp:
        ds = generate(spec)
        save_session(ds, tmp / "session.csv")
        _dump_json(ground_truth(spec), tmp / "manifest.json")


def _read_columns(path) -> dict:
    try:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            cols = reader.fieldnames or []
    except FileNotFoundError:
        raise ConfigError(f"file {path} does not exist") from None
    return {c: [r[c] for r in rows] for c in cols}


def _cmd_label(args) -> None:
    cols = _read_columns(args.inp)
    if "location" not in cols:
        raise SessionFormatError("trajectory CSV needs a 'location' column", row=1)
    try:
        loc = np.array([float(v) for v in cols["location"]])
    except ValueError as err:
        raise SessionFormatError(f"non-numeric location: {err}") from None
    t = cols.get("t", [str(i) for i in range(loc.size)])
    cfg = LabelerConfig(args.sg_window, args.sg_order, args.velocity_threshold, args.peak_prominence,
                        args.mixing_ratio_cutoff)
    names = to_names(label_directions(loc, cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["t", "location", "direction"], zip(t, cols["location"], names))


def _cmd_test(args) -> None:
    d = _read_json(args.config) if args.config else {}
    overrides = {
        "data": args.data, "decoders": args.decoders, "lag": args.lag, "vif_mode": args.vif_mode,
        "vif": args.vif, "k_min": args.k_min, "seeds": args.seeds, "master_seed": args.master_seed,
        "p_alpha": args.p_alpha, "folds": args.folds, "alt_tests": args.alt_tests, "alt_stratify": args.stratify,
        "jobs": args.jobs, "out": args.out,
    }
    if args.spec:
        overrides["simulate"] = _read_json(args.spec)
    d.update({k: v for k, v in overrides.items() if v is not None})
    abl = list(d.get("ablations", []))
    if args.no_matching and "no_matching" not in abl:
        abl.append("no_matching")
    if args.no_stratification and "no_stratification" not in abl:
        abl.append("no_stratification")
    d["ablations"] = abl
    cfg = RunConfig.from_dict(d)
    run(cfg)


def _cmd_alt(args) -> None:
    ds = load_session(args.data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_alt_test(ds, args.test, args.stratify, args.permutations, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json({"schema_version": SCHEMA_VERSION, **res.to_dict()}, out)


def _cmd_vif(args) -> None:
    cols = _read_columns(args.inp)
    if not cols:
        raise SessionFormatError("error CSV is empty", row=1)
    name = "error" if "error" in cols else next(iter(cols))
    try:
        e = np.array([int(v) for v in cols[name]])
    except ValueError as err:
        raise SessionFormatError(f"non-integer error value: {err}", column=name) from None
    try:
        est = estimate_vif(e, args.k_min)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    gamma = est.autocovariance if args.max_lag is None else est.autocovariance[: args.max_lag + 1]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["lag", "gamma"], ([i, repr(float(g))] for i, g in enumerate(gamma)))
    print(json.dumps({"k_hat": est.k_hat, "saturated": est.saturated, "degenerate": est.degenerate}))


def _sweep_settings(args) -> SweepSettings:
    tests = tuple(args.tests) if args.tests else default_tests()
    for t in tests:
        if t not in ALT_TESTS and not (t.startswith("xacc_") and t.split("_")[1] in KINDS
                                       and t.split("_")[-1] in ("fixed", "est")):
            raise ConfigError(f"unknown test {t!r}")
    return SweepSettings(n_seeds=args.seeds, tests=tests, alpha=args.alpha, master_seed=args.master_seed,
                         n_repetitions=args.repetitions, jobs=args.jobs)


def _write_sweep(result, args) -> None:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = list(result.rows[0].keys())
    _write_csv(out, header, ([r[h] for h in header] for r in result.rows))
    if args.pvalues_out:
        header = list(result.pvalues[0].keys())
        _write_csv(Path(args.pvalues_out), header, ([r[h] for h in header] for r in result.pvalues))


def _cmd_sweep_type1(args) -> None:
    res = sweep_type1(args.n_both, args.scales or [0.05, 0.2, 0.5, 2.0], _sweep_settings(args))
    _write_sweep(res, args)


def _cmd_sweep_power(args) -> None:
    res = sweep_power(args.n_signal, args.scales or [0.05, 0.2, 0.5, 2.0], args.n_context, args.n_total,
                      _sweep_settings(args))
    _write_sweep(res, args)


COMMANDS = {
    "simulate": _cmd_simulate, "label-direction": _cmd_label, "test": _cmd_test, "alt-test": _cmd_alt,
    "vif": _cmd_vif, "sweep-type1": _cmd_sweep_type1, "sweep-power": _cmd_sweep_power,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = make_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except InfeasibleError as err:
        print(f"crossdecode: infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as err:  # ConfigError and SessionFormatError included
        print(f"crossdecode: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
