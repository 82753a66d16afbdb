"""Command-line entry point.

Every command prints one JSON object on stdout that echoes the fully
resolved configuration next to the result. Exit codes: 0 on success, 1 on
usage or input errors, 2 when an audit fails.

Configuration comes from (highest precedence first) command-line flags, a
``--config`` file of flat ``key = value`` lines, and built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from ahdp import audit, experiments, mechanisms, power
from ahdp.dataset import CorrelationDomain, Dataset, read_dataset_csv, write_dataset_csv
from ahdp.noise import Rng
from ahdp.privacy import parse_mapping

TEST_BUILD_ENV = "AHDP_TEST_BUILD"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- JSON -------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, ``inf`` as a string."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


# -- parser -----------------------------------------------------------------


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--config", type=Path, default=None, help="flat key=value file")
    p.add_argument("--audit-mode", action="store_true",
                   help=f"suppress noise (only with {TEST_BUILD_ENV}=1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ahdp", description="Add-remove heterogeneous differential privacy")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def mech(name, help_text, alpha="one-minus-exp"):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--input", type=Path, required=False)
        p.add_argument("--alpha", default=alpha)
        return p

    p = mech("sum", "weighted sum")
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=1.0)
    mech("count", "weighted count")
    p = mech("mean", "weighted mean", alpha="scaled:one-minus-exp:0.5")
    p.add_argument("--alpha2", default=None)
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=1.0)
    p.add_argument("--floor", type=float, default=1.0)
    p.add_argument("--clip", action="store_true")
    p = mech("freq", "relative label frequencies", alpha="scaled:one-minus-exp:0.5")
    p.add_argument("--alpha2", default=None)
    p.add_argument("--k", type=_positive_int, default=None)
    p.add_argument("--floor", type=float, default=1.0)
    p = mech("regress", "weighted functional regression", alpha="one-minus-exp")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--symmetrize", action="store_true")
    p = mech("sample-mech", "sample mechanism", alpha="epsilon")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--stage", choices=["sum", "count", "mean", "histogram", "regression"],
                   default="mean")
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=1.0)
    p.add_argument("--k", type=_positive_int, default=None)
    p.add_argument("--floor", type=float, default=1.0)
    p.add_argument("--ridge", type=float, default=0.0)

    p = sub.add_parser("audit", help="density-ratio audits on random neighbor pairs")
    _common(p)
    p.add_argument("--mech", required=False, default="linear-query",
                   choices=list(audit.MECHANISMS) + ["sample-mechanism"])
    p.add_argument("--pairs", type=_positive_int, default=100)
    p.add_argument("--alpha", default="one-minus-exp")
    p.add_argument("--probes", type=int, default=16)
    p.add_argument("--t", type=float, default=1.0)

    p = sub.add_parser("power", help="adversarial power bounds")
    _common(p)
    p.add_argument("--claim", choices=["swap", "addremove", "ahdp", "pair"], default="pair")
    p.add_argument("--k", type=_positive_int, default=2)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--domain", type=Path, default=None)
    p.add_argument("--horizon", choices=["1", "inf"], default="1")
    p.add_argument("--truncate", type=int, default=6)

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    _common(p)
    p.add_argument("--kind", choices=["weight", "education", "regression"], default="weight")
    p.add_argument("--n", type=_positive_int, default=None)
    p.add_argument("--target-corr", type=float, default=-0.84)
    p.add_argument("--independent", action="store_true")
    p.add_argument("--housing", type=Path, default=None, help="raw x1..xd,y CSV")
    p.add_argument("--output", type=Path, required=False)
    p.add_argument("--output-test", type=Path, default=None)

    p = sub.add_parser("sweep", help="experiment sweeps")
    _common(p)
    p.add_argument("task", choices=["mean", "freq", "regress"])
    p.add_argument("--input", type=Path, default=None)
    p.add_argument("--test", type=Path, default=None)
    p.add_argument("--housing", type=Path, default=None)
    p.add_argument("--sizes", type=_int_list, default=None)
    p.add_argument("--trials", type=_positive_int, default=None)
    p.add_argument("--methods", type=_str_list, default=None)
    p.add_argument("--output-dir", type=Path, default=None)
    return parser


# -- config files -----------------------------------------------------------


def read_config(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise UsageError(f"unknown command {command!r}")


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} expects a boolean")
            value = raw.lower() in ("true", "1", "yes")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config key {key!r} must be one of {list(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        values = read_config(args.config)
        # an echoed config names its own command; anything else is a mistake
        named = values.pop("command", args.command)
        if named != args.command:
            raise UsageError(f"config is for {named!r}, not {args.command!r}")
        parser = build_parser()
        _apply_config(_subparser(parser, args.command), values)
        args = parser.parse_args(argv)
    if args.audit_mode and os.environ.get(TEST_BUILD_ENV) != "1":
        raise UsageError(f"--audit-mode is only available when {TEST_BUILD_ENV}=1")
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "config"}


# -- commands ---------------------------------------------------------------


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")


def _mapping(text):
    try:
        return parse_mapping(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(args) -> Dataset:
    _need(args, "input")
    return read_dataset_csv(args.input)


def _report_json(report: mechanisms.MechanismReport) -> dict:
    out = {"output": report.output, "spent_description": report.spent.name,
           "seed": report.seed, "flags": report.flags}
    if report.noiseless_part is not None:
        part = report.noiseless_part
        if isinstance(part, dict):
            part = {"center": part["center"], "kept": part["subsample"].size}
        out["noiseless_part"] = part
    return out


def cmd_sum(args):
    r = mechanisms.sum_estimate(_load(args), args.low, args.high, _mapping(args.alpha),
                                Rng(args.seed), audit=args.audit_mode)
    return _report_json(r)


def cmd_count(args):
    r = mechanisms.count_estimate(_load(args), _mapping(args.alpha), Rng(args.seed),
                                  audit=args.audit_mode)
    return _report_json(r)


def cmd_mean(args):
    a1 = _mapping(args.alpha)
    a2 = _mapping(args.alpha2) if args.alpha2 else a1
    r = mechanisms.mean_estimate(_load(args), args.low, args.high, a1, a2, Rng(args.seed),
                                 floor=args.floor, clip=args.clip, audit=args.audit_mode)
    return _report_json(r)


def _infer_k(dataset: Dataset, k):
    if k is not None:
        return k
    values = dataset.arrays()[0]
    return int(values.max()) if len(values) else 1


def cmd_freq(args):
    data = _load(args)
    a1 = _mapping(args.alpha)
    a2 = _mapping(args.alpha2) if args.alpha2 else a1
    r = mechanisms.frequency_estimate(data, _infer_k(data, args.k), a1, a2, Rng(args.seed),
                                      floor=args.floor, audit=args.audit_mode)
    return _report_json(r)


def cmd_regress(args):
    r = mechanisms.regression(_load(args), _mapping(args.alpha), Rng(args.seed), ridge=args.ridge,
                              symmetrize=args.symmetrize, audit=args.audit_mode)
    out = {"theta": r.theta, "spent_description": r.spent.name, "seed": r.seed,
           "flags": {"condition": r.condition, "ridge": r.ridge, "fallback": r.fallback,
                     "audit": args.audit_mode, "symmetrized": args.symmetrize}}
    if args.audit_mode:
        out["A"], out["b"] = r.A, r.b
    return out


def _stage(args, data: Dataset):
    if args.stage == "sum":
        return mechanisms.SumStage(args.low, args.high)
    if args.stage == "count":
        return mechanisms.CountStage()
    if args.stage == "mean":
        return mechanisms.MeanStage(args.low, args.high, args.floor)
    if args.stage == "histogram":
        return mechanisms.HistogramStage(_infer_k(data, args.k), args.floor)
    values = data.arrays()[0]
    if values.ndim != 2:
        raise UsageError("regression stage needs a regression dataset")
    return mechanisms.RegressionStage(values.shape[1] - 1, args.ridge)


def cmd_sample_mech(args):
    data = _load(args)
    r = mechanisms.sample_mechanism(data, _mapping(args.alpha), args.t, _stage(args, data),
                                    Rng(args.seed), audit=args.audit_mode)
    return _report_json(r)


_AUDIT_KINDS = {
    "linear-query": "scalar", "sum": "scalar", "count": "scalar", "mean-parts": "scalar",
    "frequency-vector": "categorical", "regression-entries": "regression",
}


def cmd_audit(args):
    alpha = _mapping(args.alpha)
    rng = Rng(args.seed)
    bounded = math.isfinite(alpha(0, math.inf))
    reports = []
    for i in range(args.pairs):
        stream = rng.child(i)
        if args.mech == "sample-mechanism":
            d1, _ = audit.random_neighbor_pair("scalar", stream.child(0), max_size=6,
                                               max_support=4, allow_inf=True)
            reports.extend(audit.sample_mechanism_brute_force(
                d1, alpha, args.t, mechanisms.SumStage(0.0, 1.0), rng=stream.child(1)))
            continue
        d1, d2 = audit.random_neighbor_pair(_AUDIT_KINDS[args.mech], stream.child(0),
                                            allow_inf=bounded)
        alpha2 = alpha if args.mech == "frequency-vector" else None
        reports.append(audit.density_ratio_audit(args.mech, d1, d2, alpha, alpha2=alpha2,
                                                 probes=args.probes, rng=stream.child(1), k=4))
    failed = sum(not r.passed for r in reports)
    return {"reports": [r.as_dict() for r in reports], "failed": failed}, (2 if failed else 0)


def cmd_power(args):
    horizon = power.Horizon.parse(args.horizon)
    out: dict = {}
    if args.claim == "swap":
        result = power.power_bound_swap(args.k, args.eps)
    elif args.claim == "pair":
        result = power.power_bound_pair(args.eps)
    elif args.claim == "addremove":
        result = power.power_bound_addremove(args.k, args.eps, horizon)
        domain = CorrelationDomain((i, args.eps) for i in range(1, args.k + 1))
    else:
        _need(args, "domain")
        domain = CorrelationDomain(read_dataset_csv(args.domain).support())
        result = power.power_bound_ahdp(domain, horizon)
    out.update(result.as_dict())
    if args.claim in ("addremove", "ahdp") and horizon is power.Horizon.INFINITY and args.truncate > 0:
        out["trend"] = _truncated_trend(args, domain)
    return out


def _truncated_trend(args, domain: CorrelationDomain):
    # Exact power of the achieving mechanism on H_1..H_t; skipped when too large.
    target = power.EXACT if args.claim == "addremove" else power.PROJECTION
    distance = "add-remove-da" if args.claim == "addremove" else "projected-d'"
    trend = []
    for t in range(1, args.truncate + 1):
        if math.comb(len(domain) + t, t) > 500:
            break
        model = power.ThreatModel.append_up_to(Dataset(), domain, t, target)
        mech = power.exponential_mechanism_descriptor(model, distance)
        trend.append({"t": t, "exact": power.exact_power(mech, model).exact})
    return trend


_DEFAULT_N = {"weight": 2200, "education": 3000, "regression": 20_000}


def cmd_gen_data(args):
    _need(args, "output")
    n = args.n or _DEFAULT_N[args.kind]
    out = {"output": args.output, "n": n}
    if args.kind == "weight":
        data = experiments.gen_weight_eps(n, args.seed, args.target_corr,
                                          independent=args.independent)
        values, eps, counts = data.arrays()
        reps = counts.astype(int)
        out["correlation"] = float(np.corrcoef(np.repeat(values, reps), np.repeat(eps, reps))[0, 1])
    elif args.kind == "education":
        data = experiments.gen_education_eps(n, args.seed)
        out["chi2_pvalue"] = experiments.chi_squared_pvalue(experiments.contingency_table(data))
    else:
        train, test = _regression_split(args, n)
        data = experiments.gen_regression_eps(train, args.seed)
        if args.output_test is not None:
            write_dataset_csv(experiments.gen_regression_eps(test, args.seed + 1), args.output_test)
            out["output_test"] = args.output_test
        out["n"] = data.size
    write_dataset_csv(data, args.output)
    return out


def _regression_split(args, n=None):
    if args.housing is not None:
        X, y = experiments.normalize_regression(*experiments.load_housing_csv(args.housing))
    else:
        X, y = experiments.synthetic_housing(n or _DEFAULT_N["regression"], seed=args.seed)
    n_train = min(18_000, int(round(0.9 * len(X))))
    return experiments.housing_split(X, y, n_train, seed=args.seed)


_SWEEP_DEFAULTS = {
    "mean": ([100, 200, 500, 1000, 2000], 500, experiments.MEAN_METHODS),
    "freq": ([100, 200, 500, 1000, 2000], 500, experiments.FREQ_METHODS),
    "regress": ([1000, 2000, 5000, 10000, 18000], 50, experiments.REGRESSION_METHODS),
}


def cmd_sweep(args):
    sizes, trials, methods = _SWEEP_DEFAULTS[args.task]
    args.sizes = args.sizes or sizes
    args.trials = args.trials or trials
    args.methods = args.methods or list(methods)
    if args.task == "mean":
        data = read_dataset_csv(args.input) if args.input else experiments.gen_weight_eps(2200, args.seed)
        result = experiments.mean_sweep(data, args.sizes, args.trials, args.methods, args.seed,
                                        audit=args.audit_mode)
    elif args.task == "freq":
        data = read_dataset_csv(args.input) if args.input else experiments.gen_education_eps(3000, args.seed)
        result = experiments.freq_sweep(data, args.sizes, args.trials, args.methods, args.seed,
                                        audit=args.audit_mode)
    else:
        if args.input:
            train = read_dataset_csv(args.input)
            _need(args, "test")
            test = read_dataset_csv(args.test)
        else:
            tr, te = _regression_split(args)
            train, test = experiments.gen_regression_eps(tr, args.seed), te
        result = experiments.regression_sweep(train, test, args.sizes, args.trials, args.methods,
                                              args.seed, audit=args.audit_mode)
    if args.output_dir is not None:
        result.write(args.output_dir)
    return result.to_json()


COMMANDS = {
    "sum": cmd_sum, "count": cmd_count, "mean": cmd_mean, "freq": cmd_freq,
    "regress": cmd_regress, "sample-mech": cmd_sample_mech, "audit": cmd_audit,
    "power": cmd_power, "gen-data": cmd_gen_data, "sweep": cmd_sweep,
}


def run(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        result = COMMANDS[args.command](args)
        code = 0
        if isinstance(result, tuple):
            result, code = result
    except UsageError as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except (ValueError, KeyError, OSError, OverflowError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    stdout.write(dumps({"command": args.command, "config": resolved_config(args), "result": result}))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
