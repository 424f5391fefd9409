"""Command-line surface.

Commands write CSV/JSON only and are deterministic given --seed.  Exit
codes: 0 success, 2 input validation, 3 solver failure, 4 degenerate
estimand under --strict.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .asymptotic import aipw, aipw_partial, select_epsilon
from .ball_program import SolverConvergenceError
from .core_data import Dataset, ValidationError, load_dataset_csv, partition, save_dataset_csv
from .lipschitz import KNNRegressor, LipschitzClass, contextualize_L, fit_default_regressor
from .minimax_ci import (combine_intervals, m_interval, metric_T, mp_interval)
from .modulus import DegenerateProblemError, ModulusProblem
from .simulation import (CollectionParams, Example1Params, SamplingOption,
                         coverage_experiment, evaluate_sampling_option,
                         run_collection_confseq, simulate_collection,
                         simulate_example1)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_DEGENERATE = 4


class DegenerateEstimandWarning(Exception):
    """Raised under --strict when a requested estimand is an empty sum."""


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _write_csv(path, header, rows) -> None:
    if path in (None, "-"):
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
    else:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)


def _resolve_L(args, dataset: Dataset) -> tuple[float, float | None, float]:
    """Return (L, percentile or None, epsilon used for the overlap fit)."""
    eps = args.epsilon if args.epsilon is not None else select_epsilon(
        dataset, args.epsilon_set, None, args.alpha)
    if args.L is not None:
        return float(args.L), None, eps
    p = args.percentiles[0] if args.percentiles else 0.95
    part = partition(dataset, eps)
    overlap = dataset.subset(part.s)
    reg = fit_default_regressor(overlap, k=args.knn)
    _, _, L = contextualize_L(overlap, reg, p)
    return L, p, eps


def cmd_analyze(args) -> int:
    dataset = load_dataset_csv(args.input, J=args.j)
    L, p_used, eps = _resolve_L(args, dataset)
    alpha = args.alpha
    part = partition(dataset, eps)

    reg = KNNRegressor(k=args.knn).fit(dataset.x, dataset.y, dataset.z)
    report = {
        "schema_version": SCHEMA_VERSION,
        "n": dataset.n,
        "epsilon_star": eps,
        "L": L,
        "percentile": p_used,
        "alpha": alpha,
        "n_non_overlap": part.n_non_overlap,
    }
    try:
        report["aipw"] = aipw(dataset, reg, alpha).to_dict()
    except ValidationError as exc:
        report["aipw"] = {"error": str(exc)}
    report["aipw_partial"] = aipw_partial(dataset, eps, None, alpha).to_dict()

    lip = LipschitzClass.from_points(dataset.x, L)
    mp = mp_interval(dataset, eps, L, alpha, lip=lip)
    m = m_interval(dataset, L, alpha, lip=lip)
    mp_half = mp_interval(dataset, eps, L, alpha / 2.0, lip=lip)
    aipwp_half = aipw_partial(dataset, eps, None, alpha / 2.0)
    mc = combine_intervals(aipwp_half, mp_half)
    report["mp"] = mp.to_dict()
    report["m"] = m.to_dict()
    report["mc"] = mc.to_dict()
    report["metrics"] = {
        "mp_endpoint_max": metric_T(mp, "endpoint_max"),
        "mp_length": metric_T(mp, "length"),
        "m_length": metric_T(m, "length"),
        "mc_length": metric_T(mc, "length"),
    }
    _write_json(args.output, report)
    if args.strict and mp.degenerate:
        raise DegenerateEstimandWarning(
            "non-overlap region is empty: MP is the degenerate point interval")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    dataset = load_dataset_csv(args.input, J=args.j)
    alpha = args.alpha
    eps = args.epsilon if args.epsilon is not None else select_epsilon(
        dataset, args.epsilon_set, None, alpha)
    part = partition(dataset, eps)
    lip = None

    rows = []
    if args.L_list:
        pairs = [(None, L) for L in args.L_list]
    else:
        percentiles = args.percentiles or [0.80, 0.85, 0.90, 0.95]
        overlap = dataset.subset(part.s)
        reg = fit_default_regressor(overlap, k=args.knn)
        pairs = []
        for p in percentiles:
            _, _, L = contextualize_L(overlap, reg, p)
            pairs.append((p, L))
    degenerate = False
    for p, L in pairs:
        if lip is None or lip.L != L:
            lip = LipschitzClass.from_points(dataset.x, L)
        rep = mp_interval(dataset, eps, L, alpha, lip=lip)
        degenerate = degenerate or rep.degenerate
        rows.append(["" if p is None else repr(float(p)), repr(float(L)),
                     repr(rep.lower), repr(rep.upper),
                     repr(rep.length), repr(metric_T(rep, "endpoint_max"))])
    _write_csv(args.output, ["p", "L", "lower", "upper", "length", "T"], rows)
    if args.strict and degenerate:
        raise DegenerateEstimandWarning("non-overlap region is empty")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.dgp == "example1":
        params = Example1Params(n=args.n, o=args.o, eta_dgp=args.eta_dgp,
                                H=args.H, sigma=args.sigma_noise, seed=args.seed)
        draw = simulate_example1(params)
    elif args.dgp == "collection":
        params = CollectionParams(n=args.n, sigma=args.sigma_noise,
                                  seed=args.seed)
        draw = simulate_collection(params)
    else:
        raise ValidationError(f"unknown dgp {args.dgp!r}")
    save_dataset_csv(draw.dataset, args.output)
    if args.truth_output:
        _write_csv(args.truth_output, ["tau"],
                   [[repr(float(t))] for t in draw.tau_per_unit])
    return EXIT_OK


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"schema: cannot read config {path}: {exc}") from None


def cmd_coverage(args) -> int:
    cfg = _load_config(args.config)
    dgp_name = cfg.get("dgp", "example1")
    params = cfg.get("params", {})
    if dgp_name == "example1":
        dgp = Example1Params(**params)
    elif dgp_name == "collection":
        dgp = CollectionParams(**params)
    else:
        raise ValidationError(f"schema: unknown dgp {dgp_name!r}")
    result = coverage_experiment(
        dgp,
        methods=cfg.get("methods", ["AIPW", "AIPWP", "MP", "M", "MC"]),
        reps=int(cfg.get("reps", 100)),
        alpha=float(cfg.get("alpha", 0.05)),
        seed=int(cfg.get("seed", args.seed)),
        epsilon_set=tuple(cfg.get("epsilon_set", (0.01, 0.02, 0.03, 0.04, 0.05))),
        L=float(cfg.get("L", 14.0)),
    )
    header = ["method", "target", "coverage", "coverage_se",
              "mean_half_length", "half_length_se", "n_ok", "n_fail"]
    rows = []
    for name, st in result.stats.items():
        d = st.to_dict()
        rows.append([name, d["target"], repr(d["coverage"]),
                     repr(d["coverage_se"]), repr(d["mean_half_length"]),
                     repr(d["half_length_se"]), d["n_ok"], d["n_fail"]])
    _write_csv(args.output, header, rows)
    if args.summary:
        _write_json(args.summary, {"schema_version": SCHEMA_VERSION,
                                   **result.to_dict()})
    return EXIT_OK


def cmd_sample_options(args) -> int:
    cfg = _load_config(args.config)
    params = CollectionParams(**cfg.get("params", {}))
    draw = simulate_collection(params)
    options = []
    for spec in cfg.get("options", _default_option_specs()):
        options.append(SamplingOption.from_intervals(
            spec["name"], spec["regions"],
            sample_prob=float(spec.get("sample_prob", 1.0)),
            new_propensity=float(spec.get("new_propensity", 0.5))))
    L_list = cfg.get("L_list", [4.28, 5.48, 6.65, 13.11])
    eps = float(cfg.get("epsilon", 0.04))
    alpha = float(cfg.get("alpha", 0.05))
    n_mc = int(cfg.get("n_mc", 10))
    seed = int(cfg.get("seed", args.seed))
    rows = []
    for i, option in enumerate(options):
        for L in L_list:
            val = evaluate_sampling_option(draw.dataset, option, eps, float(L),
                                           alpha, n_mc, seed + i)
            rows.append([option.name, repr(float(L)), repr(val)])
    _write_csv(args.output, ["option", "L", "expected_length"], rows)
    return EXIT_OK


def _default_option_specs():
    return [
        {"name": "option_1", "regions": [[0.4, 0.6]]},
        {"name": "option_2", "regions": [[0.0, 0.1], [0.9, 1.0]]},
        {"name": "oracle", "regions": [[0.0, 0.1], [0.4, 0.6], [0.9, 1.0]],
         "sample_prob": 0.5},
    ]


def cmd_confseq(args) -> int:
    cfg = _load_config(args.config)
    params = CollectionParams(**cfg.get("params", {}))
    epochs = [tuple(e) for e in cfg.get("epochs", [])] or None
    run = run_collection_confseq(
        params,
        epochs=epochs or ((0.40, 0.47), (0.47, 0.53), (0.53, 0.60),
                          (0.00, 0.03), (0.03, 0.07), (0.07, 0.10)),
        L=float(cfg.get("L", 5.48)),
        epsilon=float(cfg.get("epsilon", 0.04)),
        alpha=float(cfg.get("alpha", 0.05)),
        rng=np.random.default_rng(int(cfg.get("seed", args.seed))))
    lines = []
    for entry, target in zip(run.sequence.entries, run.targets):
        record = {"schema_version": SCHEMA_VERSION, **entry.to_dict(),
                  "target": target}
        lines.append(json.dumps(record, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overlap-minimax",
        description="Minimax confidence intervals under limited overlap")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=True, help="dataset CSV")
        p.add_argument("--output", default="-", help="output path (default stdout)")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--epsilon-set", dest="epsilon_set", type=_float_list,
                       default=[0.01, 0.02, 0.03, 0.04, 0.05])
        p.add_argument("--L", type=float, default=None)
        p.add_argument("--percentiles", type=_float_list, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--reps", type=int, default=100)
        p.add_argument("--j", type=int, default=2,
                       help="neighbors for the noise-sd estimate")
        p.add_argument("--knn", type=int, default=5,
                       help="neighbors for the default regressor")
        p.add_argument("--strict", action="store_true")

    p = sub.add_parser("analyze", help="all intervals for one dataset")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sensitivity", help="interval sweep over L")
    common(p)
    p.add_argument("--L-list", dest="L_list", type=_float_list, default=None,
                   help="explicit Lipschitz constants; bypasses contextualization")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("simulate", help="write a synthetic dataset CSV")
    p.add_argument("--dgp", default="example1", choices=["example1", "collection"])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--o", type=float, default=0.05)
    p.add_argument("--eta-dgp", dest="eta_dgp", type=float, default=0.05)
    p.add_argument("--H", type=float, default=0.25)
    p.add_argument("--sigma-noise", dest="sigma_noise", type=float, default=0.06)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--truth-output", default=None)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_simulate)

    for name, fn in (("coverage", cmd_coverage),
                     ("sample-options", cmd_sample_options),
                     ("confseq", cmd_confseq)):
        p = sub.add_parser(name, help=f"run the {name} experiment from a config")
        p.add_argument("--config", required=True, help="JSON experiment spec")
        p.add_argument("--output", default="-")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--strict", action="store_true")
        if name == "coverage":
            p.add_argument("--summary", default=None, help="JSON summary path")
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        _write_json(None, {"error": str(exc), "category": "validation",
                           "exit_code": EXIT_VALIDATION})
        return EXIT_VALIDATION
    except SolverConvergenceError as exc:
        _write_json(None, {"error": str(exc), "category": "solver",
                           "gap": exc.gap, "exit_code": EXIT_SOLVER})
        return EXIT_SOLVER
    except DegenerateProblemError as exc:
        _write_json(None, {"error": str(exc), "category": "degenerate",
                           "exit_code": EXIT_VALIDATION})
        return EXIT_VALIDATION
    except DegenerateEstimandWarning as exc:
        _write_json(None, {"error": str(exc), "category": "degenerate",
                           "exit_code": EXIT_DEGENERATE})
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
