from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from . import estimators, quadrature, simulator, streams
from .dislocation_laws import get_law
from .errors import FragstatError, InvalidParameterError
from .estimators import estimate_alpha_mle, estimate_alpha_tagged
from .exports import (
    write_csv,
    write_kernel_csv,
    write_observation_jsonl,
    write_report_csv,
    write_results_csv,
    write_study_csv,
)
from .harness import StudyConfig, hash_mapping, run_study
from .measures import pi_from_law
from .models import ExperimentResult
from .report_builder import build_html_report, build_key_value_report
from .simulator import grow_tree, simulate_noisy
from .tagged_oracle import oracle_check_lemma, sample_tagged_times, two_point_experiment
from .testfunctions import get_testfn, kernel_grid, kernel_moments, make_kernel


BASE_DIR = Path(__file__).resolve().parent.parent
CONFIG_PATH = BASE_DIR / "config" / "config.yaml"

logger = logging.getLogger("src")

DEFAULT_OUTPUT = {
    "csv_dir": "reports/csv",
    "jsonl_dir": "reports/jsonl",
    "html_dir": "reports/html",
}


def load_config(path: Optional[Path] = None) -> dict:
    config_path = Path(path) if path else CONFIG_PATH
    if not config_path.exists():
        logger.info("[CLI] no config at %s, using built-in defaults", config_path)
        return {}
    logger.debug("[CLI] loading config from %s", config_path)
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        logger.warning("[CLI] cannot parse %s (%r), using built-in defaults", config_path, e)
        return {}
    return data if isinstance(data, dict) else {}


def setup_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
        force=True,
    )


def apply_config(cfg: dict) -> None:
    quadrature.configure(cfg.get("quadrature", {}))
    simulator.configure(cfg.get("simulation", {}), cfg.get("observation", {}))
    estimators.configure(cfg.get("estimators", {}))


def _out_path(cfg: dict, kind: str, given: Optional[str], stem: str) -> Path:
    if given:
        return Path(given)
    out_cfg = {**DEFAULT_OUTPUT, **(cfg.get("output") or {})}
    ext = {"csv_dir": "csv", "jsonl_dir": "jsonl", "html_dir": "html"}[kind]
    return BASE_DIR / out_cfg[kind] / f"{stem}.{ext}"


def _run_header(args, **extra) -> Dict[str, Any]:
    """Echo of the command-line parameters with their hash and the root seed."""
    params = {k: v for k, v in vars(args).items() if k not in ("func", "out", "html", "dump", "app_config", "log_level", "study")}
    header = {f"arg.{k}": v for k, v in params.items()}
    header["config_hash"] = hash_mapping(params)
    header["root_seed"] = getattr(args, "seed", None)
    header.update(extra)
    return header


def _write_html(path: Path, html: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(html)
    logger.info("[CLI] wrote %s", path)


# -------------------------
#   SUBCOMMANDS
# -------------------------

def cmd_simulate(args, cfg: dict) -> int:
    law = get_law(args.law)
    obs = simulate_noisy(
        law,
        args.eps,
        args.sigma,
        args.seed,
        noise_seed=args.noise_seed,
        alpha=args.alpha,
        with_times=args.with_times,
        gamma0=args.gamma0,
    )
    logger.info("[SIM] %s eps=%g sigma=%g seed=%d: %d frozen fragments, mass defect %.3g",
                law.name, args.eps, args.sigma, args.seed, len(obs), obs.mass_defect)
    stem = f"simulate_{law.name}_eps{args.eps:g}_seed{args.seed}"
    write_observation_jsonl(obs, _out_path(cfg, "jsonl_dir", args.out, stem))
    return 0


def _single_eps_study(args, cfg: dict, **fields) -> int:
    data: Dict[str, Any] = {
        "law": args.law,
        "epsilons": [args.eps],
        "sigma_rule": args.sigma,
        "reps": args.reps,
        "seed": args.seed,
        "alpha": args.alpha,
        "N": getattr(args, "N", None),
        "gamma_rule": getattr(args, "gamma_rule", None),
        "kernel_gamma_rule": getattr(args, "kernel_gamma_rule", None),
        "mu": getattr(args, "mu", None),
        "workers": (cfg.get("study") or {}).get("workers"),
    }
    data.update(fields)
    sc = StudyConfig.from_mapping(data)
    study = run_study(sc)
    stem = f"{sc.estimator}_{sc.config_hash()}"
    write_study_csv(_out_path(cfg, "csv_dir", args.out, stem), study)
    res = study.results[0]
    logger.info("[ESTIMATE] %s: mean %.6g ± %.2g (reference %s)", sc.estimator, res.mean, res.std_error,
                "n/a" if res.reference is None else f"{res.reference:.6g}")
    return 0


def cmd_measure(args, cfg: dict) -> int:
    return _single_eps_study(args, cfg, estimator="measure", fn=args.fn)


def cmd_estimate_moment(args, cfg: dict) -> int:
    if args.k < 1:
        raise InvalidParameterError(f"moment order must be >= 1, got {args.k}")
    return _single_eps_study(args, cfg, estimator="m1" if args.k == 1 else "mk", k=args.k)


def cmd_estimate_beta(args, cfg: dict) -> int:
    return _single_eps_study(args, cfg, estimator="beta", a=args.a)


def cmd_estimate_alpha(args, cfg: dict) -> int:
    law = get_law(args.law)
    seeds = streams.replicate_seeds(args.seed, args.reps)
    values: List[float] = []
    if args.mode == "tagged":
        pi = pi_from_law(law)
        for s in seeds:
            T = float(sample_tagged_times(pi, args.eps, args.alpha, 1, s)[0])
            values.append(estimate_alpha_tagged(T, args.eps))
    else:
        for s in seeds:
            tree = grow_tree(law, args.eps, alpha=args.alpha, seed=s, with_times=True)
            values.append(estimate_alpha_mle(tree.pairs()))
    res = ExperimentResult.from_values(
        label=f"alpha-{args.mode}", epsilon=args.eps, values=values, seeds=seeds, reference=args.alpha,
    )
    header = _run_header(args, law_name=law.name)
    stem = f"alpha_{args.mode}_{law.name}_eps{args.eps:g}_seed{args.seed}"
    write_results_csv(_out_path(cfg, "csv_dir", args.out, stem), [res], header)
    logger.info("[ESTIMATE] alpha (%s): mean %.4g ± %.2g, true %g", args.mode, res.mean, res.std_error, args.alpha)
    return 0


def cmd_oracle_check(args, cfg: dict) -> int:
    law = get_law(args.law)
    report = oracle_check_lemma(law, args.eta, get_testfn(args.fn), args.reps, args.seed)
    header = _run_header(args)
    stem = f"oracle_{law.name}_eta{args.eta:g}_{args.fn}_seed{args.seed}"
    write_report_csv(_out_path(cfg, "csv_dir", args.out, stem), report.as_dict(), header)
    if args.html:
        _write_html(Path(args.html), build_key_value_report(f"Oracle check · {law.name}", report.as_dict(), header["config_hash"]))
    return 0


def cmd_two_point(args, cfg: dict) -> int:
    law = get_law(args.law)
    report = two_point_experiment(law, args.k, args.eps, args.tau, reps=args.reps, seed=args.seed)
    header = _run_header(args)
    stem = f"two_point_{law.name}_k{args.k}_eps{args.eps:g}"
    write_report_csv(_out_path(cfg, "csv_dir", args.out, stem), report.as_dict(), header)
    if args.html:
        _write_html(Path(args.html), build_key_value_report(f"Two-point experiment · {law.name}", report.as_dict(), header["config_hash"]))
    return 0


def cmd_rate_study(args, cfg: dict) -> int:
    overrides = {
        key: getattr(args, key)
        for key in ("law", "estimator", "eps", "sigma_rule", "reps", "seed", "fn", "k", "a",
                    "alpha", "N", "mu", "gamma_rule", "kernel_gamma_rule", "error_power", "workers")
    }
    if overrides["workers"] is None:
        overrides["workers"] = (cfg.get("study") or {}).get("workers")
    if args.study:
        sc = StudyConfig.from_yaml(Path(args.study), overrides)
    else:
        sc = StudyConfig.from_mapping(overrides)

    csv_path = _out_path(cfg, "csv_dir", args.csv or sc.csv, f"rate_study_{sc.config_hash()}")
    html_path = args.html or sc.html

    def flush(partial) -> None:
        write_study_csv(csv_path, partial)

    study = run_study(sc, on_partial=flush)
    write_study_csv(csv_path, study)
    if html_path:
        _write_html(Path(html_path), build_html_report(study))
    if study.fit is not None and not study.fit.exact:
        logger.info("[STUDY] fitted slope %.4f ± %.2g", study.fit.slope, study.fit.slope_se)
    return 0


def cmd_kernel(args, cfg: dict) -> int:
    phi = make_kernel(args.order)
    moments = kernel_moments(phi, args.order)
    for k, m in enumerate(moments):
        logger.info("[QUAD] order %d: int a^%d phi = %.3e", args.order, k, m)
    if args.dump:
        header = _run_header(args, moment_residual=phi.metadata.get("moment_residual"))
        write_kernel_csv(Path(args.dump), kernel_grid(phi, args.points), header)
    else:
        rows = [(k, m) for k, m in enumerate(moments)]
        write_csv(_out_path(cfg, "csv_dir", None, f"kernel_moments_N{args.order}"), ("k", "moment"), rows,
                  _run_header(args))
    return 0


# -------------------------
#   PARSER
# -------------------------

def _add_common(p: argparse.ArgumentParser, eps_default: float = 1e-3) -> None:
    p.add_argument("--law", default="binary-uniform")
    p.add_argument("--eps", type=float, default=eps_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--out", default=None)


def _add_estimator(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--sigma", default="0", help="0, eps^p or a number")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--gamma-rule", default=None)
    p.add_argument("--kernel-gamma-rule", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fragstat", description="Fragmentation chain simulation and estimation")
    parser.add_argument("--config", dest="app_config", default=None, help="application config (config/config.yaml)")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="frozen fragments of one tree as JSON-lines")
    _add_common(p)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--gamma0", type=float, default=None)
    p.add_argument("--with-times", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("measure", help="empirical measure E_eps(g) over replicates")
    _add_estimator(p)
    p.add_argument("--fn", default="identity")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("estimate-moment", help="moment estimator m_k")
    _add_estimator(p)
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(func=cmd_estimate_moment)

    p = sub.add_parser("estimate-beta", help="kernel estimator of beta(a)")
    _add_estimator(p)
    p.add_argument("--a", type=float, default=0.5)
    p.set_defaults(func=cmd_estimate_beta)

    p = sub.add_parser("estimate-alpha", help="self-similarity index")
    _add_common(p, eps_default=1e-6)
    p.add_argument("--mode", choices=("tagged", "mle"), default="tagged")
    p.add_argument("--reps", type=int, default=200)
    p.set_defaults(func=cmd_estimate_alpha)

    p = sub.add_parser("oracle-check", help="tree frontier against first-passage paths")
    p.add_argument("--law", default="binary-uniform")
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--fn", default="identity")
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--html", default=None)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("two-point", help="KL / Pinsker experiment for a perturbed law")
    p.add_argument("--law", default="binary-uniform")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--html", default=None)
    p.set_defaults(func=cmd_two_point)

    p = sub.add_parser("rate-study", help="replicate study over an epsilon grid with a rate fit")
    p.add_argument("--study", default=None, help="study YAML (flat key: value)")
    for flag, kind in (
        ("--law", str), ("--estimator", str), ("--eps", str), ("--sigma-rule", str),
        ("--reps", int), ("--seed", int), ("--fn", str), ("--k", int), ("--a", float),
        ("--alpha", float), ("--N", int), ("--mu", float), ("--gamma-rule", str),
        ("--kernel-gamma-rule", str), ("--error-power", float), ("--workers", int),
    ):
        p.add_argument(flag, type=kind, default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--html", default=None)
    p.set_defaults(func=cmd_rate_study)

    p = sub.add_parser("kernel", help="vanishing-moment kernel of order N")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--points", type=int, default=1001)
    p.add_argument("--dump", default=None)
    p.set_defaults(func=cmd_kernel)

    return parser


# -----------
#   MAIN
# -----------

def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.app_config)
    setup_logging(args.log_level or (cfg.get("logging") or {}).get("level", "INFO"))
    apply_config(cfg)

    try:
        return int(args.func(args, cfg) or 0)
    except FragstatError as e:
        logger.error("[FATAL] %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
