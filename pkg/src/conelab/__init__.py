import argparse
import json
import os
import pathlib
import shelve
import sys
from typing import Any, Dict, List, MutableMapping, Optional, Sequence

import numpy as np
import singer
import singer.utils as singer_utils

from conelab import (
    annulus_dynamics,
    barriers_distance,
    cache,
    hardt_simon,
    jacobi_spectrum,
    link_smoothing,
    log_perturbation,
    report,
    results,
)
from conelab.computation import Computation, Handler, Output, Row
from conelab.config import MODULE_ERRORS, ConfigError, RunConfig
from conelab.geometry_core import ConeParams
from conelab.schema.from_file.api import LoaderError

logger = singer.get_logger()

NUMERICAL_FAILURE = 1
USAGE_ERROR = 2

MOMENT_DELTA_MAX = 1e-4
MOMENT_DELTAS = (1e-4, 1e-5, 1e-6)

# flags shared by every subcommand; everything else is a run parameter
GLOBAL_OPTIONS = {"command", "config", "output", "cache_dir", "no_cache", "seed"}
GLOBAL_OPTIONS |= {"json", "csv", "workers"}

NUMERICAL_ERRORS = MODULE_ERRORS + (results.ResultsError, LoaderError)

caches: Dict[str, shelve.Shelf] = {}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config_ = parse_config(argv)
        config_.validate()
    except (ConfigError, OSError, ValueError) as error:
        return fail(error, USAGE_ERROR)

    try:
        table = run(config_)
    except (ConfigError, OSError) as error:
        return fail(error, USAGE_ERROR)
    except NUMERICAL_ERRORS + (ConelabException,) as error:
        return fail(error, NUMERICAL_FAILURE)
    finally:
        close_caches()

    sys.stdout.write(table.to_json() + "\n")

    return 0


def fail(error: Exception, status: int) -> int:
    logger.error("%s: %s", type(error).__name__, error)
    json.dump({"error": type(error).__name__, "message": str(error)}, sys.stderr)
    sys.stderr.write("\n")

    return status


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message)


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with a run configuration")
    common.add_argument("--output", help="directory for result tables")
    common.add_argument("--cache-dir", help="directory holding the result cache")
    common.add_argument("--no-cache", action="store_true")
    common.add_argument("--seed", type=int)
    common.add_argument(
        "--workers", type=int, help="processes for delta sweeps and trials"
    )
    common.add_argument("--json", action="store_true", help="write JSON only")
    common.add_argument("--csv", action="store_true", help="write CSV only")

    parser = ArgumentParser(prog="conelab")
    commands = parser.add_subparsers(dest="command", required=True)

    command = commands.add_parser("hardt-simon", parents=[common])
    command.add_argument("--pq")
    command.add_argument("--xi-max", type=float)
    command.add_argument("--tol", type=float)
    command.add_argument("--eps", type=float)

    command = commands.add_parser("spectrum", parents=[common])
    command.add_argument("--pq")
    command.add_argument("--count", type=int)

    command = commands.add_parser("smooth-link", parents=[common])
    command.add_argument("--pq")
    command.add_argument("--delta", type=float)
    command.add_argument("--delta-grid")
    command.add_argument("--alpha", type=float)
    command.add_argument("--n-nodes", type=int)
    command.add_argument("--width", type=int)
    command.add_argument(
        "--h-prime-check",
        action="store_true",
        default=None,
        help="compare h' against a centered difference of h",
    )
    command.add_argument(
        "--alpha-sensitivity",
        action="store_true",
        default=None,
        help="resolve each delta at alpha 0.9, 0.95 and 0.99",
    )
    command.add_argument(
        "--moment-check",
        action="store_true",
        default=None,
        help="recover the moment constant at delta 1e-4 down to 1e-6",
    )

    command = commands.add_parser("log-cone", parents=[common])
    command.add_argument("--pq")
    command.add_argument("--delta", type=float)
    command.add_argument("--delta-grid")
    command.add_argument("--alpha", type=float)
    command.add_argument("--n-nodes", type=int)
    command.add_argument("--kappa", type=float)
    command.add_argument("--lnrho-cap", type=float)
    command.add_argument("--n-t", type=int)
    command.add_argument(
        "--refine",
        action="store_true",
        default=None,
        help="measure the cancellation defect again on a grid with halved steps",
    )

    command = commands.add_parser("barriers", parents=[common])
    command.add_argument("--pq")
    command.add_argument("--which", choices=["X", "G"])
    command.add_argument("--f", help="y-profile JSON file or profile kind")
    command.add_argument("--gamma", type=float)
    command.add_argument("--eps", type=float)
    command.add_argument("--delta", type=float)
    command.add_argument("--beta", type=float)
    command.add_argument("--C-f", dest="C_f", type=float)

    command = commands.add_parser("three-annulus", parents=[common])
    command.add_argument("--pq")
    command.add_argument("--trials", type=int)
    command.add_argument("--convexity-trials", type=int)
    command.add_argument("--linf-trials", type=int)
    command.add_argument("--rho0", type=float)
    command.add_argument("--n-modes", type=int)

    command = commands.add_parser("report", parents=[common])
    command.add_argument("tables", nargs="*", help="result table JSON files or globs")

    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    args = build_parser().parse_args(argv)

    context: Dict[str, Any] = {}
    if args.config:
        context = dict(singer_utils.load_json(args.config))

    parameters = dict(context.get("parameters", {}))
    for key, value in vars(args).items():
        if key not in GLOBAL_OPTIONS and value not in (None, []):
            parameters[key] = value

    if isinstance(parameters.get("f"), str):
        parameters["f"] = load_y_profile(parameters["f"], parameters.pop("gamma", None))

    context["command"] = args.command
    context["parameters"] = parameters

    if args.seed is not None:
        context["seed"] = args.seed
    if args.workers is not None:
        context["workers"] = args.workers
    if args.output:
        context["output"] = args.output
    if args.cache_dir:
        context["cache_dir"] = args.cache_dir
    if args.no_cache:
        context["local_caching"] = False
    if args.json or args.csv:
        context["formats"] = [
            name for name, chosen in (("json", args.json), ("csv", args.csv)) if chosen
        ]

    return RunConfig.from_mapping(context)


def load_y_profile(value: str, gamma: Optional[float] = None) -> Dict[str, Any]:
    if os.path.isfile(value):
        return dict(singer_utils.load_json(value))

    profile: Dict[str, Any] = {"kind": value}
    if gamma is not None:
        profile["gamma"] = gamma
    return profile


def run(config_: RunConfig) -> results.ResultTable:
    if config_.command not in HANDLERS:
        raise ConelabException("Unknown command: [{}]".format(config_.command))

    computation_ = Computation(config_, HANDLERS[config_.command])

    # report inputs are files, so their content is not in the key
    if config_.local_caching and config_.command != "report":
        cache_ = get_or_create_cache(config_.cache_dir, config_.cache_file)
        computation_ = add_caching(computation_, cache_)

    table = results.ResultTable.from_mapping(computation_.value())
    table.write(config_.output, config_.formats)

    return table


def get_or_create_cache(cache_dir: str, cache_file: str) -> shelve.Shelf:
    cache_dir_ = pathlib.Path(cache_dir)

    if not cache_dir_.exists():
        raise OSError(
            "Cache directory [{}] does not exist".format(cache_dir_.as_posix())
        )

    cache_file_ = (cache_dir_ / cache_file).as_posix()
    if cache_file_ not in caches:
        caches[cache_file_] = shelve.open(cache_file_)

    return caches[cache_file_]


def close_caches() -> None:
    while caches:
        _, cache_ = caches.popitem()
        cache_.close()


def add_caching(
    computation_: Computation, cache_: MutableMapping[str, Any]
) -> Computation:
    return cache.Computation(computation_, cache_)


def quantity_row(
    quantity: str, method: Optional[str], value: Optional[float], **extra: Any
) -> Row:
    return {"quantity": quantity, "method": method, "value": value, **extra}


def fit_row(fit: hardt_simon.AsymptoticFit) -> Row:
    return quantity_row(
        "b",
        fit.method_tag,
        fit.b,
        stderr=fit.stderr,
        window_lo=fit.window[0],
        window_hi=fit.window[1],
    )


def do_hardt_simon(config_: RunConfig) -> Output:
    params = config_.params
    xi_max = float(config_.get("xi_max", 1e6))
    tol = float(config_.get("tol", 1e-12))

    a1 = hardt_simon.davini_series_coeffs(1, params)[0]
    rows: List[Row] = [
        quantity_row("a1", "series", float(a1)),
        quantity_row("richardson_order", "rk4", hardt_simon.richardson_order(params)),
    ]

    traj = hardt_simon.integrate_davini(xi_max=xi_max, tol=tol, params=params)
    line_gap = traj.w - 2 / params.w_exponent * traj.xi
    tail = float(np.min(line_gap[traj.xi >= 1]))
    rows.append(quantity_row("line_gap_min", "trajectory", tail))
    late = line_gap[traj.xi >= 10]
    if len(late) > 1:
        rows.append(
            quantity_row(
                "line_gap_increasing", "trajectory", float(np.min(np.diff(late)))
            )
        )

    if params.p == params.q:
        check = hardt_simon.check_subsolution(traj, float(config_.get("eps", 0.01)))
        rows.append(
            quantity_row(
                "subsolution_crossing_xi",
                "dominated" if check.satisfied else "violated",
                check.crossing_xi,
            )
        )

        window = (xi_max / 100, xi_max)
        direct = hardt_simon.extract_b(traj, window)
        shifted = hardt_simon.extract_b(traj, (window[0] / 2, window[1] / 2))
        rows.append(fit_row(direct))
        rows.append(
            quantity_row(
                "b_window_drift",
                direct.method_tag,
                abs(shifted.b - direct.b) / abs(direct.b),
            )
        )

    profile = hardt_simon.profile_from_w(traj)
    rows.append(fit_row(hardt_simon.graph_expansion_fit(profile)))

    return Output(rows=rows)


def do_spectrum(config_: RunConfig) -> Output:
    params = config_.params
    count = int(config_.get("count", 20))
    rows: List[Row] = []
    for entry in jacobi_spectrum.link_eigenvalues(params, count):
        root = jacobi_spectrum.indicial_roots(entry.eigenvalue, params)
        rows.append(
            {
                "mode": "{},{}".format(*entry.mode),
                "laplace_eig": float(entry.laplace_eig),
                "lambda": float(entry.eigenvalue),
                "mu_plus": float(root.mu_plus),
                "mu_minus": float(root.mu_minus),
                "multiplicity": entry.multiplicity,
                "exact": root.exact,
            }
        )

    series: Dict[str, List[Row]] = {}
    # phi is a Jacobi field of C x R only over the Simons cone
    if params == ConeParams():
        r, y = np.meshgrid(np.geomspace(0.1, 1.0, 20), np.linspace(-1.0, 1.0, 21))
        check = jacobi_spectrum.verify_phi_jacobi(r, y, params)
        series["phi_jacobi"] = [{"max_scaled_residual": check.max_scaled_residual}]
    return Output(rows=rows, series=series)


def solve_links(
    config_: RunConfig, leaves: Optional[link_smoothing.Leaves] = None
) -> List[link_smoothing.SmoothedLink]:
    configs = [config_.glue_config(delta) for delta in config_.deltas()]
    return link_smoothing.solve_sweep(configs, leaves, workers=config_.workers)


def h_prime_of(link: link_smoothing.SmoothedLink) -> Optional[float]:
    if link.jacobian is None:
        return None
    return link_smoothing.build_phi_delta(link).h_prime


def moment_of(
    link: link_smoothing.SmoothedLink, leaves: link_smoothing.Leaves
) -> Optional[link_smoothing.MomentCheck]:
    # the moment asymptotics only hold for small delta
    if link.config is None or not 0 < abs(link.delta) <= MOMENT_DELTA_MAX:
        return None
    return link_smoothing.moment_check(link.config, leaves)


def do_smooth_link(config_: RunConfig) -> Output:
    leaves = link_smoothing.hardt_simon_leaves(config_.params)
    links = solve_links(config_, leaves)

    rows: List[Row] = []
    for link in links:
        moment = moment_of(link, leaves)
        rows.append(
            {
                "delta": link.delta,
                "h": link.h,
                "h_prime": h_prime_of(link),
                "residual": link.final_residual,
                "area": link_smoothing.area_excess(link.profile),
                "newton_iters": link.newton_iters,
                "integral_m_phi": None if moment is None else moment.integral,
                "moment_ratio": None if moment is None else moment.ratio,
            }
        )

    # the equator link has no neighbours to difference
    solved = [
        (link.config, row)
        for link, row in zip(links, rows)
        if link.config is not None and link.delta != 0
    ]
    series: Dict[str, List[Row]] = {}
    if config_.get("h_prime_check"):
        series["h_prime_check"] = [
            {
                "delta": cfg.delta,
                "h_prime": row["h_prime"],
                "h_prime_centered": float(link_smoothing.h_prime_centered(cfg, leaves)),
            }
            for cfg, row in solved
        ]
    if config_.get("alpha_sensitivity"):
        series["alpha_sensitivity"] = [
            {"delta": cfg.delta, "alpha": float(alpha), "h": float(h)}
            for cfg, _ in solved
            for alpha, h in link_smoothing.alpha_sensitivity(cfg, leaves).items()
        ]
    if config_.get("moment_check"):
        checks = [
            link_smoothing.moment_check(config_.glue_config(delta), leaves)
            for delta in MOMENT_DELTAS
        ]
        series["moment_check"] = [
            {
                "delta": check.delta,
                "integral_m_phi": check.integral,
                "constant": check.constant,
                "expected": check.expected,
                "r_glue": check.r_glue,
            }
            for check in checks
        ]

    return Output(rows=rows, series=series)


def do_log_cone(config_: RunConfig) -> Output:
    kappa = float(config_.get("kappa", 0.05))
    log_rho_cap = float(config_.get("lnrho_cap", log_perturbation.LOG_RHO_CAP))
    cone_constant = log_perturbation.radial_log_constant()

    n_t = int(config_.get("n_t", 41))
    refine = bool(config_.get("refine"))

    rows: List[Row] = []
    for link in solve_links(config_):
        surface = log_perturbation.build_T_delta(link, kappa, log_rho_cap, n_t=n_t)
        fine: Optional[float] = None
        order: Optional[float] = None
        if refine and link.delta != 0:
            refinement = log_perturbation.cancellation_refinement(
                link, kappa, log_rho_cap, n_t
            )
            fine, order = refinement.fine, refinement.order
        monotonicity = log_perturbation.monotonicity_integrand(surface)
        rows.append(
            {
                "delta": link.delta,
                "kappa": kappa,
                "lnrho_cap": log_rho_cap,
                "h": surface.h,
                "c_log": surface.c_log,
                "c_log_cone": cone_constant.value,
                "c_log_matches": cone_constant.matches,
                "cancellation_residual": surface.cancellation_residual,
                "cancellation_defect": surface.cancellation_defect,
                "cancellation_defect_fine": fine,
                "cancellation_order": order,
                "f_corr_norm": surface.f_corr_norm,
                "residual": surface.residual,
                "iterations": surface.iterations,
                "monotonicity_integral": monotonicity.integral,
                "monotonicity_ratio": monotonicity.ratio,
            }
        )
    return Output(rows=rows)


def do_barriers(config_: RunConfig) -> Output:
    which = config_.get("which", "X")
    profile = config_.y_profile()
    params = config_.params

    if which == "X":
        barrier = barriers_distance.build_barrier_X(
            profile,
            float(config_.get("eps", 1e-6)),
            params=params,
            C_f=float(config_.get("C_f", 10.0)),
        )
        delta = None
    else:
        delta = float(config_.get("delta"))
        eps = config_.get("eps")
        barrier = barriers_distance.build_graph_barrier_G(
            profile,
            delta,
            beta=float(config_.get("beta", barriers_distance.DEFAULT_BETA)),
            eps=None if eps is None else float(eps),
            params=params,
        )

    summary = barrier.summary()
    worst_y, worst_r = summary["worst_point"]
    row = {
        "which": which,
        "eps": barrier.eps,
        "delta": delta,
        "min_margin": summary["min_margin"],
        "valid": summary["valid"],
        "margin_constant": summary["margin_constant"],
        "refined_margin": summary.get("refined_margin"),
        "bound_constant": summary.get("bound_constant"),
        "worst_y": worst_y,
        "worst_r": worst_r,
    }

    laws = barriers_distance.foliation_laws(
        params=params,
        beta=float(config_.get("beta", barriers_distance.DEFAULT_BETA)),
    )
    series: Dict[str, List[Row]] = {
        "foliation_laws": [
            {"law": law.law, "passed": bool(law.passed), "value": float(law.value)}
            for law in laws
        ]
    }
    return Output(rows=[row], series=series)


def do_three_annulus(config_: RunConfig) -> Output:
    options = {
        key: int(config_.get(key))
        for key in ("trials", "convexity_trials", "linf_trials", "n_modes")
        if key in config_
    }
    suite = annulus_dynamics.run_property_suite(
        config_.params,
        seed=config_.seed,
        rho0=float(config_.get("rho0", annulus_dynamics.RHO0)),
        workers=config_.workers,
        **options,
    )
    return Output(rows=[suite.summary()])


def do_report(config_: RunConfig) -> Output:
    tables = [results.load_table(path) for path in config_.tables()]
    return report.build_report(tables)


HANDLERS: Dict[str, Handler] = {
    "hardt-simon": do_hardt_simon,
    "spectrum": do_spectrum,
    "smooth-link": do_smooth_link,
    "log-cone": do_log_cone,
    "barriers": do_barriers,
    "three-annulus": do_three_annulus,
    "report": do_report,
}


class ConelabException(Exception):
    """Run could not be dispatched"""
