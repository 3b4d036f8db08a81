"""``uev`` command-line harness.

Subcommands write CSV (tables) and JSON (reports) into ``--out``.  Every
file starts with a ``generated_at`` timestamp line followed by the fully
resolved configuration, so re-running a command reproduces the file
byte-for-byte apart from that first line.

Exit codes: 0 success, 2 invalid configuration, 3 inference failure,
4 consistency check failed under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from uev import consistency, discrete, gaussian
from uev.core import TypeI, TypeII, TypeIII, dispatch_infer
from uev.errors import (
    ConfigError,
    InconsistentEvidence,
    InferenceError,
    UncertainEvidenceError,
    UnsupportedCombination,
)
from uev.model import normal, sample_predictive
from uev.montecarlo import EngineConfig

log = logging.getLogger("uev")

METHODS = ("jeffrey", "virtual", "distributional")
PANELS = {
    "left": {"mu_x": 1.0, "sigma_x": 1.0, "sigma_yx": 0.3, "sigma_q": 1.0, "zeta": 2.0},
    "right": {"mu_x": 0.0, "sigma_x": 5.0, "sigma_yx": 0.5, "sigma_q": 0.5, "zeta": 2.0},
}
GRID_POINTS = 401
DRAWS_PER_METHOD = 4000

EXIT_OK, EXIT_CONFIG, EXIT_INFERENCE, EXIT_STRICT = 0, 2, 3, 4


# -- output helpers -----------------------------------------------------------

def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, config: dict, header: list, rows: list) -> None:
    buf = io.StringIO()
    buf.write(f"# generated_at: {_timestamp()}\n")
    buf.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(h)) for h in header])
    path.write_text(buf.getvalue())


def write_json(path: Path, config: dict, payload: dict) -> None:
    doc = {"generated_at": _timestamp(), "config": config, **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _methods(args) -> tuple:
    return METHODS if args.method == "all" else (args.method,)


def _method_seeds(seed: int, methods) -> dict:
    """Independent per-method seeds derived from the master seed."""
    state = np.random.SeedSequence(seed).generate_state(len(METHODS))
    return {m: int(state[METHODS.index(m)]) for m in methods}


def _run_methods(methods, fn) -> dict:
    """Run ``fn(method)`` for each method concurrently; results keyed by method."""
    def labelled(method):
        try:
            return fn(method)
        except UncertainEvidenceError as exc:
            raise type(exc)(f"[{method}] {exc}") from exc

    with ThreadPoolExecutor(max_workers=len(methods)) as pool:
        futures = {m: pool.submit(labelled, m) for m in methods}
        return {m: futures[m].result() for m in methods}


# -- gaussian -----------------------------------------------------------------

def _gaussian_params(args) -> dict:
    params = dict(PANELS[args.panel])
    for key in ("mu_x", "sigma_x", "sigma_yx", "sigma_q", "zeta"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    params["sigma_qzeta"] = args.sigma_qzeta if args.sigma_qzeta is not None else params["sigma_q"]
    for key in ("sigma_x", "sigma_yx", "sigma_q", "sigma_qzeta"):
        if not params[key] > 0:
            raise ConfigError(f"--{key.replace('_', '-')} must be > 0, got {params[key]}")
    return params


def _gaussian_evidence(method: str, p: dict):
    q = normal(p["zeta"], p["sigma_q"])
    if method == "jeffrey":
        return TypeI(q, zeta=p["zeta"])
    if method == "virtual":
        return TypeIII(gaussian.VirtualGaussianLikelihood(p["zeta"], p["sigma_qzeta"]),
                       zeta=p["zeta"])
    return TypeII(q)


def run_gaussian(args) -> int:
    p = _gaussian_params(args)
    chain = gaussian.GaussianChain.from_sds(p["mu_x"], p["sigma_x"], p["sigma_yx"])
    model = gaussian.chain_model(chain)
    methods = _methods(args)
    config = {"experiment": "gaussian", "panel": args.panel, **p, "method": args.method,
              "mc_check": args.mc_check, "n": args.n, "n_e": args.n_e, "seed": args.seed}
    analytic_engine = EngineConfig(engine="analytic-gaussian", seed=args.seed)
    posts = {m: dispatch_infer(model, _gaussian_evidence(m, p), analytic_engine).params
             for m in methods}

    mc = {}
    seeds = _method_seeds(args.seed, methods)
    if args.mc_check:
        def run(method):
            engine = EngineConfig(engine="snis", n=args.n, n_e=args.n_e, seed=seeds[method])
            return dispatch_infer(model, _gaussian_evidence(method, p), engine)
        mc = _run_methods(methods, run)

    rows = []
    for m in methods:
        row = {"method": m, "mean": posts[m].mean, "sd": posts[m].sd, "seed": args.seed}
        if m in mc:
            s = mc[m]
            row.update(ess=s.ess, n=s.samples.n, seed=seeds[m], mc_mean=float(s.mean()),
                       mc_sd=float(s.sd()), mc_se=float(s.standard_error()))
        rows.append(row)
    header = ["method", "mean", "sd", "ess", "n", "seed"]
    if mc:
        header += ["mc_mean", "mc_sd", "mc_se"]
    out = _out_dir(args)
    write_csv(out / "summary.csv", config, header, rows)

    kl_rows = []
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            kl_rows.append({"method_a": a, "method_b": b,
                            "kl_ab": gaussian.gaussian_kl(posts[a], posts[b]),
                            "kl_ba": gaussian.gaussian_kl(posts[b], posts[a])})
    if kl_rows:
        write_csv(out / "kl.csv", config, ["method_a", "method_b", "kl_ab", "kl_ba"], kl_rows)

    lo = min(g.mean - 5 * g.sd for g in posts.values())
    hi = max(g.mean + 5 * g.sd for g in posts.values())
    grid = np.linspace(lo, hi, GRID_POINTS)
    dens = {m: np.exp(posts[m].log_pdf(grid)) for m in methods}
    write_csv(out / "density_grid.csv", config, ["x", *methods],
              [{"x": float(x), **{m: float(dens[m][i]) for m in methods}}
               for i, x in enumerate(grid)])

    for row in rows:
        print(f"{row['method']:>15}  mean={row['mean']:.5f}  sd={row['sd']:.5f}")
    return EXIT_OK


# -- ball drop ----------------------------------------------------------------

def _ball_drop_check(model, sigma_q: float, m: int, k: int, seed: int):
    """Paired draws for the ball drop.

    No witness for ``p(zeta|t)`` is known here, so the base-model predictive
    of ``t`` stands in for the ``zeta`` marginal.
    """
    zeta_seed, y_seed, model_seed = np.random.SeedSequence(seed).spawn(3)
    _, zetas = sample_predictive(model, np.random.default_rng(zeta_seed), m)
    _, model_ts = sample_predictive(model, np.random.default_rng(model_seed), m * k)
    return consistency.paired_draws_given(zetas, lambda z: normal(z, sigma_q), k, y_seed,
                                          model_ts)


def run_ball_drop(args) -> int:
    for name in ("t_hat", "sigma_q", "sigma_model", "distance", "prior_mean"):
        if not getattr(args, name) > 0:
            raise ConfigError(f"--{name.replace('_', '-')} must be > 0")
    if args.prior_sd < 0:
        raise ConfigError("--prior-sd must be >= 0")
    model = gaussian.ball_drop_model(args.prior_mean, args.prior_sd, args.sigma_model,
                                     args.distance)
    methods = _methods(args)
    config = {"experiment": "ball-drop", "t_hat": args.t_hat, "sigma_q": args.sigma_q,
              "sigma_model": args.sigma_model, "distance": args.distance,
              "prior_mean": args.prior_mean, "prior_sd": args.prior_sd,
              "method": args.method, "engine": args.engine, "n": args.n, "n_e": args.n_e,
              "seed": args.seed, "g_true": gaussian.STANDARD_GRAVITY}
    seeds = _method_seeds(args.seed, methods)
    q = normal(args.t_hat, args.sigma_q)
    evidence = {"jeffrey": TypeI(q, zeta=args.t_hat),
                "virtual": TypeIII(gaussian.VirtualGaussianLikelihood(args.t_hat, args.sigma_q),
                                   zeta=args.t_hat),
                "distributional": TypeII(q)}

    def run(method):
        engine = EngineConfig(engine=args.engine, n=args.n, n_e=args.n_e, seed=seeds[method])
        return dispatch_infer(model, evidence[method], engine)

    posts = _run_methods(methods, run)
    rows, draw_rows = [], []
    for m in methods:
        s = posts[m].samples
        mean, sd = float(s.mean()), float(s.sd())
        rows.append({"method": m, "mean": mean, "sd": sd, "ess": s.ess, "n": s.n,
                     "seed": seeds[m], "se": float(s.standard_error()),
                     "z_true": (mean - gaussian.STANDARD_GRAVITY) / sd if sd > 0 else None})
        rng = np.random.default_rng(seeds[m])
        picks = rng.choice(s.n, size=DRAWS_PER_METHOD, p=s.weights)
        draw_rows += [{"method": m, "g": float(g)} for g in s.points[picks]]

    out = _out_dir(args)
    write_csv(out / "summary.csv", config,
              ["method", "mean", "sd", "ess", "n", "seed", "se", "z_true"], rows)
    write_csv(out / "draws.csv", config, ["method", "g"], draw_rows)
    predictive = gaussian.ball_drop_mean_time(args.prior_mean, args.distance)
    write_json(out / "summary.json", config, {
        "predictive_time_at_prior_mean": predictive,
        "posteriors": rows,
        "note": "draws.csv holds equally weighted resamples of the weighted posterior draws",
    })

    draws = _ball_drop_check(model, args.sigma_q, args.m, args.k, args.seed)
    report = consistency.consistency_report(draws, seed=args.seed, extras={
        "expected_cond_var_analytic": args.sigma_q ** 2,
        "zeta_source": "base-model predictive draws of t (proxy for the zeta marginal)"})
    write_json(out / "consistency.json", config, report.to_dict())

    print(f"predictive time at prior mean: {predictive:.4f} s")
    for row in rows:
        print(f"{row['method']:>15}  mean={row['mean']:.4f}  sd={row['sd']:.4f}  "
              f"z(9.81)={row['z_true']:.2f}  ess={row['ess']:.0f}")
    return EXIT_OK


# -- discrete -----------------------------------------------------------------

def _parse_vectors(values) -> list:
    vectors = []
    for text in values or ():
        try:
            vectors.append(np.array([float(v) for v in text.split(",")]))
        except ValueError:
            raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None
    return vectors


DEFAULT_QS = ("0.1,0.9", "0.9,0.1")


def run_discrete(args) -> int:
    table = discrete.JointTable.load(args.table) if args.table else discrete.running_example()
    qs = _parse_vectors(args.q if args.q or args.lam else DEFAULT_QS)
    lams = _parse_vectors(args.lam)
    config = {"experiment": "discrete", "table": table.to_dict(),
              "q": [q.tolist() for q in qs], "lambda": [lam.tolist() for lam in lams]}
    xs = [f"p(x={v})" for v in table.x_values]
    rows = [{"method": "prior", "evidence": "", **dict(zip(xs, table.p_x))}]
    for q in qs:
        label = ",".join(_fmt(v) for v in q)
        rows.append({"method": "jeffrey", "evidence": f"q={label}",
                     **dict(zip(xs, discrete.jeffrey_update_table(table, q)))})
        lam = discrete.ratios_from_q(table, q)
        rows.append({"method": "virtual-from-q", "evidence": f"q={label}",
                     **dict(zip(xs, discrete.virtual_update_table(table, lam)))})
    for lam in lams:
        label = ",".join(_fmt(v) for v in lam)
        rows.append({"method": "virtual", "evidence": f"lambda={label}",
                     **dict(zip(xs, discrete.virtual_update_table(table, lam)))})
    out = _out_dir(args)
    write_csv(out / "posteriors.csv", config, ["method", "evidence", *xs], rows)

    if len(qs) >= 2:
        qa, qb = qs[0], qs[1]
        la, lb = discrete.ratios_from_q(table, qa), discrete.ratios_from_q(table, qb)
        comm = [
            {"method": "jeffrey", "order": "A-then-B",
             **dict(zip(xs, discrete.sequential_jeffrey(table, [qa, qb])))},
            {"method": "jeffrey", "order": "B-then-A",
             **dict(zip(xs, discrete.sequential_jeffrey(table, [qb, qa])))},
            {"method": "virtual", "order": "A-then-B",
             **dict(zip(xs, discrete.sequential_virtual(table, [la, lb])))},
            {"method": "virtual", "order": "B-then-A",
             **dict(zip(xs, discrete.sequential_virtual(table, [lb, la])))},
        ]
        write_csv(out / "commutativity.csv", config, ["method", "order", *xs], comm)

    for row in rows:
        values = "  ".join(f"{x}={row[x]:.4f}" for x in xs)
        print(f"{row['method']:>15} {row['evidence']:<16} {values}")
    return EXIT_OK


# -- consistency --------------------------------------------------------------

def run_check_consistency(args) -> int:
    if args.experiment == "ball-drop":
        model = gaussian.ball_drop_model(args.prior_mean, args.prior_sd, args.sigma_model,
                                         args.distance)
        config = {"experiment": "check-consistency", "target": "ball-drop",
                  "sigma_q": args.ball_sigma_q, "sigma_model": args.sigma_model,
                  "distance": args.distance, "prior_mean": args.prior_mean,
                  "prior_sd": args.prior_sd, "m": args.m, "k": args.k, "seed": args.seed}
        draws = _ball_drop_check(model, args.ball_sigma_q, args.m, args.k, args.seed)
        extras = {"expected_cond_var_analytic": args.ball_sigma_q ** 2,
                  "zeta_source": "base-model predictive draws of t (proxy for the zeta marginal)"}
    else:
        p = _gaussian_params(args)
        chain = gaussian.GaussianChain.from_sds(p["mu_x"], p["sigma_x"], p["sigma_yx"])
        model = gaussian.chain_model(chain)
        config = {"experiment": "check-consistency", "target": "gaussian", "panel": args.panel,
                  **p, "m": args.m, "k": args.k, "seed": args.seed}
        verdict, equality = consistency.analytic_variance_check(chain.marginal_y_var,
                                                                p["sigma_q"] ** 2)
        extras = {"analytic": {"var_y": chain.marginal_y_var,
                               "expected_cond_var": p["sigma_q"] ** 2,
                               "verdict": verdict, "equality": equality}}
        try:
            w = gaussian.consistency_construction(chain, p["sigma_q"], p["zeta"])
            extras["witness"] = {"sigma_zeta_sq": w.sigma_zeta_sq,
                                 "mu_zeta_given_y": w.mu_zeta_given_y,
                                 "sigma_zeta_given_y_sq": w.sigma_zeta_given_y_sq,
                                 "evaluated_at_y": p["zeta"]}
            zeta_sampler = normal(p["mu_x"], np.sqrt(w.sigma_zeta_sq))
            extras["zeta_source"] = "witness marginal N(mu_x, sigma_zeta^2)"
        except InconsistentEvidence as exc:
            extras["witness_error"] = str(exc)
            zeta_sampler = normal(p["mu_x"], np.sqrt(chain.marginal_y_var))
            extras["zeta_source"] = "base-model predictive of y (no witness exists)"
        draws = consistency.sample_paired_draws(
            zeta_sampler, lambda z: normal(z, p["sigma_q"]), args.m, args.k, args.seed,
            model=model)
    report = consistency.consistency_report(draws, seed=args.seed, extras=extras)
    out = _out_dir(args)
    write_json(out / "consistency.json", config, report.to_dict())
    for c in report.scalar_checks:
        print(f"var[y]={c.var_y:.6g}  E[var[y|zeta]]={c.expected_cond_var:.6g}  "
              f"se={c.se_gap:.3g}  verdict={c.verdict}  equality={c.equality}")
    if "witness" in extras:
        print(f"witness: sigma_zeta^2={extras['witness']['sigma_zeta_sq']:.6g}")
    elif "witness_error" in extras:
        print(f"no witness: {extras['witness_error']}")
    print(f"overall verdict: {report.verdict}")
    if args.strict and report.verdict == "fail":
        return EXIT_STRICT
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _add_gaussian_params(p) -> None:
    p.add_argument("--panel", choices=sorted(PANELS), default="left",
                   help="preset parameters; explicit flags below override them")
    p.add_argument("--mu-x", type=float)
    p.add_argument("--sigma-x", type=float)
    p.add_argument("--sigma-yx", type=float)
    p.add_argument("--sigma-q", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--sigma-qzeta", type=float,
                   help="virtual-evidence noise sd (default: --sigma-q)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uev", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gaussian", help="conjugate Gaussian chain, closed forms")
    _add_gaussian_params(g)
    g.add_argument("--method", choices=(*METHODS, "all"), default="all")
    g.add_argument("--mc-check", action="store_true",
                   help="add Monte Carlo columns from the SNIS engines")
    g.add_argument("--n", type=_positive_int, default=100_000)
    g.add_argument("--n-e", type=_positive_int, default=256)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="uev-out")
    g.set_defaults(func=run_gaussian)

    b = sub.add_parser("ball-drop", help="infer g from an uncertain fall time")
    b.add_argument("--t-hat", type=float, default=0.43)
    b.add_argument("--sigma-q", type=float, default=0.03)
    b.add_argument("--sigma-model", type=float, default=0.005)
    b.add_argument("--distance", type=float, default=1.0)
    b.add_argument("--prior-mean", type=float, default=gaussian.STANDARD_GRAVITY)
    b.add_argument("--prior-sd", type=float, default=2.0)
    b.add_argument("--method", choices=(*METHODS, "all"), default="all")
    b.add_argument("--engine", choices=("snis", "mh"), default="snis")
    b.add_argument("--n", type=_positive_int, default=10_000)
    b.add_argument("--n-e", type=_positive_int, default=256)
    b.add_argument("--m", type=_positive_int, default=10_000,
                   help="outer draws for the consistency sidecar")
    b.add_argument("--k", type=_positive_int, default=100,
                   help="inner draws per outer draw for the consistency sidecar")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="uev-out")
    b.set_defaults(func=run_ball_drop)

    d = sub.add_parser("discrete", help="exact updates on a finite joint table")
    d.add_argument("--table", help="JointTable JSON (default: the binary running example)")
    d.add_argument("--q", action="append", help="comma-separated q(y); repeatable")
    d.add_argument("--lambda", dest="lam", action="append",
                   help="comma-separated likelihood ratios; repeatable")
    d.add_argument("--out", default="uev-out")
    d.set_defaults(func=run_discrete)

    c = sub.add_parser("check-consistency", help="necessary conditions for Jeffrey's rule")
    c.add_argument("--experiment", choices=("gaussian", "ball-drop"), default="gaussian")
    _add_gaussian_params(c)
    c.add_argument("--ball-sigma-q", type=float, default=0.03)
    c.add_argument("--sigma-model", type=float, default=0.005)
    c.add_argument("--distance", type=float, default=1.0)
    c.add_argument("--prior-mean", type=float, default=gaussian.STANDARD_GRAVITY)
    c.add_argument("--prior-sd", type=float, default=2.0)
    c.add_argument("--m", type=_positive_int, default=10_000)
    c.add_argument("--k", type=_positive_int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--strict", action="store_true", help="exit 4 when the verdict is fail")
    c.add_argument("--out", default="uev-out")
    c.set_defaults(func=run_check_consistency)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnsupportedCombination) as exc:
        print(f"uev: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InferenceError, UncertainEvidenceError) as exc:
        print(f"uev: inference failed: {exc}", file=sys.stderr)
        return EXIT_INFERENCE


if __name__ == "__main__":
    sys.exit(main())
