"""``seqparadox`` command-line interface.

Every subcommand accepts ``--config FILE``: a flat ``key = value`` file whose
keys are flag names (``flat-prior = true`` for switches). Flags given on the
command line take precedence over the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .bayes import (
    DesignPrior,
    ThetaPrior,
    conjugate_posterior,
    hier_density,
    hier_posterior,
    hier_posterior_mean,
    hier_posterior_mode,
    sample_grid,
    sample_mcmc,
    summarize_posterior,
)
from .calibration import (
    UniverseConfig,
    bias_mc_study,
    greedy_miscalibration_demo,
    sbc_replicates,
    selection_shift_study,
    uniformity_report,
)
from .errors import SeqParadoxError
from .frequentist import bias_corrected_estimate, bias_report, mle
from .stats_core import RngStream
from .trial import (
    DesignConfig,
    format_trial_csv,
    read_trial_csv,
    simulate_batch,
    simulate_trial,
    summarize,
    table1,
)

# Worked-example settings used by `reproduce`.
EXAMPLE = dict(n=5, sigma=2.0, psi=1.0, mu=1.0, tau=2.0, a=-0.5, b=1.0, omega=0.1)
REPRODUCE_SEED = 20240601
MCMC_DRAWS = 200_000


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def to_json(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=False) + "\n"


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue()


def write_atomic(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(args: argparse.Namespace, report: dict, csv_rows=None, human: str | None = None) -> None:
    fmt = args.output or ("json" if args.out else None)
    if fmt == "csv":
        if csv_rows is None:
            csv_rows = [["key", "value"], *_flatten(report)]
        text = to_csv(csv_rows)
    elif fmt == "json" or human is None:
        text = to_json(report)
    else:
        text = human
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _flatten(d: dict, prefix: str = "") -> list[list]:
    rows = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            rows.extend([f"{key}.{i}", x] for i, x in enumerate(v))
        else:
            rows.append([key, v])
    return rows


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------


def u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _design_flags(p: argparse.ArgumentParser, **defaults) -> None:
    g = p.add_argument_group("design")
    g.add_argument("--n", type=positive_int, default=defaults.get("n"), help="per-stage sample size")
    g.add_argument("--sigma", type=float, default=defaults.get("sigma"), help="outcome standard deviation")
    g.add_argument("--psi", type=float, default=defaults.get("psi"), help="interim stopping threshold")
    g.add_argument("--investigator", choices=("A", "B"), default="B")


def _prior_flags(p: argparse.ArgumentParser, **defaults) -> None:
    g = p.add_argument_group("priors")
    g.add_argument("--mu", type=float, default=defaults.get("mu"), help="prior mean of the effect")
    g.add_argument("--tau", type=float, default=defaults.get("tau"), help="prior sd of the effect")
    g.add_argument("--flat-prior", action="store_true", help="improper flat prior on the effect")
    g.add_argument("--a", type=float, default=defaults.get("a"), help="threshold prior intercept")
    g.add_argument("--b", type=float, default=defaults.get("b"), help="threshold prior slope on the effect")
    g.add_argument("--omega", type=float, default=defaults.get("omega"), help="threshold prior noise sd")


def _common_flags(p: argparse.ArgumentParser, stochastic: bool, seed_default: int | None = None) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value file of flag defaults")
    p.add_argument("--output", choices=("json", "csv"), help="machine-readable output format")
    p.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    if stochastic:
        p.add_argument("--seed", type=u64, required=seed_default is None, default=seed_default)
        p.add_argument("--workers", type=positive_int, default=1)


def _design(args) -> DesignConfig:
    missing = [k for k in ("n", "sigma", "psi") if getattr(args, k) is None]
    if missing:
        raise UsageError("missing design flags: " + ", ".join("--" + m for m in missing))
    return DesignConfig(args.n, args.sigma, args.psi, args.investigator)


def _theta_prior(args) -> ThetaPrior:
    if args.flat_prior:
        return ThetaPrior(flat=True)
    if args.mu is None or args.tau is None:
        raise UsageError("give --mu and --tau, or --flat-prior")
    return ThetaPrior(args.mu, args.tau)


def _design_prior(args) -> DesignPrior | None:
    given = [getattr(args, k) is not None for k in ("a", "b", "omega")]
    if not any(given):
        return None
    if not all(given):
        raise UsageError("the threshold prior needs all of --a, --b and --omega")
    return DesignPrior(args.a, args.b, args.omega)


def _data(args):
    return read_trial_csv(args.data) if args.data else table1()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_reproduce(args) -> None:
    data = _data(args)
    s = summarize(data)
    design = _design(args)
    prior = _theta_prior(args)
    dp = _design_prior(args)
    dB, dA = design.with_investigator("B"), design.with_investigator("A")
    conj = conjugate_posterior(s, prior, design)
    postB = hier_posterior(s, prior, dB, dp)
    postA = hier_posterior(s, prior, dA, dp)
    chosen = postB if design.investigator == "B" else postA

    drawsB = sample_mcmc(postB, MCMC_DRAWS, RngStream(args.seed, 0))
    drawsA = sample_mcmc(postA, MCMC_DRAWS, RngStream(args.seed, 1))
    grid = np.linspace(-1.0, 3.5, 181)
    densB, densA = hier_density(grid, postB), hier_density(grid, postA)

    corrected = bias_corrected_estimate(s, dB) if s.x == 1 else None
    report = {
        "mle": mle(s),
        "bias_corrected": corrected,
        "conjugate_mean": conj.mean,
        "conjugate_sd": conj.sd,
        "investigator": design.investigator,
        "hierarchical_mean": hier_posterior_mean(chosen),
        "hierarchical_mode": hier_posterior_mode(chosen),
        "posterior_mean_A": hier_posterior_mean(postA),
        "posterior_mean_B": hier_posterior_mean(postB),
        "mcmc_mean_A": float(drawsA.mean()),
        "mcmc_mean_B": float(drawsB.mean()),
        "seed": args.seed,
        "density": {"theta": grid, "investigator_A": densA, "investigator_B": densB},
    }
    rows = [["theta", "density_A", "density_B"], *zip(grid, densA, densB)]
    inv = design.investigator
    lines = [
        ("MLE", report["mle"], 2),
        ("bias-corrected estimate", corrected, 1),
        ("conjugate posterior mean", conj.mean, 4),
        ("posterior mean, investigator A", report["posterior_mean_A"], 4),
        ("posterior mean, investigator B", report["posterior_mean_B"], 4),
        (f"hierarchical mean ({inv})", report["hierarchical_mean"], 4),
        (f"hierarchical mode ({inv})", report["hierarchical_mode"], 4),
        ("mean of MCMC draws, A", report["mcmc_mean_A"], 4),
        ("mean of MCMC draws, B", report["mcmc_mean_B"], 4),
    ]
    human = "".join(f"{label:<32} {'n/a' if v is None else f'{v:.{k}f}'}\n" for label, v, k in lines)
    emit(args, report, rows, human)


def cmd_simulate(args) -> None:
    design = _design(args)
    if args.theta is None:
        raise UsageError("--theta is required")
    if args.reps == 1:
        data = simulate_trial(design, args.theta, RngStream(args.seed, 0))
        s = summarize(data)
        report = {"y1": data.y1, "y2": data.y2, "x": data.x, "ybar1": s.ybar1, "ybar": s.ybar}
        text = format_trial_csv(data)
        if args.output == "json":
            emit(args, report)
        elif args.out:
            write_atomic(args.out, text)
        else:
            sys.stdout.write(text)
        return
    b = simulate_batch(design, args.theta, args.seed, np.arange(args.reps))
    rows = [["replicate", "ybar1", "ybar", "x"], *zip(range(args.reps), b.ybar1, b.ybar, b.x.tolist())]
    report = {"ybar1": b.ybar1, "ybar": b.ybar, "x": b.x}
    if args.output is None:
        args.output = "csv"
    emit(args, report, rows)


def cmd_estimate(args) -> None:
    s = summarize(_data(args))
    design = _design(args)
    theta_hat = mle(s)
    if design.investigator == "A":
        corrected = theta_hat
    else:
        corrected = bias_corrected_estimate(s, design) if s.x == 1 else None
    rep = bias_report(theta_hat, design)
    report = {
        "ybar1": s.ybar1,
        "x": s.x,
        "mle": theta_hat,
        "bias_corrected": corrected,
        "continuation_prob_at_mle": rep.continuation_prob,
        "marginal_mean_at_mle": rep.marginal_mean,
    }
    human = f"MLE {theta_hat:.2f}\nbias-corrected estimate {'n/a' if corrected is None else f'{corrected:.1f}'}\n"
    emit(args, report, human=human)


def cmd_posterior(args) -> None:
    s = summarize(_data(args))
    design = _design(args)
    post = hier_posterior(s, _theta_prior(args), design, _design_prior(args))
    draws = None
    if args.method in ("mcmc", "grid"):
        if args.seed is None:
            raise UsageError(f"--seed is required for --method {args.method}")
        rng = RngStream(args.seed, 0)
        draws = sample_mcmc(post, args.draws, rng) if args.method == "mcmc" else sample_grid(post, args.draws, rng)
    summ = summarize_posterior(post, args.method, draws)
    report = summ.to_dict()
    human = (
        f"posterior mean {summ.mean:.4f}\nposterior mode {summ.mode:.4f}\n"
        f"posterior sd   {summ.sd:.4f}\nmethod         {summ.method}\n"
    )
    emit(args, report, human=human)


def cmd_bias_study(args) -> None:
    design = _design(args)
    if args.theta is None:
        raise UsageError("--theta is required")
    study = bias_mc_study(args.theta, design, args.reps, args.seed, args.workers)
    z = study.z_scores()
    rows = [["quantity", "closed_form", "monte_carlo", "mc_se", "z"]]
    rows += [[k, cf, mc, se, z[k]] for k, (cf, mc, se) in study.comparisons().items()]
    emit(args, study.to_dict(), rows)


def _universe(args) -> UniverseConfig:
    return UniverseConfig(
        theta_prior=_theta_prior(args),
        design=_design(args),
        n_reps=args.reps,
        master_seed=args.seed,
        design_prior=_design_prior(args),
    )


def cmd_calibrate(args) -> None:
    cfg = _universe(args)
    if args.study == "selection-shift":
        emit(args, selection_shift_study(cfg, workers=args.workers).to_dict())
        return
    table = sbc_replicates(cfg, args.kind, args.condition_x, args.workers)
    report = uniformity_report(table.cdf_at_theta, table.n_drawn).to_dict()
    report["kind"] = args.kind
    report["condition_on_x"] = args.condition_x
    emit(args, report, list(table.csv_rows()))


def cmd_greedy_demo(args) -> None:
    demo = greedy_miscalibration_demo(
        args.n_total, args.alpha, args.beta, args.reps, args.seed, args.observed, args.workers
    )
    emit(args, demo.to_dict())


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqparadox", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="<subcommand>")

    def add(name: str, func, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, aliases=[name.replace("-", "_")] if "-" in name else [], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("reproduce", cmd_reproduce, "recompute the worked example")
    _design_flags(p, **EXAMPLE)
    _prior_flags(p, **EXAMPLE)
    p.add_argument("--data", help="Table-1-layout CSV (default: bundled example)")
    _common_flags(p, stochastic=True, seed_default=REPRODUCE_SEED)

    p = add("simulate", cmd_simulate, "simulate trials at a fixed effect")
    _design_flags(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--reps", type=positive_int, default=1)
    _common_flags(p, stochastic=True)

    p = add("estimate", cmd_estimate, "MLE and bias-corrected estimate")
    _design_flags(p)
    p.add_argument("--data")
    _common_flags(p, stochastic=False)

    p = add("posterior", cmd_posterior, "posterior summary for one investigator")
    _design_flags(p)
    _prior_flags(p)
    p.add_argument("--data")
    p.add_argument("--method", choices=("closed_form", "quadrature", "mcmc", "grid"), default="closed_form")
    p.add_argument("--draws", type=positive_int, default=MCMC_DRAWS)
    _common_flags(p, stochastic=False)
    p.add_argument("--seed", type=u64, help="required for sampling methods")

    p = add("bias-study", cmd_bias_study, "Monte Carlo check of the bias formulas")
    _design_flags(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--reps", type=positive_int, default=1_000_000)
    _common_flags(p, stochastic=True)

    p = add("calibrate", cmd_calibrate, "simulation-based calibration over the prior universe")
    _design_flags(p)
    _prior_flags(p)
    p.add_argument("--kind", choices=("conjugate", "hierarchical"), default="conjugate")
    p.add_argument("--condition-x", type=int, choices=(0, 1))
    p.add_argument("--study", choices=("sbc", "selection-shift"), default="sbc")
    p.add_argument("--reps", type=positive_int, default=2000)
    _common_flags(p, stochastic=True)

    p = add("greedy-demo", cmd_greedy_demo, "calibration of naive and full posteriors under the greedy design")
    p.add_argument("--n-total", type=positive_int, default=50, help="raw outcomes per trial")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--observed", action="store_true", help="also test the observed-data posterior")
    p.add_argument("--reps", type=positive_int, default=2000)
    _common_flags(p, stochastic=True)
    return parser


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def config_tokens(path: str | Path) -> list[str]:
    """Translate a ``key = value`` file into flag tokens."""
    tokens: list[str] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if flag in ("--flat-prior", "--observed"):
            if value.lower() in _TRUE:
                tokens.append(flag)
            elif value.lower() not in _FALSE:
                raise UsageError(f"{path}:{lineno}: {key} takes true/false")
        elif flag == "--config":
            raise UsageError(f"{path}:{lineno}: nested config files are not supported")
        else:
            tokens += [flag, value]
    return tokens


def _expand_config(argv: list[str]) -> list[str]:
    for i, tok in enumerate(argv):
        path = None
        if tok == "--config" and i + 1 < len(argv):
            path, rest = argv[i + 1], argv[:i] + argv[i + 2 :]
        elif tok.startswith("--config="):
            path, rest = tok.split("=", 1)[1], argv[:i] + argv[i + 1 :]
        if path is not None:
            # config tokens go right after the subcommand so later flags win
            head = next((j for j, t in enumerate(rest) if not t.startswith("-")), len(rest))
            return rest[: head + 1] + config_tokens(path) + rest[head + 1 :]
    return argv


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config(argv)
    except (UsageError, OSError) as exc:
        parser.error(str(exc))
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (SeqParadoxError, ValueError, OSError) as exc:
        print(f"seqparadox: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
