import functools
import inspect
import logging
import math

import click
import numpy as np
import pandas as pd

from ._version import __version__
from .blowup import (
    BubbleParams,
    CapacityProblem,
    TaylorData,
    bubble_energy,
    bubble_energy_asymptotic,
    bubble_energy_closed,
    bubble_mass,
    bubble_mass_closed,
    capacity_oracle,
    capacity_solve,
    criterion_conformal,
    criterion_main2,
    eps2_coefficient,
    lambda_map,
    make_testfn_params,
    testfn_mass_expansion,
)
from .geometry import KINDS, SPHERE, TORUS, Field, make_model, s3_moment
from .greenfn import (
    expansion_fit,
    green_conformal_check,
    green_function,
    green_truncation_estimate,
    torus_s0_ewald,
)
from .paneitz import coercivity_constant, multiplier_table, q_field, random_field
from .utils import (
    CommaSeparatedFloats,
    expand_grid,
    get_config,
    ordered_map,
    parse_sweep_config,
    render,
    save_output,
    timestamp,
)
from .variational import adams_check, blowup_diagnostics, eps_ladder, minimize_II_eps

logger = logging.getLogger(__name__)


class ContractError(click.ClickException):
    """A violated precondition, reported on one line with exit code 2."""

    exit_code = 2


kind_option = click.option(
    "--kind",
    type=click.Choice(KINDS),
    default=SPHERE,
    show_default=True,
    help="Model background: the unit flat torus T⁴ or the round S⁴ (zonal fields).",
)
resolution_option = click.option(
    "--resolution",
    type=int,
    default=32,
    show_default=True,
    help="""Grid points per axis on the torus, maximal spectral degree ``L_max`` on
    the sphere.""",
)
seed_option = click.option(
    "--seed", type=int, default=None, help="Seed for random fields and starts."
)
qt_option = click.option(
    "--qt",
    type=float,
    default=None,
    help="""Constant value of the prescribed function ``Q̃``. Defaults to the
    background Q-curvature (3 on the sphere, 8π² on the torus).""",
)


def output_options(func):
    """``--format``, ``--output`` and ``--reproducible``, shared by every subcommand."""
    func = click.option(
        "--reproducible",
        is_flag=True,
        default=False,
        help="Omit the timestamp so identical runs produce identical documents.",
    )(func)
    func = click.option(
        "--output",
        type=str,
        default=None,
        help="""Output file, or ``-``/unset for standard output. Relative paths are
        placed in ``paneitz-lab.output-directory`` when that is set (environment
        variable ``DASK_PANEITZ_LAB__OUTPUT_DIRECTORY``). Existing files are never
        overwritten; a dated suffix is appended instead.""",
    )(func)
    func = click.option(
        "--format",
        "fmt",
        type=click.Choice(["json", "csv"]),
        default="json",
        show_default=True,
        help="Output document format.",
    )(func)
    return func


def contract_errors(func):
    """Map ``ValueError``/``TypeError`` to a single-line exit-code-2 diagnostic."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ValueError, TypeError) as e:
            raise ContractError(str(e)) from e

    return wrapper


def emit(result, table=None, parameters=None, failed=False):
    """Write the output document of the current command.

    The document echoes the resolved parameters next to the result; under
    ``--reproducible`` the timestamp is left out. ``failed`` exits with
    code 1 after writing.
    """
    ctx = click.get_current_context()
    fmt = ctx.params["fmt"]
    params = {
        k: v
        for k, v in ctx.params.items()
        if k not in ("fmt", "output", "reproducible")
    }
    params.update(parameters or {})
    document = {
        "command": ctx.info_name,
        "parameters": params,
        "result": result,
        "version": __version__,
    }
    if not ctx.params["reproducible"]:
        document["timestamp"] = timestamp()
    save_output(render(document, table, fmt), ctx.params["output"])
    if failed:
        ctx.exit(1)


def _model(kind, resolution, nodes=None):
    return make_model(kind, resolution, nodes=nodes)


def _qt(model, qt):
    if qt is None:
        return float(q_field(model.background).q_field.data.flat[0])
    return qt


def _point(kind, values):
    if values is None:
        return (0.0, 0.0, 0.0, 0.0) if kind == TORUS else 0.0
    values = np.asarray(values, dtype=float)
    if kind == SPHERE:
        if values.size != 1:
            raise ValueError("sphere points are given by one colatitude (0 or π)")
        return float(values[0])
    if values.size != 4:
        raise ValueError("torus points need 4 comma-separated coordinates")
    return tuple(values)


@click.group
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="WARNING",
    show_default=True,
    help="Logging level of the library loggers (written to standard error).",
)
@click.version_option(__version__, prog_name="paneitz-lab")
def lab(log_level):
    """Numerical laboratory for the critical Q-curvature problem in dimension four."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        force=True,
    )
    logging.captureWarnings(True)


@lab.command()
@kind_option
@resolution_option
@click.option(
    "--nodes", type=int, default=None, help="Sphere colatitude nodes (default 2·L_max+2)."
)
@output_options
@contract_errors
def model(kind, resolution, nodes, fmt, output, reproducible):
    """Describe a model background: volume, total Q-curvature, coercivity."""
    m = _model(kind, resolution, nodes)
    qdata = q_field(m)
    emit(
        {
            **m.to_dict(),
            "volume": m.volume,
            "spacing": m.spacing,
            "q_value": float(qdata.q_field.data.flat[0]),
            "k_total": qdata.k_total,
            "coercivity_constant": coercivity_constant(m),
        },
        parameters={"nodes": m.nodes if kind == SPHERE else None},
    )


@lab.command()
@kind_option
@resolution_option
@click.option(
    "--max-mode",
    type=int,
    default=None,
    help="""Largest degree (sphere) or largest ``max|k_i|`` (torus) to list.""",
)
@output_options
@contract_errors
def paneitz(kind, resolution, max_mode, fmt, output, reproducible):
    """Tabulate the Paneitz multipliers (mode, μ)."""
    table = multiplier_table(_model(kind, resolution), max_mode).to_frame()
    emit(table, table=table)


@lab.command()
@kind_option
@resolution_option
@click.option(
    "--point",
    type=CommaSeparatedFloats(sizes=(1, 4)),
    default=None,
    help="""Source point: 4 grid coordinates in ``[0, 1)`` on the torus, colatitude
    0 or π on the sphere. Defaults to the origin / north pole.""",
)
@click.option(
    "--window",
    type=CommaSeparatedFloats(sizes=(2,)),
    default=None,
    help="""Fit window ``r_min,r_max``; defaults to ``paneitz-lab.green``.""",
)
@click.option(
    "--log-term/--no-log-term",
    default=False,
    show_default=True,
    help="Fit the coefficient of ``log r`` instead of fixing it to -2.",
)
@click.option(
    "--truncation/--no-truncation",
    default=False,
    show_default=True,
    help="Also estimate the truncation error against half resolution.",
)
@click.option(
    "--conformal-seed",
    type=int,
    default=None,
    help="""Sphere only: also check the Green function under a random zonal conformal
    factor drawn with this seed.""",
)
@click.option(
    "--conformal-amplitude",
    type=float,
    default=0.1,
    show_default=True,
    help="Sobolev norm of the random conformal factor.",
)
@output_options
@contract_errors
def green(
    kind,
    resolution,
    point,
    window,
    log_term,
    truncation,
    conformal_seed,
    conformal_amplitude,
    fmt,
    output,
    reproducible,
):
    """Green function of P at a point and its local expansion."""
    m = _model(kind, resolution)
    p = _point(kind, point)
    G = green_function(m, p)
    fit = expansion_fit(m, G, p, window=window, log_term=log_term)
    result = {"expansion": fit, "mean": G.mean()}
    if kind == TORUS:
        result["S0_ewald"] = torus_s0_ewald()
    if truncation:
        result["truncation_estimate"] = green_truncation_estimate(m, p, window)
    if conformal_seed is not None:
        v = random_field(m, conformal_seed, band=3, amplitude=conformal_amplitude)
        result["conformal_check"] = green_conformal_check(m, v, p, window=window)
    emit(result, parameters={"point": p, "window": fit.window})


def minimize_report(kind, resolution, eps, qt=None, tol=None, max_iter=None, seed=None):
    """One minimization as a flat row (shared by ``minimize`` and ``sweep``)."""
    m = _model(kind, resolution)
    result = minimize_II_eps(
        m, _qt(m, qt), eps, tol=tol, max_iter=max_iter, seed=seed
    )
    return result.to_dict(), result


@lab.command()
@kind_option
@resolution_option
@click.option(
    "--eps",
    type=CommaSeparatedFloats(),
    required=True,
    help="""Regularization ``ε`` in ``(0, 8π²)``. Several comma-separated values run
    the ε ladder in the given order.""",
)
@qt_option
@click.option("--tol", type=float, default=None, help="Gradient sup-norm tolerance.")
@click.option("--max-iter", type=int, default=None, help="Iteration cap.")
@seed_option
@click.option(
    "--trace/--no-trace",
    default=False,
    show_default=True,
    help="Emit the iteration trace (iter, value, grad_norm, step) as the CSV table.",
)
@click.option(
    "--diagnostics/--no-diagnostics",
    default=False,
    show_default=True,
    help="Append blow-up diagnostics of the minimizer.",
)
@output_options
@contract_errors
def minimize(
    kind,
    resolution,
    eps,
    qt,
    tol,
    max_iter,
    seed,
    trace,
    diagnostics,
    fmt,
    output,
    reproducible,
):
    """Minimize II_ε by preconditioned descent."""
    m = _model(kind, resolution)
    resolved = {
        "eps": eps.tolist(),
        "qt": _qt(m, qt),
        "tol": get_config("minimize.tol", tol),
        "max_iter": get_config("minimize.max-iter", max_iter),
    }
    if len(eps) > 1:
        table = eps_ladder(
            m, resolved["qt"], eps.tolist(), tol=tol, max_iter=max_iter, seed=seed
        )
        emit(table, table=table, parameters=resolved, failed=not table["converged"].all())
        return

    result = minimize_II_eps(
        m,
        resolved["qt"],
        float(eps[0]),
        tol=tol,
        max_iter=max_iter,
        seed=seed,
        record_trace=trace,
    )
    document = result.to_dict()
    if diagnostics:
        document["diagnostics"] = blowup_diagnostics(m, result)
    emit(
        document,
        table=result.trace if trace else None,
        parameters=resolved,
        failed=not result.converged,
    )


@lab.command()
@kind_option
@resolution_option
@click.option("--samples", type=int, default=None, help="Number of random fields.")
@click.option("--band", type=int, default=None, help="Spectral band of the fields.")
@click.option("--seed", type=int, default=0, show_default=True, help="Base seed.")
@output_options
@contract_errors
def adams(kind, resolution, samples, band, seed, fmt, output, reproducible):
    """Empirical Adams-Fontana deficit over random fields and a bubble ladder."""
    m = _model(kind, resolution)
    report = adams_check(m, samples=samples, seed=seed, band=band)
    emit(
        report,
        table=report.ladder,
        parameters={
            "samples": report.samples,
            "band": get_config("adams.band", band),
            "ladder": get_config("adams.ladder"),
        },
    )


def bubble_report(lam=None, qp=None, L=math.inf):
    if lam is None:
        lam = BubbleParams.from_q(3.0 if qp is None else qp).lam
    mass = bubble_mass(lam, L)
    out = {"lam": lam, "L": L, "mass": mass, "mass_closed": bubble_mass_closed(lam, L)}
    if qp is not None:
        out["q_mass"] = qp * mass
    if math.isfinite(L):
        out["energy"] = bubble_energy(lam, L)
        out["energy_closed"] = bubble_energy_closed(lam, L)
        out["energy_asymptotic"] = bubble_energy_asymptotic(lam, L)
    return out


@lab.command()
@click.option(
    "--lambda", "lam", type=float, default=None, help="Concentration λ of the bubble."
)
@click.option(
    "--qp",
    type=float,
    default=None,
    help="Q̃(p); sets λ = √(3Q̃(p))/12 when ``--lambda`` is not given.",
)
@click.option(
    "--L", "L", type=float, default=math.inf, help="Cut-off radius, ``inf`` allowed."
)
@output_options
@contract_errors
def bubble(lam, qp, L, fmt, output, reproducible):
    """Mass and energy of the standard bubble on B_L."""
    result = bubble_report(lam, qp, L)
    emit(result, parameters={"lam": result["lam"]})


def capacity_report(r, R, P1=0.0, P2=0.0, Q1=0.0, Q2=0.0, oracle_n=None):
    problem = CapacityProblem(r, R, P1, P2, Q1, Q2)
    out = capacity_solve(problem)._asdict()
    if oracle_n is not None:
        out["oracle_energy"] = capacity_oracle(problem, oracle_n)
    return out


@lab.command()
@click.option("--r", "r", type=float, required=True, help="Inner radius.")
@click.option("--R", "R", type=float, required=True, help="Outer radius.")
@click.option("--P1", "P1", type=float, default=0.0, show_default=True, help="Φ at r.")
@click.option("--P2", "P2", type=float, default=0.0, show_default=True, help="Φ at R.")
@click.option("--Q1", "Q1", type=float, default=0.0, show_default=True, help="∂Φ/∂r at r.")
@click.option("--Q2", "Q2", type=float, default=0.0, show_default=True, help="∂Φ/∂r at R.")
@click.option(
    "--oracle-n",
    type=int,
    default=None,
    help="Also run the finite-difference oracle with this many intervals.",
)
@output_options
@contract_errors
def capacity(r, R, P1, P2, Q1, Q2, oracle_n, fmt, output, reproducible):
    """Minimal biharmonic energy on an annulus with clamped boundary data."""
    emit(capacity_report(r, R, P1, P2, Q1, Q2, oracle_n))


def testfn_report(
    eps, L=None, lam=None, qp=3.0, S0=0.0, a=None, a_sym=None, b=None, b_sym=None, delta=1.0
):
    def diag(values):
        return np.diag(np.zeros(4) if values is None else np.asarray(values, dtype=float))

    taylor = TaylorData(
        S0=S0,
        a=np.zeros(4) if a is None else np.asarray(a, dtype=float),
        a_sym=diag(a_sym),
        Qp=qp,
        b=np.zeros(4) if b is None else np.asarray(b, dtype=float),
        b_sym=diag(b_sym),
    )
    params = make_testfn_params(lam=lam, eps=eps, L=L, taylor=taylor)
    expansion = testfn_mass_expansion(params, delta=delta)
    return {
        "eps": params.eps,
        "L": params.L,
        "numeric": expansion.numeric,
        "predicted": expansion.predicted,
        "gap": expansion.gap,
        "leading": expansion.leading,
        "eps2_coefficient": eps2_coefficient(params),
        "mu": params.mu,
        "C_eps": params.C_eps,
    }


vector_option = functools.partial(
    click.option, type=CommaSeparatedFloats(sizes=(4,)), default=None
)


@lab.command()
@click.option(
    "--eps", type=CommaSeparatedFloats(), required=True, help="One or more ε values."
)
@click.option(
    "--L",
    "L",
    type=CommaSeparatedFloats(),
    default=None,
    help="One or more cut-offs L; default log(1/ε)/√ε.",
)
@click.option("--lambda", "lam", type=float, default=None, help="Bubble concentration.")
@click.option("--qp", type=float, default=3.0, show_default=True, help="Q̃(p).")
@click.option("--S0", "S0", type=float, default=0.0, show_default=True, help="S(p).")
@vector_option("--a", help="Gradient of S at p.")
@vector_option("--a-sym", help="Hessian diagonal of S at p.")
@vector_option("--b", help="Gradient of Q̃ at p.")
@vector_option("--b-sym", help="Hessian diagonal of Q̃ at p.")
@click.option(
    "--delta", type=float, default=1.0, show_default=True, help="Outer chart radius."
)
@output_options
@contract_errors
def testfn(eps, L, lam, qp, S0, a, a_sym, b, b_sym, delta, fmt, output, reproducible):
    """Mass expansion of the glued test function (eps, L, numeric, predicted, gap)."""
    cut_offs = [None] if L is None else L.tolist()
    combos = [(e, c) for e in eps.tolist() for c in cut_offs]
    rows = ordered_map(
        lambda ec: testfn_report(ec[0], ec[1], lam, qp, S0, a, a_sym, b, b_sym, delta),
        combos,
    )
    table = pd.DataFrame(rows)
    emit(table, table=table[["eps", "L", "numeric", "predicted", "gap"]])


@lab.command(name="lambda")
@kind_option
@resolution_option
@qt_option
@click.option(
    "--qt-tilt",
    type=float,
    default=0.0,
    show_default=True,
    help="""Adds ``tilt·cos θ`` (sphere) or ``tilt·cos 2πx₁`` (torus) to ``Q̃``.""",
)
@click.option(
    "--point",
    "points",
    type=CommaSeparatedFloats(sizes=(1, 4)),
    multiple=True,
    help="""Point to evaluate (repeatable). Defaults to both poles (sphere) or the
    origin and the centre (torus).""",
)
@output_options
@contract_errors
def lambda_(kind, resolution, qt, qt_tilt, points, fmt, output, reproducible):
    """Threshold Λ_g(Q̃, p) over points and its minimizer."""
    m = _model(kind, resolution)
    base = _qt(m, qt)
    if kind == SPHERE:
        Qt = Field.from_function(m, lambda theta: base + qt_tilt * np.cos(theta))
        default_points = [0.0, math.pi]
    else:
        Qt = Field.from_function(m, lambda *x: base + qt_tilt * np.cos(2 * math.pi * x[0]))
        default_points = [(0.0, 0.0, 0.0, 0.0), (0.5, 0.5, 0.5, 0.5)]
    points = [_point(kind, p) for p in points] or default_points
    report = lambda_map(m, Qt, points)
    emit(report, table=report.to_frame(), parameters={"points": points, "qt": base})


@lab.command()
@click.option(
    "--form",
    type=click.Choice(["main", "conformal"]),
    default="main",
    show_default=True,
    help="""``main``: Q̃(ΔS + 4|∇S|² − R/18) + 2∇S·∇Q̃ + ΔQ̃/4. ``conformal``: the
    Taylor-coefficient form in conformally flat charts.""",
)
@click.option("--qp", type=float, default=3.0, show_default=True, help="Q̃(p').")
@vector_option("--grad-s", help="∇S (main form).")
@click.option("--lap-s", type=float, default=0.0, show_default=True, help="ΔS (main form).")
@vector_option("--grad-q", help="∇Q̃ (main form).")
@click.option("--lap-q", type=float, default=0.0, show_default=True, help="ΔQ̃ (main form).")
@click.option("--R-scalar", "R_scalar", type=float, default=0.0, show_default=True)
@vector_option("--a", help="a_i (conformal form).")
@vector_option("--a-sym", help="a_ii (conformal form).")
@vector_option("--c", help="c_i (conformal form).")
@vector_option("--c-sym", help="c_ii (conformal form).")
@vector_option("--b", help="b_i (conformal form).")
@vector_option("--b-sym", help="b_ii (conformal form).")
@output_options
@contract_errors
def criterion(
    form,
    qp,
    grad_s,
    lap_s,
    grad_q,
    lap_q,
    R_scalar,
    a,
    a_sym,
    c,
    c_sym,
    b,
    b_sym,
    fmt,
    output,
    reproducible,
):
    """Evaluate an existence criterion at p'."""
    emit(
        criterion_report(
            form, qp, grad_s, lap_s, grad_q, lap_q, R_scalar, a, a_sym, c, c_sym, b, b_sym
        )
    )


def criterion_report(
    form,
    qp=3.0,
    grad_s=None,
    lap_s=0.0,
    grad_q=None,
    lap_q=0.0,
    R_scalar=0.0,
    a=None,
    a_sym=None,
    c=None,
    c_sym=None,
    b=None,
    b_sym=None,
):
    def vec(values):
        return np.zeros(4) if values is None else np.asarray(values, dtype=float)

    if form == "main":
        result = criterion_main2(qp, vec(grad_s), lap_s, vec(grad_q), lap_q, R_scalar)
    elif form == "conformal":
        result = criterion_conformal(
            vec(a), vec(a_sym), vec(c), vec(c_sym), vec(b), vec(b_sym), qp
        )
    else:
        raise ValueError(f"form must be 'main' or 'conformal', got {form!r}")
    return result._asdict()


DEFAULT_MOMENTS = [(0, 0), (0, 1), (0, 0, 0, 0), (0, 0, 1, 1), (0, 1, 2, 3)]


@lab.command()
@click.option(
    "--index",
    "indices",
    type=CommaSeparatedFloats(sizes=(1, 2, 3, 4)),
    multiple=True,
    help="Multi-index of axes 0..3 (repeatable), e.g. ``0,0,1,1``.",
)
@output_options
@contract_errors
def moments(indices, fmt, output, reproducible):
    """Normalized moments of the unit 3-sphere."""
    indices = [tuple(int(i) for i in idx) for idx in indices] or DEFAULT_MOMENTS
    table = pd.DataFrame(
        {
            "multi_index": [" ".join(str(i) for i in idx) for idx in indices],
            "value": [s3_moment(idx) for idx in indices],
        }
    )
    emit(table, table=table, parameters={"indices": indices})


SWEEP_TARGETS = {
    "bubble": bubble_report,
    "capacity": capacity_report,
    "testfn": testfn_report,
    "criterion": criterion_report,
    "minimize": lambda **kw: minimize_report(**kw)[0],
}
SWEEP_SIGNATURES = {
    "bubble": bubble_report,
    "capacity": capacity_report,
    "testfn": testfn_report,
    "criterion": criterion_report,
    "minimize": minimize_report,
}
# Config keys that are not valid Python identifiers
SWEEP_ALIASES = {"lambda": "lam", "max-iter": "max_iter", "oracle-n": "oracle_n"}


def sweep_rows(grid):
    """Run the grid of a parsed sweep file, one result row per combination."""
    grid = dict(grid)
    command = grid.pop("command", None)
    if command is None or len(command) != 1:
        raise ValueError("sweep files need exactly one 'command = <name>' entry")
    command = command[0]
    if command not in SWEEP_TARGETS:
        raise ValueError(
            f"unknown sweep command {command!r}; expected one of {sorted(SWEEP_TARGETS)}"
        )
    grid = {SWEEP_ALIASES.get(k, k.replace("-", "_")): v for k, v in grid.items()}
    accepted = set(inspect.signature(SWEEP_SIGNATURES[command]).parameters)
    unknown = sorted(set(grid) - accepted)
    if unknown:
        raise ValueError(f"unknown keys for sweep command {command!r}: {unknown}")
    combos = expand_grid(grid)
    target = SWEEP_TARGETS[command]
    results = ordered_map(lambda kw: target(**kw), combos)
    return command, pd.DataFrame([{**kw, **res} for kw, res in zip(combos, results)])


@lab.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@output_options
@contract_errors
def sweep(config, fmt, output, reproducible):
    """Run a parameter grid from a flat ``key = v1, v2, ...`` file.

    The file names the subcommand with ``command = <name>`` (bubble,
    capacity, testfn, criterion or minimize); every other key is a scalar
    parameter of it with one or more comma-separated values. One row is
    written per combination.
    """
    command, table = sweep_rows(parse_sweep_config(config))
    failed = "converged" in table and not table["converged"].all()
    emit(table, table=table, parameters={"command": command}, failed=bool(failed))