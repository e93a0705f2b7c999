"""Constrained linear-quadratic benchmark: optimality-gap curves vs the QP oracle.

Each cell of the (sigma2, tau, eta, seed) grid runs the sampled optimizer from
the zero mean and reports the gap between the rolled-out cost of the current
mean and the verified QP optimum.  The step size per cell is either the
classical eta = 1 or the rule eta = 1/L_sigma with L_sigma computed in closed
form from the lifted quadratic.  Optionally a projected finite-difference
baseline is run at an equal objective-evaluation budget.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List

import numpy as np

from .. import analysis, qp
from ..errors import AllInfeasibleError, ConvergenceError, InfeasibleProblemError
from ..optimizer import PgdConfig, run, step_size_rule
from ..problems import LqrSpec, double_integrator, lqr_problem
from ..sampling import GaussianPolicy
from .config import RunConfig
from .records import RunRecord


def _build_spec(problem_cfg: Dict[str, Any]) -> LqrSpec:
    base = double_integrator(horizon=int(problem_cfg.get("horizon", 10)))
    overrides = {k: v for k, v in problem_cfg.items() if k != "horizon"}
    if not overrides:
        return base
    import dataclasses

    return dataclasses.replace(base, **{k: np.asarray(v, dtype=float) for k, v in overrides.items()})


def _solve_oracle(lifted: qp.QpProblem) -> tuple[float, qp.QpSolution]:
    solution = qp.solve_verified(lifted)
    return solution.f_star + lifted.constant, solution


def _one_cell(
    spec: LqrSpec,
    lifted: qp.QpProblem,
    f_star_total: float,
    cfg: RunConfig,
    cell: Dict[str, Any],
    seed: int,
) -> RunRecord:
    t_start = time.perf_counter()
    problem = lqr_problem(spec)
    opt_cfg = cfg.section("optimizer")
    sigma2, tau = float(cell["sigma2"]), float(cell["tau"])
    smooth = analysis.l_sigma_quadratic(sigma2, lifted.q, tau)
    if cell["eta"] == "rule":
        eta, rule = step_size_rule(smooth.l_sigma), "one_over_l_sigma"
    else:
        eta, rule = float(cell["eta"]), "fixed"
    iterations = int(opt_cfg["iterations"])
    pgd = PgdConfig(
        eta=eta,
        k=iterations,
        n_samples=int(opt_cfg["n_samples"]),
        antithetic=bool(opt_cfg["antithetic"]),
        eps_stat=float(opt_cfg["eps_stat"]),
        max_retries=int(opt_cfg["max_retries"]),
    )
    policy = GaussianPolicy(np.zeros(problem.n_controls), sigma2, tau)
    record = RunRecord(
        experiment="lqr", cell=dict(cell), seed=seed, config_snapshot=cfg.snapshot()
    )
    try:
        final_policy, trace = run(problem, policy, pgd, seed)
    except AllInfeasibleError as err:
        record.flagged = True
        record.flag_reason = f"optimizer abort: {err}"
        record.summary = {"eta_resolved": eta, "rule": rule, "l_sigma": smooth.l_sigma}
        return record

    means = np.array([r.mean for r in trace.records] + [final_policy.mean])
    costs = problem.batch_objective(means)
    feasible = problem.batch_feasible(means)
    gaps = costs - f_star_total
    n = pgd.n_samples
    for r, gap in zip(trace.records, gaps[:-1]):
        record.rows.append(
            {
                "k": r.k,
                "gap": float(gap),
                "grad_norm_P": r.grad_norm_p,
                "ess": r.ess,
                "acceptance": r.acceptance,
                "best_cost": r.best_cost,
                "ms": r.ms,
            }
        )
        record.plot_rows.append(
            {"iteration": r.k, "evaluations": (r.k + 1) * n, "gap": float(gap)}
        )
    record.summary = {
        "f_star": f_star_total,
        "eta_resolved": eta,
        "rule": rule,
        "l_sigma": smooth.l_sigma,
        "l_sigma_method": smooth.method,
        "final_gap": float(gaps[-1]),
        "min_gap": float(gaps.min()),
        "final_cost": float(costs[-1]),
        "mean_acceptance": float(trace.column("acceptance").mean()),
        "infeasible_mean_iterations": [int(i) for i in np.nonzero(~feasible)[0]],
        "iterations": len(trace),
        "evaluations": len(trace) * n,
        "runtime_seconds": time.perf_counter() - t_start,
    }
    return record


def _fd_record(
    spec: LqrSpec, lifted: qp.QpProblem, f_star_total: float, cfg: RunConfig
) -> RunRecord:
    t_start = time.perf_counter()
    fd_cfg = cfg.section("fd")
    problem = lqr_problem(spec)
    budget = int(fd_cfg["budget_evals"])
    iters = budget // (problem.n_controls + 1)
    projector = qp.FeasibleSetProjector(lifted)
    record = RunRecord(
        experiment="lqr", cell={"method": "fd"}, seed=0, config_snapshot=cfg.snapshot()
    )
    try:
        trace = analysis.fd_baseline(
            problem,
            np.zeros(problem.n_controls),
            h=float(fd_cfg["h"]),
            alpha=float(fd_cfg["alpha"]),
            iters=iters,
            projector=projector,
        )
    except ConvergenceError as err:
        record.flagged = True
        record.flag_reason = f"projection failure: {err}"
        return record
    gaps = trace.costs - f_star_total
    per = trace.evals_per_iteration
    nan = float("nan")
    for k, gap in enumerate(gaps):
        record.rows.append(
            {
                "k": k,
                "gap": float(gap),
                "grad_norm_P": nan,
                "ess": nan,
                "acceptance": nan,
                "best_cost": float(trace.costs[k]),
                "ms": nan,
            }
        )
        record.plot_rows.append({"iteration": k, "evaluations": k * per, "gap": float(gap)})
    record.summary = {
        "f_star": f_star_total,
        "h": float(fd_cfg["h"]),
        "alpha": float(fd_cfg["alpha"]),
        "final_gap": float(gaps[-1]),
        "min_gap": float(gaps.min()),
        "iterations": iters,
        "evaluations": trace.total_evaluations,
        "runtime_seconds": time.perf_counter() - t_start,
    }
    return record


def run_lqr(cfg: RunConfig, max_workers: int = 4) -> List[RunRecord]:
    """All grid cells (concurrently) plus the optional FD baseline record.

    The QP oracle is solved once by two independent methods before any cell
    runs; an oracle failure flags every record (the CLI maps that to its
    oracle-failure exit code).
    """
    spec = _build_spec(cfg.section("problem"))
    lifted = qp.lift(spec)
    try:
        f_star_total, _ = _solve_oracle(lifted)
    except (ConvergenceError, InfeasibleProblemError) as err:
        bad = RunRecord(
            experiment="lqr",
            cell={"method": "oracle"},
            seed=0,
            config_snapshot=cfg.snapshot(),
            flagged=True,
            flag_reason=f"qp oracle failure: {err}",
        )
        return [bad]

    sampling_cfg = cfg.section("sampling")
    cells = [
        {"sigma2": float(s2), "tau": float(tau), "eta": eta}
        for s2 in cfg.grid("sigma2", [sampling_cfg["sigma2"]])
        for tau in cfg.grid("tau", [sampling_cfg["tau"]])
        for eta in cfg.grid("eta", [cfg.section("optimizer").get("eta", 1.0)])
    ]
    jobs = [(cell, seed) for cell in cells for seed in cfg.seeds]
    with ThreadPoolExecutor(max_workers=min(max_workers, len(jobs))) as pool:
        records = list(
            pool.map(
                lambda job: _one_cell(spec, lifted, f_star_total, cfg, job[0], job[1]), jobs
            )
        )
    if cfg.section("fd").get("enabled", False):
        records.append(_fd_record(spec, lifted, f_star_total, cfg))
    return records
