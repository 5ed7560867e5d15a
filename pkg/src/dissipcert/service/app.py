"""FastAPI application exposing the certification toolbox over HTTP.

Every endpoint takes the problem-file text inline, so clients need not share
a filesystem with the server.  Handlers are synchronous on purpose: the work
is CPU-bound and runs on the framework's worker threads.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from .. import expr as ex
from .. import lq as lqmod
from .. import ocp as ocpmod
from .. import verifier
from ..equilibrium import (KKTError, find_global_equilibrium,
                           lq_scalar_closed_form)
from ..model import (LQStructure, ProblemFormatError, WeightVector,
                     extract_lq, load_problem)
from . import schemas as sc


def _load(problem_text):
    try:
        return load_problem(problem_text)
    except (ProblemFormatError, ex.ExprError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err


def _weights(problem, mu, weights=None):
    try:
        w = WeightVector(tuple(weights)) if weights is not None \
            else WeightVector.pair(mu)
        if len(w) != problem.k:
            raise ValueError("this problem has %d costs; provide %d weights"
                             % (problem.k, problem.k))
        return w
    except ValueError as err:
        raise HTTPException(status_code=400, detail=str(err)) from err


def create_app():
    app = FastAPI(title="dissipcert", version=__version__,
                  description="Strict-dissipativity certificates for "
                              "weighted-sum optimal control problems")

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/problem/summary", response_model=sc.ProblemSummary)
    def problem_summary(req: sc.ProblemRequest):
        problem = _load(req.problem_text)
        lq = extract_lq(problem)
        is_lq = isinstance(lq, LQStructure)
        return sc.ProblemSummary(
            n=problem.n, m=problem.m, k=problem.k, bounded=problem.bounded,
            lq=is_lq, lq_reason=None if is_lq else lq.reason)

    @app.post("/equilibrium", response_model=sc.EquilibriumResponse)
    def equilibrium(req: sc.EquilibriumRequest):
        problem = _load(req.problem_text)
        w = _weights(problem, req.mu, req.weights)
        try:
            sol = find_global_equilibrium(problem, w)
        except (KKTError, ex.ExprDomainError) as err:
            raise HTTPException(status_code=422, detail=str(err)) from err
        gap = None
        lq = extract_lq(problem)
        if isinstance(lq, LQStructure) and problem.n == 1 and problem.m == 1:
            cf = lq_scalar_closed_form(lq, w)
            gap = float(max(abs(cf.x_e[0] - sol.x_e[0]),
                            abs(cf.u_e[0] - sol.u_e[0]),
                            abs(cf.nu[0] - sol.nu[0])))
        return sc.EquilibriumResponse(
            x=list(sol.x_e), u=list(sol.u_e), nu=list(sol.nu),
            kkt_residual=sol.kkt_residual, cost_value=sol.cost_value,
            regular=sol.regular, sosc=sol.sosc, interior=sol.interior,
            tied=[list(np.concatenate([x, u])) for x, u in sol.tied],
            closed_form_gap=gap)

    @app.post("/certify", response_model=sc.CertifyResponse)
    def certify(req: sc.CertifyRequest):
        problem = _load(req.problem_text)
        if (req.mu is None) == (req.grid is None):
            raise HTTPException(status_code=400,
                                detail="provide exactly one of mu or grid")
        if problem.k != 2:
            raise HTTPException(status_code=400,
                                detail="certification endpoints handle two-cost "
                                       "problems; use the library for more costs")
        bound = None
        if req.lower_bound is not None:
            try:
                bound = ex.parse_expression(req.lower_bound, problem.n, problem.m)
            except ex.ExprSyntaxError as err:
                raise HTTPException(status_code=400, detail=str(err)) from err
        try:
            if req.mu is not None:
                certs = [verifier.certify(
                    problem, _weights(problem, req.mu), lower_bound=bound,
                    grid_per_dim=req.samples_grid, n_random=req.samples_random,
                    seed=req.seed)]
            else:
                _, certs = verifier.certify_grid(
                    problem, req.grid, lower_bound=bound,
                    grid_per_dim=req.samples_grid, n_random=req.samples_random,
                    seed=req.seed, threads=req.threads)
        except (KKTError, ex.ExprDomainError) as err:
            raise HTTPException(status_code=422, detail=str(err)) from err
        return sc.CertifyResponse(
            certificates=[sc.CertificateModel(**c.to_report()) for c in certs])

    @app.post("/sweep", response_model=sc.SweepResponse)
    def sweep(req: sc.SweepRequest):
        problem = _load(req.problem_text)
        if problem.k != 2:
            raise HTTPException(status_code=400,
                                detail="the weight sweep is defined for two costs")
        try:
            res = verifier.continuity_scan(problem, req.grid,
                                           jump_threshold=req.jump_threshold,
                                           seed=req.seed)
        except (KKTError, ex.ExprDomainError, ValueError) as err:
            raise HTTPException(status_code=422, detail=str(err)) from err
        records = []
        for r in res.records:
            records.append(sc.SweepRecordModel(
                mu=r.mu,
                x=None if r.x_e is None else list(r.x_e),
                u=None if r.u_e is None else list(r.u_e),
                nu=None if r.nu is None else list(r.nu),
                lam_tilde=None if r.lam_tilde is None else list(r.lam_tilde),
                min_rotated_hess_eig=None if np.isnan(r.min_rotated_hess_eig)
                else float(r.min_rotated_hess_eig),
                status=r.status, detail=r.detail, failed=r.failed))
        return sc.SweepResponse(
            threshold=res.threshold,
            records=records,
            jumps=[sc.JumpModel(mu_lo=j.mu_lo, mu_hi=j.mu_hi, size=j.size)
                   for j in res.jumps])

    @app.post("/lq", response_model=sc.LqResponse)
    def lq_analysis(req: sc.LqRequest):
        problem = _load(req.problem_text)
        lq = extract_lq(problem)
        if not isinstance(lq, LQStructure):
            return sc.LqResponse(lq=False, reason=lq.reason)
        lmis = []
        for i in range(lq.k):
            sol = lqmod.solve_lmi(lq.A, lq.Q[i], require_psd=req.require_psd)
            lmis.append(sc.LmiModel(cost_index=i + 1, P=sol.P.tolist(),
                                    margin=sol.margin, feasible=sol.feasible,
                                    psd_P=sol.psd_P))
        nu_rep = None
        if problem.n == 1 and problem.m == 1 and lq.k == 2:
            rep = lqmod.check_nu_linearity(lq, grid_size=req.grid)
            nu_rep = sc.NuLinearityModel(
                max_deviation=rep.max_deviation, argmax_mu=rep.argmax_mu,
                nu_1=rep.nu_endpoints[0], nu_2=rep.nu_endpoints[1],
                condition_a_eq_1=rep.condition_a_eq_1,
                condition_qr=rep.condition_qr)
        return sc.LqResponse(lq=True, A=lq.A.tolist(), B=lq.B.tolist(),
                             lmi=lmis, nu_linearity=nu_rep)

    @app.post("/pareto", response_model=sc.ParetoResponse)
    def pareto(req: sc.ParetoRequest):
        problem = _load(req.problem_text)
        if problem.k != 2:
            raise HTTPException(status_code=400,
                                detail="the sweep traces two objectives")
        if len(req.x0) != problem.n:
            raise HTTPException(status_code=400, detail="x0 has wrong dimension")
        try:
            front, per_weight = ocpmod.pareto_sweep(
                problem, x0=req.x0, N=req.horizon, K=req.grid,
                restarts=req.restarts, seed=req.seed)
        except (ValueError, RuntimeError, ex.ExprDomainError) as err:
            raise HTTPException(status_code=422, detail=str(err)) from err
        front_models = [sc.ParetoPointModel(mu=p.mu, J1=p.J1, J2=p.J2,
                                            converged=p.trajectory.converged)
                        for p in front]
        weight_models = []
        for mu, traj, error in per_weight:
            if traj is None:
                weight_models.append(sc.ParetoWeightModel(mu=mu, error=error))
                continue
            model = sc.ParetoWeightModel(
                mu=mu, J1=traj.J_components[0], J2=traj.J_components[1],
                converged=traj.converged, proj_grad=traj.proj_grad)
            if req.include_trajectories:
                model.x = traj.x.tolist()
                model.u = traj.u.tolist()
            weight_models.append(model)
        return sc.ParetoResponse(front=front_models, per_weight=weight_models)

    return app


app = create_app()
