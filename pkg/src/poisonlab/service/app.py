"""FastAPI application: one endpoint per pipeline stage.

Requests run synchronously in the worker — at desk scale a full trial is
minutes, and determinism is worth more than throughput here.
"""

from __future__ import annotations

import dataclasses
import math
import time

from fastapi import FastAPI, HTTPException

from .. import data, defense, harness, methods
from ..errors import ConfigError
from . import schemas


def _fail(exc: Exception) -> HTTPException:
    if isinstance(exc, FileNotFoundError):
        return HTTPException(status_code=404, detail=str(exc))
    return HTTPException(status_code=422, detail=str(exc))


def create_app() -> FastAPI:
    from .. import __version__

    app = FastAPI(title="poisonlab", version=__version__,
                  description="Desk-scale unlabeled-data poisoning lab")

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
        start = time.monotonic()
        try:
            bundle = data.make_dataset(req.dataset.kind, req.dataset.n_labeled,
                                       req.dataset.n_unlabeled, req.dataset.n_test,
                                       req.dataset.seed, req.dataset.params)
            result = methods.train(bundle.train_view(), req.trainer.to_config())
        except (ConfigError, ValueError) as exc:
            raise _fail(exc) from exc
        accs = result.metrics["test_acc"]
        return schemas.TrainResponse(
            method=req.trainer.method,
            epochs=req.trainer.epochs,
            final_test_acc=accs[-1],
            best_test_acc=max(accs),
            final_sup_loss=result.metrics["sup_loss"][-1],
            final_mask_rate=result.metrics["mask_rate"][-1],
            wall_time_s=time.monotonic() - start,
        )

    @app.post("/attack", response_model=schemas.AttackResponse)
    def attack(req: schemas.AttackRequest) -> schemas.AttackResponse:
        try:
            bundle = data.make_dataset(req.dataset.kind, req.dataset.n_labeled,
                                       req.dataset.n_unlabeled, req.dataset.n_test,
                                       req.dataset.seed, req.dataset.params)
            trainer = dataclasses.replace(req.trainer.to_config(),
                                          seed=req.dataset.seed)
            plan = harness.plan_attack(bundle, req.attack.to_config(), trainer)
        except (ConfigError, ValueError) as exc:
            raise _fail(exc) from exc
        if req.out_path is not None:
            data.save_poison_set(plan.points, req.out_path, bundle.dim,
                                 bundle.n_classes, seed=req.attack.attack_seed)
        return schemas.AttackResponse(
            n_points=len(plan.points), n_main=plan.n_main,
            y_target=plan.y_target, true_class=plan.true_class,
            target_test_index=plan.target_test_index, density=plan.density,
            vetted=plan.vetted, planner_rehearsals=plan.n_rehearsals,
            alphas=plan.alphas.tolist(), out_path=req.out_path)

    @app.post("/trial", response_model=schemas.TrialResponse)
    def trial(req: schemas.TrialModel) -> schemas.TrialResponse:
        try:
            result = harness.run_trial(req.to_config())
        except (ConfigError, ValueError) as exc:
            raise _fail(exc) from exc
        return schemas.TrialResponse(summary=result.summary_dict(),
                                     wall_time_s=result.wall_time,
                                     outdir=req.outdir)

    @app.post("/matrix", response_model=schemas.MatrixResponse)
    def matrix(req: schemas.MatrixRequest) -> schemas.MatrixResponse:
        try:
            grid = [t.to_config() for t in req.trials]
            result = harness.run_matrix(grid, parallelism=req.parallelism)
        except (ConfigError, ValueError) as exc:
            raise _fail(exc) from exc
        summaries = [res.summary_dict() if not isinstance(res, str)
                     else {"error": res} for res in result.results]
        return schemas.MatrixResponse(table=result.table(), cells=result.cells,
                                      results=summaries)

    @app.post("/defend", response_model=schemas.DefendResponse)
    def defend(req: schemas.DefendRequest) -> schemas.DefendResponse:
        try:
            bundle = data.load_bundle(req.dataset_path)
            merged = bundle.unlabeled_x
            trace = (methods.PredictionTrace.load(req.trace_path)
                     if req.trace_path is not None else None)
            reports: dict[str, schemas.DefenseEntry] = {}
            for name in req.defenses:
                if name == "influence":
                    if trace is None:
                        raise ConfigError(
                            "influence defense needs trace_path")
                    rep = defense.influence_report(trace, k=req.influence_k)
                    flagged = rep.flagged
                    threshold = (None if math.isnan(rep.threshold)
                                 else rep.threshold)
                elif name == "collinear":
                    flagged = defense.detect_collinear(merged)
                    threshold = None
                elif name == "cluster":
                    flagged = defense.agglomerative_filter(merged).removed_indices
                    threshold = None
                else:
                    raise ConfigError(f"unknown defense {name!r}; "
                                      f"known: {harness.DEFENSE_NAMES}")
                entry = schemas.DefenseEntry(flagged=flagged.tolist(),
                                             threshold=threshold)
                if req.planted is not None:
                    tpr, fpr = defense.detection_rates(flagged, req.planted,
                                                       len(merged))
                    entry.tpr, entry.fpr = tpr, fpr
                reports[name] = entry
        except (ConfigError, ValueError, FileNotFoundError) as exc:
            raise _fail(exc) from exc
        return schemas.DefendResponse(n_unlabeled=len(merged), reports=reports)

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
        try:
            agg = harness.summarize_runs(req.run_dirs)
        except (ConfigError, ValueError, FileNotFoundError) as exc:
            raise _fail(exc) from exc
        return schemas.ReportResponse(table=agg.table(), csv=agg.to_csv(),
                                      rows=agg.rows)

    return app


__all__ = ["create_app"]
