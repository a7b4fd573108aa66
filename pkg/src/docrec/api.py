"""HTTP surface over the service core (JSON over HTTP/1.1)."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse

from .service import NotFoundError, RecommenderService, ValidationError

_NO_CACHE = {
    "Cache-Control": "no-store, no-cache, must-revalidate",
    "Pragma": "no-cache",
    "Expires": "0",
}


def create_app(service: RecommenderService) -> FastAPI:
    app = FastAPI(title="docrec", docs_url=None, redoc_url=None)
    app.state.service = service

    @app.exception_handler(NotFoundError)
    async def _not_found(_: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"error": str(exc.args[0])})

    @app.exception_handler(ValidationError)
    async def _invalid(_: Request, exc: ValidationError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.get("/v1/documents/{external_id}/related")
    def related(external_id: str, count: Optional[int] = Query(default=None),
                user: Optional[str] = Query(default=None)):
        record = service.request_related(external_id, count=count, user_token=user)
        return {
            "set_id": record.set_id,
            "processing_time_ms": record.processing_time_ms,
            "fallback_used": record.fallback_used,
            "algorithm": {
                "sampled": record.sampled_fingerprint,
                "executed": record.executed_fingerprint,
            },
            "recommendations": [
                {
                    "rec_id": item.rec_id,
                    "external_id": service.store.get(item.doc_id).external_id,
                    "title": service.store.get(item.doc_id).title,
                    "rank": item.rank,
                    "relevance": item.relevance,
                }
                for item in record.items
            ],
        }

    @app.post("/v1/clicks/{rec_id}", status_code=204)
    def click(rec_id: str):
        service.record_click(rec_id)
        return Response(status_code=204)

    @app.get("/v1/clicks/{rec_id}/beacon", status_code=204)
    def click_beacon(rec_id: str):
        # image/beacon fallback: always acknowledged, never cached
        try:
            service.record_click(rec_id)
        except NotFoundError:
            pass
        return Response(status_code=204, headers=_NO_CACHE)

    @app.post("/v1/rendered/{set_id}", status_code=204)
    def rendered(set_id: str):
        service.record_render(set_id)
        return Response(status_code=204)

    @app.get("/v1/health")
    def health():
        return service.health()

    return app
