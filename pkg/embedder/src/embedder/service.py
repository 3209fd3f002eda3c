"""The /embed HTTP service.

POST /embed  {"texts": ["...", ...]} -> {"dim": D, "vectors": [[...], ...]}
GET  /health                         -> {"status": "ok", "model": ..., "dim": ...}

Vectors come back in request order, L2-normalized server-side so clients
can treat cosine as a plain dot product. The model loads at construction:
a broken model is a startup failure, never a partially working service.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .model import DEFAULT_MODEL, load_model

DEFAULT_MAX_BATCH = 256


class EmbedRequest(BaseModel):
    texts: list[str]


def create_app(model_name: str = DEFAULT_MODEL,
               max_batch: int = DEFAULT_MAX_BATCH) -> FastAPI:
    model = load_model(model_name)
    app = FastAPI(title="embedder", version=__version__)
    app.state.model = model
    app.state.max_batch = max_batch

    @app.get("/health")
    def health():
        return {"status": "ok", "model": model.name, "dim": model.dim}

    @app.post("/embed")
    def embed(request: EmbedRequest):
        texts = request.texts
        if not texts:
            raise HTTPException(status_code=422,
                                detail="texts must contain at least one entry")
        if len(texts) > app.state.max_batch:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(texts)} exceeds the configured "
                       f"maximum of {app.state.max_batch}")
        vectors = model.encode(texts)
        return {"dim": model.dim, "vectors": vectors.tolist()}

    return app
