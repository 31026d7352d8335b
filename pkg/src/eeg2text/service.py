"""HTTP decode service over a frozen runtime.

Endpoints: GET /health, POST /decode (one portable-format sentence record),
POST /decode-file (a whole portable dataset as a multipart upload). Every
response carries the artifact version header. Training never runs here.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fastapi import FastAPI, Request, Response, UploadFile
from fastapi.responses import JSONResponse

from . import __version__
from .brainmod import UnknownSubjectError
from .dataio import DatasetFormatError, load_dataset, loads_sentence_record
from .pipeline import Runtime, response_json
from .refine import RefineError

VERSION_HEADER = "x-artifact-version"


def create_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="eeg2text decode service", version=__version__)

    @app.middleware("http")
    async def stamp_version(request: Request, call_next):
        response = await call_next(request)
        response.headers[VERSION_HEADER] = __version__
        return response

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_checksum": runtime.checksum,
            "version": __version__,
        }

    def _decode_one(record: dict) -> Response:
        try:
            subject_id, sentence = loads_sentence_record(record, context="request body")
        except DatasetFormatError as exc:
            return JSONResponse(status_code=400, content={"violations": [str(exc)]})
        violations = runtime.validate_record(sentence)
        if violations:
            return JSONResponse(status_code=400, content={"violations": violations})
        try:
            decoded = runtime.decode_record(sentence, subject_id)
        except UnknownSubjectError as exc:
            return JSONResponse(
                status_code=404, content={"detail": f"unknown subject: {exc}"}
            )
        except RefineError as exc:
            return JSONResponse(
                status_code=502, content={"detail": f"refine backend failed: {exc}"}
            )
        return Response(content=response_json(decoded), media_type="application/json")

    @app.post("/decode")
    async def decode(request: Request):
        try:
            record = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            return JSONResponse(status_code=400, content={"violations": [f"unreadable body: {exc}"]})
        if not isinstance(record, dict):
            return JSONResponse(
                status_code=400, content={"violations": ["body must be one sentence record"]}
            )
        return _decode_one(record)

    @app.post("/decode-file")
    async def decode_file(file: UploadFile):
        data = await file.read()
        with tempfile.NamedTemporaryFile(suffix=".ndjson", delete=False) as fh:
            fh.write(data)
            tmp = Path(fh.name)
        try:
            try:
                manifest = load_dataset(tmp)
            except DatasetFormatError as exc:
                return JSONResponse(status_code=400, content={"violations": [str(exc)]})
            records = []
            try:
                for sid, sentence in manifest.iter_records():
                    violations = runtime.validate_record(sentence, manifest.sampling_rate)
                    if violations:
                        return JSONResponse(status_code=400, content={"violations": violations})
                    decoded = runtime.decode_record(sentence, sid)
                    records.append(
                        {
                            "subject_id": sid,
                            "content": sentence.content,
                            "raw_text": decoded.raw_text,
                            "refined_text": decoded.refined_text,
                            "refine_source": decoded.refine_source,
                            "logprob": decoded.logprob,
                        }
                    )
            except UnknownSubjectError as exc:
                return JSONResponse(
                    status_code=404, content={"detail": f"unknown subject: {exc}"}
                )
            except RefineError as exc:
                return JSONResponse(
                    status_code=502, content={"detail": f"refine backend failed: {exc}"}
                )
            return {"records": records}
        finally:
            tmp.unlink(missing_ok=True)

    return app
