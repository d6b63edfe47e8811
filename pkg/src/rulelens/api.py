"""JSON-over-HTTP facade for the steering console: explain, cluster
browsing, steering mutations, metrics, and atom search."""

from __future__ import annotations

import hashlib
import threading
import time
import uuid

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .data import DataError, Instance, tokenize
from .explain import (
    Explainer,
    ExplainError,
    SteeringSession,
    cluster_explanations,
    reset_steering,
    steer_exclude,
)

SESSION_HEADER = "X-Session-Id"
DEFAULT_SESSION_TTL = 30 * 60.0


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def model_digest(model) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.parameters().items()):
        h.update(name.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()


class _SessionRegistry:
    """In-memory steering sessions with idle expiry."""

    def __init__(self, explainer: Explainer, ttl: float):
        self.explainer = explainer
        self.ttl = ttl
        self._lock = threading.Lock()
        self._sessions: dict[str, dict] = {}

    def _sweep(self, now: float) -> None:
        dead = [
            sid for sid, entry in self._sessions.items()
            if now - entry["last_access"] > self.ttl
        ]
        for sid in dead:
            del self._sessions[sid]

    def get_or_create(self, session_id: str | None) -> tuple[str, dict]:
        now = time.monotonic()
        with self._lock:
            self._sweep(now)
            sid = session_id or uuid.uuid4().hex
            entry = self._sessions.get(sid)
            if entry is None:
                entry = {
                    "session": SteeringSession(self.explainer),
                    "version": 0,
                    "lock": threading.Lock(),
                    "last_access": now,
                }
                self._sessions[sid] = entry
            entry["last_access"] = now
            return sid, entry

    def peek(self, session_id: str | None) -> dict | None:
        if session_id is None:
            return None
        now = time.monotonic()
        with self._lock:
            self._sweep(now)
            entry = self._sessions.get(session_id)
            if entry is not None:
                entry["last_access"] = now
            return entry


def _parse_ad_hoc_instance(explainer: Explainer, obj) -> Instance:
    dataset = explainer.dataset
    if dataset.kind == "tabular":
        if not isinstance(obj, dict):
            raise DataError("instance must be a JSON object of feature values")
        schema = dataset.schema
        raw = {}
        for feature, kind in schema.features:
            if feature not in obj:
                raise DataError(f"missing feature '{feature}'")
            value = obj[feature]
            if kind == "numeric":
                try:
                    raw[feature] = float(value)
                except (TypeError, ValueError):
                    raise DataError(
                        f"feature '{feature}' must be numeric, got {value!r}"
                    )
            else:
                if not isinstance(value, str):
                    raise DataError(f"feature '{feature}' must be a string")
                raw[feature] = value
        extra = set(obj) - {name for name, _ in schema.features}
        if extra:
            raise DataError(f"unknown features: {sorted(extra)}")
        return Instance(id=-1, raw=raw, label=0)
    if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
        raise DataError('text instance must be {"text": "..."}')
    vocab = set(dataset.schema.vocab)
    counts: dict[str, int] = {}
    for tok in tokenize(obj["text"]):
        if tok in vocab and tok not in dataset.schema.stopwords:
            counts[tok] = counts.get(tok, 0) + 1
    return Instance(id=-1, raw=counts, label=0, flagged=(len(counts) == 0))


def create_app(
    explainer: Explainer | None,
    metrics: dict | None = None,
    static_dir: str | None = None,
    session_ttl: float = DEFAULT_SESSION_TTL,
) -> FastAPI:
    app = FastAPI(title="rule explanations", openapi_url=None)
    registry = _SessionRegistry(explainer, session_ttl) if explainer else None
    digest = model_digest(explainer.model) if explainer else None
    cluster_cache: dict[tuple[str, int], dict] = {}
    cache_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        status = 400 if request.url.path == "/api/v1/explain" else 422
        return _error(status, "malformed_body", str(exc.errors()[:3]))

    def guard_loaded():
        if explainer is None:
            return _error(503, "model_not_loaded", "no trained model is loaded")
        return None

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": explainer is not None}

    @app.get("/api/v1/metrics")
    def get_metrics():
        unloaded = guard_loaded()
        if unloaded:
            return unloaded
        return metrics or {}

    @app.get("/api/v1/atoms")
    def search_atoms(query: str = "", limit: int = 50):
        unloaded = guard_loaded()
        if unloaded:
            return unloaded
        q = query.lower()
        matches = []
        for atom in explainer.pool.atoms:
            if atom.id == 0:
                continue
            if q in atom.display.lower():
                matches.append(
                    {
                        "id": atom.id,
                        "display": atom.display,
                        "kind": atom.kind,
                        "feature": atom.feature,
                        "coverage": atom.coverage,
                    }
                )
            if len(matches) >= max(1, min(limit, 200)):
                break
        return {"atoms": matches}

    @app.post("/api/v1/explain")
    def explain(body: dict, request: Request):
        unloaded = guard_loaded()
        if unloaded:
            return unloaded
        sid = request.headers.get(SESSION_HEADER)
        entry = registry.peek(sid)
        exclusions = frozenset()
        version = 0
        if entry is not None:
            exclusions = entry["session"].excluded
            version = entry["version"]

        if "instance_id" in body:
            iid = body["instance_id"]
            if not isinstance(iid, int) or isinstance(iid, bool):
                return _error(400, "bad_instance_id", "instance_id must be an integer")
            if not 0 <= iid < explainer.dataset.N:
                return _error(404, "unknown_instance", f"no instance with id {iid}")
            instance = explainer.dataset.instances[iid]
        elif "instance" in body:
            try:
                instance = _parse_ad_hoc_instance(explainer, body["instance"])
            except DataError as e:
                return _error(400, "bad_instance", str(e))
        else:
            return _error(
                400, "bad_request", 'body must contain "instance_id" or "instance"'
            )
        explanation = explainer.explain_instances([instance], exclusions=exclusions)[0]
        return {
            "explanation": explanation.to_json_obj(),
            "session_id": sid,
            "exclusions_version": version,
        }

    @app.get("/api/v1/clusters")
    def clusters(k: int = 10):
        unloaded = guard_loaded()
        if unloaded:
            return unloaded
        if k < 1:
            return _error(422, "bad_k", f"k must be >= 1, got {k}")
        key = (digest, k)
        with cache_lock:
            cached = cluster_cache.get(key)
        if cached is None:
            exps = explainer.baseline_explanations("train")
            try:
                report = cluster_explanations(
                    exps, explainer.pool, explainer.dataset, k=k
                )
            except ExplainError as e:
                return _error(422, "bad_k", str(e))
            cached = report.to_json_obj()
            with cache_lock:
                cluster_cache[key] = cached
        return cached

    @app.post("/api/v1/steer/exclude")
    def exclude(body: dict, request: Request):
        unloaded = guard_loaded()
        if unloaded:
            return unloaded
        atom_ids = body.get("atom_ids")
        if not isinstance(atom_ids, list) or not all(
            isinstance(i, int) and not isinstance(i, bool) for i in atom_ids
        ):
            return _error(422, "bad_atom_ids", "atom_ids must be a list of integers")
        sid, entry = registry.get_or_create(request.headers.get(SESSION_HEADER))
        with entry["lock"]:
            try:
                report = steer_exclude(entry["session"], atom_ids)
            except ExplainError as e:
                return _error(422, "bad_exclusion", str(e))
            entry["version"] += 1
            return {
                "session_id": sid,
                "exclusions_version": entry["version"],
                "report": report.to_json_obj(),
            }

    @app.post("/api/v1/steer/reset")
    def reset(request: Request):
        unloaded = guard_loaded()
        if unloaded:
            return unloaded
        sid, entry = registry.get_or_create(request.headers.get(SESSION_HEADER))
        with entry["lock"]:
            reset_steering(entry["session"])
            entry["version"] += 1
            return {
                "session_id": sid,
                "exclusions_version": entry["version"],
                "excluded": [],
            }

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
