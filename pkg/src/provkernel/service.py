"""HTTP service over the library.

Every endpoint is a thin adapter: it parses the request, calls one library
function and returns that result rendered with :func:`provkernel.render.render`.
"""

from __future__ import annotations

import json
import logging
import os
import socket
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import Response

from . import capture, errors, query, reconstruct, validate
from .capture import ProvenanceStore
from .engine import execute
from .executors import DEFAULT_WHITELIST, resolve_executor
from .model import DataRef, Descriptions, ExecutionId, WorkflowSpec
from .opm import export_xml, graph_summary, import_xml, to_opm
from .render import render
from .storage import BackendConfig, StorageBackend, open_backend, parse_key_values

log = logging.getLogger(__name__)

CONFIG_ENV = "PROVKERNEL_CONFIG"
JSON = "application/json"
XML = "application/xml"


class BadRequest(errors.ProvenanceError):
    """Request body or query string is unusable."""


_STATUS: tuple[tuple[type[Exception], int], ...] = (
    (errors.ExecutorNotAllowed, 403),
    (errors.BackendUnavailable, 503),
    (errors.UnknownItem, 404),
    (errors.UnknownVersion, 404),
    (errors.UnknownNode, 404),
    (errors.UnknownExecution, 404),
    (errors.UnknownArtifact, 404),
    (errors.NotFound, 404),
    (errors.IllegalTransition, 409),
    (errors.AlreadyFinished, 409),
    (errors.StatusMismatch, 409),
    (errors.ExecutionOpen, 409),
    (errors.EmptyExecution, 409),
    (errors.ImmutableOverwrite, 409),
    (capture.ConcurrentModification, 409),
)


def status_for(exc: errors.ProvenanceError) -> int:
    for cls, code in _STATUS:
        if isinstance(exc, cls):
            return code
    return 400


def _json(obj: Any, status: int = 200) -> Response:
    return Response(content=render(obj), status_code=status, media_type=JSON)


async def _body(request: Request) -> dict[str, Any]:
    raw = await request.body()
    try:
        doc = json.loads(raw or b"{}")
    except ValueError as exc:
        raise BadRequest(f"body is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise BadRequest("body must be a JSON object")
    return doc


def _field(doc: dict[str, Any], name: str, kind: type | tuple[type, ...] = str) -> Any:
    if name not in doc:
        raise BadRequest(f"missing field {name!r}")
    value = doc[name]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise BadRequest(f"field {name!r} has the wrong type")
    return value


def _int(text: str | None, name: str) -> int:
    if text is None:
        raise BadRequest(f"missing query parameter {name!r}")
    try:
        return int(text)
    except ValueError:
        raise BadRequest(f"query parameter {name!r} must be an integer") from None


def _flag(text: str | None) -> bool:
    return (text or "").lower() in ("1", "true", "yes")


def parse_bindings(raw: Any) -> dict[str, DataRef]:
    """``{name: DataRef document}`` to DataRefs; the name comes from the key."""
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise BadRequest("bindings must be an object")
    try:
        return {name: DataRef.from_dict(doc, name) for name, doc in sorted(raw.items())}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise BadRequest(f"bad binding: {exc}") from None


def parse_spec(raw: Any) -> WorkflowSpec:
    if not isinstance(raw, dict):
        raise BadRequest("spec must be an object")
    return WorkflowSpec.from_dict(raw)


def create_app(store: ProvenanceStore, executors: Sequence[str] = DEFAULT_WHITELIST) -> FastAPI:
    app = FastAPI(title="provkernel", openapi_url=None, docs_url=None, redoc_url=None)
    whitelist = tuple(executors)

    @app.exception_handler(errors.ProvenanceError)
    async def _domain_error(_request: Request, exc: errors.ProvenanceError) -> Response:
        return _json(exc.to_dict(), status_for(exc))

    @app.get("/health")
    def health() -> Response:
        return _json({"status": "ok"})

    @app.post("/items")
    async def register(request: Request) -> Response:
        doc = await _body(request)
        spec = parse_spec(_field(doc, "spec", dict))
        try:
            descriptions = Descriptions.from_dict(doc.get("descriptions"))
        except (KeyError, TypeError, AttributeError) as exc:
            raise BadRequest(f"bad descriptions: {exc}") from None
        item_id = store.register_item(spec, descriptions, doc.get("properties") or {})
        return _json({"item_id": item_id})

    @app.post("/items/{item_id}/versions")
    async def new_version(item_id: str, request: Request) -> Response:
        doc = await _body(request)
        if "edits" in doc:
            edits = [reconstruct.Edit.from_dict(e) for e in _field(doc, "edits", list)]
            version = reconstruct.derive(store, item_id, _field(doc, "base_version", int), edits)
        else:
            spec = parse_spec(_field(doc, "spec", dict))
            version = store.record_spec_version(item_id, spec, _field(doc, "derived_from", int))
        return _json({"version": version})

    @app.post("/items/{item_id}/executions")
    async def run(item_id: str, request: Request) -> Response:
        doc = await _body(request)
        version = _field(doc, "version", int)
        executor = resolve_executor(_field(doc, "executor"), whitelist)
        bindings = parse_bindings(doc.get("bindings"))
        if doc.get("replay") or "scope" in doc or "source" in doc:
            spec = store.expanded_spec(item_id, version)
            exec_id = reconstruct.replay(
                store,
                item_id,
                version,
                executor,
                scope=doc.get("scope"),
                bindings={spec.head: bindings} if bindings else None,
                source=doc.get("source"),
            )
        else:
            exec_id = execute(store, item_id, version, executor, bindings)
        return _json(query.execution_summary(store, exec_id))

    @app.get("/items/{item_id}/pipeline")
    def pipeline(item_id: str, version: str | None = None) -> Response:
        return _json(query.get_pipeline(store, item_id, _int(version, "version")))

    @app.get("/items/{item_id}/subpipeline")
    def subpipeline(item_id: str, version: str | None = None, nodes: str = "") -> Response:
        wanted = [n for n in nodes.split(",") if n]
        return _json(query.get_subpipeline(store, item_id, _int(version, "version"), wanted))

    @app.get("/items/{item_id}/reconstruct")
    def rebuild(item_id: str, version: str | None = None) -> Response:
        spec, trace = reconstruct.reconstruct(store, item_id, _int(version, "version"))
        return _json({"spec": spec, "trace": trace})

    @app.get("/items/{item_id}/executions")
    def executions(item_id: str, include_open: str | None = None) -> Response:
        return _json(query.list_executions(store, item_id, _flag(include_open)))

    @app.get("/items/{item_id}/errors")
    def item_errors(item_id: str, execution: str | None = None) -> Response:
        return _json(query.get_errors(store, item_id, _exec_id(execution) if execution else None))

    @app.post("/annotations")
    async def annotate(request: Request) -> Response:
        doc = await _body(request)
        version = doc.get("version")
        if version is not None and (not isinstance(version, int) or isinstance(version, bool)):
            raise BadRequest("field 'version' has the wrong type")
        ann = store.annotate(
            _field(doc, "item_id"),
            _field(doc, "text"),
            author=str(doc.get("author") or ""),
            version=version,
            node=doc.get("node"),
        )
        return _json(ann)

    @app.get("/annotations")
    def annotations(q: str = "", item: str | None = None) -> Response:
        return _json(query.search_annotations(store, q, item))

    @app.get("/executions/{execution_id}/opm")
    def opm_export(execution_id: str) -> Response:
        return Response(content=export_xml(to_opm(store, _exec_id(execution_id))), media_type=XML)

    @app.post("/opm/import")
    async def opm_import(request: Request) -> Response:
        return _json(graph_summary(import_xml(await request.body())))

    @app.post("/validate/blueprint")
    async def v_blueprint(request: Request) -> Response:
        doc = await _body(request)
        spec = parse_spec(_field(doc, "spec", dict))
        blueprint = parse_spec(_field(doc, "blueprint", dict))
        return _json(validate.validate_blueprint(spec, blueprint))

    @app.post("/validate/offline")
    async def v_offline(request: Request) -> Response:
        doc = await _body(request)
        ref = validate.ReferenceDataset.from_dict(_field(doc, "reference", dict))
        return _json(validate.validate_offline(store, _exec_id(_field(doc, "execution")), ref))

    @app.post("/validate/online")
    async def v_online(request: Request) -> Response:
        doc = await _body(request)
        item_id = _field(doc, "item_id")
        version = _field(doc, "version", int)
        executor = resolve_executor(_field(doc, "executor"), whitelist)
        ref = validate.ReferenceDataset.from_dict(_field(doc, "reference", dict))
        bindings = parse_bindings(doc.get("bindings"))
        head = store.expanded_spec(item_id, version).head
        exec_id, report = validate.validate_online(
            store, item_id, version, executor, ref, bindings={head: bindings} if bindings else None
        )
        return _json({"execution_id": exec_id, "report": report})

    @app.get("/executions/{a}/compare/{b}")
    def compare(a: str, b: str) -> Response:
        return _json(query.compare_executions(store, _exec_id(a), _exec_id(b)))

    return app


def _exec_id(text: str) -> ExecutionId:
    try:
        return ExecutionId.parse(text)
    except (ValueError, TypeError):
        raise BadRequest(f"bad execution id {text!r}") from None


# ---------------------------------------------------------------------------
# Configuration and serving
# ---------------------------------------------------------------------------

_KEYS = {"listen", "backend", "root", "executors"}


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    storage: BackendConfig = field(default_factory=BackendConfig)
    executors: tuple[str, ...] = DEFAULT_WHITELIST

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> ServiceConfig:
        unknown = sorted(set(values) - _KEYS)
        if unknown:
            raise errors.BadConfig(f"unknown config keys: {','.join(unknown)}")
        host, port = parse_listen(values.get("listen", "127.0.0.1:8080"))
        storage = BackendConfig.from_mapping({k: v for k, v in values.items() if k in ("backend", "root")})
        raw = values.get("executors")
        executors = DEFAULT_WHITELIST if raw is None else tuple(p.strip() for p in raw.split(",") if p.strip())
        return cls(host, port, storage, executors)

    @classmethod
    def from_file(cls, path: str | os.PathLike[str]) -> ServiceConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise errors.BadConfig(f"cannot read config file {path}: {exc}") from exc
        return cls.from_mapping(parse_key_values(text))


def parse_listen(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise errors.BadConfig(f"listen must be host:port, got {text!r}")
    try:
        number = int(port)
    except ValueError:
        raise errors.BadConfig(f"listen port must be an integer, got {port!r}") from None
    if not 0 <= number <= 65535:
        raise errors.BadConfig(f"listen port out of range: {number}")
    return host, number


def load_config(path: str | os.PathLike[str] | None = None) -> ServiceConfig:
    """Read ``path``, else the file named by ``PROVKERNEL_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    return ServiceConfig.from_file(path) if path else ServiceConfig()


def _check_port(host: str, port: int) -> None:
    with socket.socket(socket.AF_INET6 if ":" in host else socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            raise errors.AddressInUse(f"cannot listen on {host}:{port}: {exc}") from None


def serve(
    config: ServiceConfig,
    *,
    backend_factory: Callable[[BackendConfig], StorageBackend] = open_backend,
) -> None:
    """Run until SIGINT/SIGTERM; uvicorn handles graceful shutdown."""
    _check_port(config.host, config.port)
    backend = backend_factory(config.storage)
    try:
        app = create_app(ProvenanceStore(backend), config.executors)
        log.info("serving on %s:%d with %s backend", config.host, config.port, config.storage.backend)
        uvicorn.Server(uvicorn.Config(app, host=config.host, port=config.port, log_level="warning")).run()
    finally:
        backend.close()
