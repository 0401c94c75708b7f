"""``provctl``: command-line access to a provenance store.

Output is deterministic JSON on stdout (OPM export prints XML). Exit status
is 0 on success, 1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from . import errors, query, reconstruct, validate
from .capture import ProvenanceStore
from .engine import execute
from .executors import DEFAULT_WHITELIST, resolve_executor
from .model import DataRef, Descriptions, WorkflowSpec
from .opm import export_xml, graph_summary, import_xml, to_opm
from .render import render
from .service import CONFIG_ENV, ServiceConfig, load_config, parse_bindings, parse_listen, serve
from .storage import BackendConfig, open_backend


class UsageError(Exception):
    pass


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _read_json(path: str) -> Any:
    try:
        return json.loads(_read(path))
    except ValueError as exc:
        raise UsageError(f"{path} is not JSON: {exc}") from None


def _nodes(text: str | None) -> list[str] | None:
    return None if text is None else [n for n in text.split(",") if n]


def _bindings(args: argparse.Namespace) -> dict[str, DataRef]:
    found = parse_bindings(_read_json(args.bindings)) if args.bindings else {}
    for pair in args.input or ():
        name, sep, path = pair.partition("=")
        if not sep or not name:
            raise UsageError(f"--input expects NAME=PATH, got {pair!r}")
        found[name] = DataRef.from_payload(name, _read(path), inline=True)
    return found


def _spec_file(path: str) -> WorkflowSpec:
    return WorkflowSpec.from_json(_read(path))


def _backend_config(args: argparse.Namespace) -> tuple[BackendConfig, tuple[str, ...]]:
    if args.root:
        return BackendConfig("file", args.root), DEFAULT_WHITELIST
    config = load_config(args.config)
    return config.storage, config.executors


# -- commands -------------------------------------------------------------------------


def cmd_register(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    descriptions = Descriptions.from_dict(_read_json(args.descriptions)) if args.descriptions else None
    return {"item_id": store.register_item(_spec_file(args.spec), descriptions)}


def cmd_run(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    executor = resolve_executor(args.executor, args.whitelist)
    exec_id = execute(store, args.item, args.version, executor, _bindings(args))
    return query.execution_summary(store, exec_id)


def cmd_replay(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    executor = resolve_executor(args.executor, args.whitelist)
    bindings = _bindings(args)
    head = store.expanded_spec(args.item, args.version).head
    exec_id = reconstruct.replay(
        store,
        args.item,
        args.version,
        executor,
        scope=_nodes(args.scope),
        bindings={head: bindings} if bindings else None,
        source=args.source,
    )
    return query.execution_summary(store, exec_id)


def cmd_list(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    return query.list_executions(store, args.item, args.include_open)


def cmd_errors(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    return query.get_errors(store, args.item, args.execution)


def cmd_annotate(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    return store.annotate(args.item, args.text, author=args.author, version=args.version, node=args.node)


def cmd_search(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    return query.search_annotations(store, args.query, args.item)


def cmd_show(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    if args.trace:
        spec, trace = reconstruct.reconstruct(store, args.item, args.version)
        return {"spec": spec, "trace": trace}
    return query.get_pipeline(store, args.item, args.version)


def cmd_subpipeline(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    return query.get_subpipeline(store, args.item, args.version, _nodes(args.nodes) or [])


def cmd_derive(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    edits = reconstruct.edits_from_json(_read(args.edits))
    return {"version": reconstruct.derive(store, args.item, args.base_version, edits)}


def cmd_validate_blueprint(_store: ProvenanceStore | None, args: argparse.Namespace) -> Any:
    return validate.validate_blueprint(_spec_file(args.spec), _spec_file(args.blueprint))


def cmd_validate_offline(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    ref = validate.ReferenceDataset.from_json(_read(args.reference))
    return validate.validate_offline(store, args.execution, ref)


def cmd_validate_online(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    executor = resolve_executor(args.executor, args.whitelist)
    ref = validate.ReferenceDataset.from_json(_read(args.reference))
    bindings = _bindings(args)
    head = store.expanded_spec(args.item, args.version).head
    exec_id, report = validate.validate_online(
        store, args.item, args.version, executor, ref, bindings={head: bindings} if bindings else None
    )
    return {"execution_id": exec_id, "report": report}


def cmd_reference(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    return validate.ReferenceDataset.from_execution(store, args.execution, args.name or "")


def cmd_export_opm(store: ProvenanceStore, args: argparse.Namespace) -> bytes:
    return export_xml(to_opm(store, args.execution))


def cmd_import_opm(_store: ProvenanceStore | None, args: argparse.Namespace) -> Any:
    return graph_summary(import_xml(_read(args.input)))


def cmd_compare(store: ProvenanceStore, args: argparse.Namespace) -> Any:
    return query.compare_executions(store, args.a, args.b)


STORELESS = {"validate-blueprint", "import-opm"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="provctl", description="Record and query workflow provenance.")
    parser.add_argument("--root", help="file backend directory (overrides the config file)")
    parser.add_argument("--config", help=f"key=value config file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Any, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    def item_version(p: argparse.ArgumentParser) -> None:
        p.add_argument("--item", required=True)
        p.add_argument("--version", required=True, type=int)

    def run_inputs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--executor", required=True, help="e.g. mock:ok, mock:fail:B, subprocess:/path")
        p.add_argument("--bindings", help="JSON file mapping head input names to DataRef documents")
        p.add_argument("--input", action="append", metavar="NAME=PATH", help="inline a file as a head input")

    p = add("register", cmd_register, "register a workflow spec as a new item")
    p.add_argument("--spec", required=True)
    p.add_argument("--descriptions")

    p = add("run", cmd_run, "execute a version")
    item_version(p)
    run_inputs(p)

    p = add("replay", cmd_replay, "re-execute a version or part of it")
    item_version(p)
    run_inputs(p)
    p.add_argument("--scope", help="comma-separated node ids")
    p.add_argument("--source", help="execution to take entry inputs from")

    p = add("list", cmd_list, "list executions of an item")
    p.add_argument("--item", required=True)
    p.add_argument("--include-open", action="store_true")

    p = add("errors", cmd_errors, "error history of an item")
    p.add_argument("--item", required=True)
    p.add_argument("--execution")

    p = add("annotate", cmd_annotate, "attach a note to an item")
    p.add_argument("--item", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--author", default="")
    p.add_argument("--version", type=int)
    p.add_argument("--node")

    p = add("search", cmd_search, "search annotation text")
    p.add_argument("--query", default="")
    p.add_argument("--item")

    p = add("show", cmd_show, "print a recorded spec version")
    item_version(p)
    p.add_argument("--trace", action="store_true", help="include the version and annotation event trace")

    p = add("subpipeline", cmd_subpipeline, "nodes plus their ancestors")
    item_version(p)
    p.add_argument("--nodes", required=True)

    p = add("derive", cmd_derive, "record a new version from an edit list")
    p.add_argument("--item", required=True)
    p.add_argument("--base-version", required=True, type=int)
    p.add_argument("--edits", required=True)

    p = add("validate-blueprint", cmd_validate_blueprint, "compare a spec file with a blueprint file")
    p.add_argument("--spec", required=True)
    p.add_argument("--blueprint", required=True)

    p = add("validate-offline", cmd_validate_offline, "check a finished execution against a reference")
    p.add_argument("--execution", required=True)
    p.add_argument("--reference", required=True)

    p = add("validate-online", cmd_validate_online, "re-execute, then check against a reference")
    item_version(p)
    run_inputs(p)
    p.add_argument("--reference", required=True)

    p = add("reference", cmd_reference, "build a reference dataset from an execution")
    p.add_argument("--execution", required=True)
    p.add_argument("--name")

    p = add("export-opm", cmd_export_opm, "print an execution as OPM XML")
    p.add_argument("--execution", required=True)

    p = add("import-opm", cmd_import_opm, "check and summarize an OPM XML file")
    p.add_argument("--input", required=True)

    p = add("compare", cmd_compare, "compare two finished executions")
    p.add_argument("a")
    p.add_argument("b")

    p = add("serve", None, "run the HTTP service")
    p.add_argument("--listen", help="host:port (overrides the config file)")
    return parser


def _serve(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.root:
        config = ServiceConfig(config.host, config.port, BackendConfig("file", args.root), config.executors)
    if args.listen:
        host, port = parse_listen(args.listen)
        config = ServiceConfig(host, port, config.storage, config.executors)
    serve(config)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if args.command == "serve":
            return _serve(args)
        if args.command in STORELESS:
            result = args.func(None, args)
        else:
            storage, args.whitelist = _backend_config(args)
            with open_backend(storage) as backend:
                result = args.func(ProvenanceStore(backend), args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"provctl: error: {exc}", file=sys.stderr)
        return 2
    except errors.ProvenanceError as exc:
        sys.stderr.buffer.write(render(exc.to_dict()) + b"\n")
        return 1
    out = result if isinstance(result, bytes) else render(result) + b"\n"
    sys.stdout.buffer.write(out)
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
