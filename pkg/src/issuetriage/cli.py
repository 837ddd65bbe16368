"""Command line entry points.

Exit codes are part of the contract: 0 success, 1 bad command line,
2 bad input data (config or dataset), 3 runtime failure (store or
forge unavailable). Scripts can branch on them without parsing output.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from typing import NoReturn, Sequence

from issuetriage.analyzers import SeverityModel, train_severity
from issuetriage.config import AppConfig, ConfigError, load_config
from issuetriage.forge import ForgeClient, ForgeError, HttpTransport
from issuetriage.indexer import install_repo
from issuetriage.metrics import (
    DatasetError,
    EvalReport,
    eval_duplicates,
    eval_localization,
    eval_severity,
    load_duplicate_pairs,
    load_localization_dataset,
    load_severity_dataset,
)
from issuetriage.model import ValidationError
from issuetriage.service import TriageService, Worker, build_host, load_severity_model
from issuetriage.store import IssueStore, StoreUnavailableError
from issuetriage.webhook import GatewayServer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    """argparse, but command line mistakes exit with code 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="issuetriage", description="Issue-report management assistant")
    parser.add_argument("--config", metavar="FILE", help="TOML configuration file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    serve = sub.add_parser("serve", help="run the webhook gateway and worker")
    serve.add_argument("--host", help="bind address (overrides config)")
    serve.add_argument("--port", type=int, help="bind port (overrides config)")

    install = sub.add_parser("install", help="register a repository and backfill its issues")
    install.add_argument("repository", metavar="OWNER/NAME")
    install.add_argument("--page-size", type=int, default=None)

    train = sub.add_parser("train-severity", help="fit the severity model from labeled examples")
    train.add_argument("dataset", metavar="FILE")
    train.add_argument("--out", metavar="FILE", default="severity_model.json")

    evaluate = sub.add_parser("eval", help="score an analyzer against a labeled dataset")
    eval_sub = evaluate.add_subparsers(dest="eval_kind", required=True, parser_class=_Parser)

    dup = eval_sub.add_parser("duplicates", help="labeled issue pairs")
    dup.add_argument("dataset", metavar="FILE")
    dup.add_argument("--threshold", type=float, default=None)
    dup.add_argument("--json", action="store_true", dest="as_json")

    sev = eval_sub.add_parser("severity", help="labeled issues")
    sev.add_argument("dataset", metavar="FILE")
    sev.add_argument("--model", metavar="FILE", default=None)
    sev.add_argument("--json", action="store_true", dest="as_json")

    loc = eval_sub.add_parser("localization", help="issues with known buggy files")
    loc.add_argument("dataset", metavar="FILE")
    loc.add_argument("--k", type=int, action="append", dest="k_list", metavar="K")
    loc.add_argument("--json", action="store_true", dest="as_json")

    sub.add_parser("status", help="show installed repositories and queue state")
    return parser


def _print_report(report: EvalReport, as_json: bool) -> None:
    data = report.to_json_dict()
    if as_json:
        print(json.dumps(data, indent=2, sort_keys=True))
        return
    for key in ("accuracy", "precision", "recall"):
        if data[key] is not None:
            print(f"{key:>10}: {data[key]:.4f}")
    if data["p_at_k"]:
        for k, value in data["p_at_k"].items():
            print(f"{'p@' + k:>10}: {value:.4f}")
    if data["r_at_k"]:
        for k, value in data["r_at_k"].items():
            print(f"{'r@' + k:>10}: {value:.4f}")
    if data["map"] is not None:
        print(f"{'map':>10}: {data['map']:.4f}")
    print(f"{'examples':>10}: {data['n_examples']}")
    for flag in data["flags"]:
        print(f"{'flag':>10}: {flag}")


def _forge_client(config: AppConfig) -> ForgeClient:
    if not config.forge.token:
        raise ConfigError("forge token is not configured (set ISSUETRIAGE_TOKEN)")
    return ForgeClient(
        HttpTransport(config.forge.base_url),
        token=config.forge.token,
        retry=config.retry,
        web_base=config.forge.web_base,
    )


def _cmd_serve(args: argparse.Namespace, config: AppConfig) -> int:
    if not config.forge.webhook_secret:
        raise ConfigError("webhook secret is not configured (set ISSUETRIAGE_WEBHOOK_SECRET)")
    client = _forge_client(config)
    with IssueStore(config.storage_path) as store:
        model = load_severity_model(config)
        host = build_host(config, model)
        service = TriageService(store, client, host, config)
        worker = Worker(service)
        gateway = GatewayServer(
            store,
            config.forge.webhook_secret,
            host=args.host or config.gateway.host,
            port=args.port if args.port is not None else config.gateway.port,
            queue_limit=config.gateway.queue_limit,
            on_accept=worker.notify,
        )
        worker.start()
        gateway.start()
        print(f"listening on http://{gateway.server_address[0]}:{gateway.port}/webhook")
        try:
            threading.Event().wait()
        except KeyboardInterrupt:
            print("shutting down")
        finally:
            gateway.stop()
            worker.stop()
    return EXIT_OK


def _cmd_install(args: argparse.Namespace, config: AppConfig) -> int:
    if "/" not in args.repository:
        print("error: repository must be OWNER/NAME", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    owner, name = args.repository.split("/", 1)
    client = _forge_client(config)
    with IssueStore(config.storage_path) as store:
        report = install_repo(
            store,
            client,
            owner,
            name,
            page_size=args.page_size or config.page_size,
            on_page=lambda page, count: print(f"page {page}: {count} issues"),
        )
    if report.pages_fetched == 0 and report.complete:
        print(f"{report.repo.full_name}: already installed, backfill complete")
    else:
        print(
            f"{report.repo.full_name}: indexed {report.issues_seen} issues"
            f" over {report.pages_fetched} pages"
        )
    return EXIT_OK


def _cmd_train(args: argparse.Namespace, config: AppConfig) -> int:
    examples = load_severity_dataset(args.dataset)
    model = train_severity(examples, title_weight=config.analyzers.title_weight)
    model.save(args.out)
    classes = ", ".join(sorted(c.value for c in model.centroids))
    print(f"trained on {len(examples)} examples ({classes}); model written to {args.out}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace, config: AppConfig) -> int:
    if args.eval_kind == "duplicates":
        pairs = load_duplicate_pairs(args.dataset)
        threshold = args.threshold if args.threshold is not None else config.analyzers.threshold
        report = eval_duplicates(pairs, threshold, config.analyzers.title_weight)
    elif args.eval_kind == "severity":
        examples = load_severity_dataset(args.dataset)
        if args.model:
            model = SeverityModel.load(args.model)
        else:
            model = load_severity_model(config)
        report = eval_severity(examples, model)
    else:
        examples = load_localization_dataset(args.dataset)
        k_list = args.k_list or [config.analyzers.top_k]
        report = eval_localization(examples, k_list, config.analyzers.title_weight)
    _print_report(report, args.as_json)
    return EXIT_OK


def _cmd_status(config: AppConfig) -> int:
    with IssueStore(config.storage_path) as store:
        installed = store.list_installed()
        if not installed:
            print("no repositories installed")
        for state in installed:
            issues = store.issue_count(state.repo)
            feedback = store.feedback_count(state.repo)
            backfill = "complete" if state.backfill_complete else (
                f"resumable at page {(state.backfill_cursor or 0) + 1}"
            )
            print(
                f"{state.repo.full_name}: {issues} issues indexed, "
                f"{feedback} issues with feedback, backfill {backfill}"
            )
        print(f"queue: {store.pending_count()} pending deliveries")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = load_config(args.config)
        if args.command == "serve":
            return _cmd_serve(args, config)
        if args.command == "install":
            return _cmd_install(args, config)
        if args.command == "train-severity":
            return _cmd_train(args, config)
        if args.command == "eval":
            return _cmd_eval(args, config)
        if args.command == "status":
            return _cmd_status(config)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DatasetError, ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ForgeError, StoreUnavailableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
