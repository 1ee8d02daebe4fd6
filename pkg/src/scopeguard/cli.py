"""Command-line entry point.

Exit codes: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from .domain import DatasetConfig
from .errors import ScopeGuardError

logger = logging.getLogger("scopeguard")

ENV_PREFIX = "SCOPEGUARD_"


@dataclass
class Settings:
    """Every tunable knob. Loaded from a JSON file, then SCOPEGUARD_<KEY> env overrides."""

    seed: int = 0
    tasks_per_set: int = 3
    wrong_ratio: float = 0.8
    null_ratio: float = 0.2
    threshold: float = 0.5
    val_fraction: float = 0.5
    grant_ttl: int = 60
    token_ttl: int = 300
    max_task_seconds: float = 900.0
    strict_mode: bool = False
    proxy_strict_mode: bool = False
    signing_key: str = "dev-signing-key-change-me-0123456789"
    proxy_secret: str = "dev-proxy-secret"
    issuer: str = "https://server.example.com"
    error_budget: float = 0.05
    parallelism: int = 4
    revocation_poll_seconds: float = 1.0
    requests_per_second: float = 0.0

    @classmethod
    def load(cls, path: Optional[str] = None, environ: Optional[Dict[str, str]] = None) -> "Settings":
        data: Dict[str, Any] = {}
        if path:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            if not isinstance(data, dict):
                raise ValueError("config file must hold a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        env = os.environ if environ is None else environ
        for name, f in known.items():
            raw = env.get(ENV_PREFIX + name.upper())
            if raw is None:
                continue
            ftype = type(getattr(cls, name))
            if ftype is bool:
                data[name] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                data[name] = ftype(raw)
        return cls(**data)


def bundled_manifests() -> Path:
    return Path(str(resources.files("scopeguard") / "data" / "manifests"))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class UsageError(Exception):
    pass


def _registry(args, stripped: bool = True):
    from .pipeline import strip_argument_details
    from .registry import Registry
    reg = Registry.from_dir(args.manifests or bundled_manifests())
    return reg.map_descriptions(strip_argument_details) if stripped else reg


def _gateway(args, settings: Settings):
    from .gateway import CassetteGateway, MockGateway, OpenAIGateway, RecordingGateway
    from .mockllm import synthetic_responder
    kind = getattr(args, "gateway", "mock")
    if getattr(args, "live", False):
        kind = "live"
    if kind == "mock":
        return MockGateway(responder=synthetic_responder)
    if kind == "cassette":
        if not args.cassette:
            raise UsageError("--gateway cassette needs --cassette")
        return CassetteGateway(args.cassette)
    if kind == "live":
        gw = OpenAIGateway.from_env(requests_per_second=settings.requests_per_second or None)
        return RecordingGateway(gw, args.cassette) if getattr(args, "cassette", None) else gw
    raise UsageError(f"unknown gateway {kind!r}")


def _write(path: Optional[str], text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _build_matcher(kind: str, gateway, threshold: float):
    from .matchers import LlmResMatcher, SemSimConfig, SemSimMatcher
    if kind == "semsim":
        return SemSimMatcher(gateway, SemSimConfig(threshold=threshold, calibrated=True))
    if kind == "llmres":
        return LlmResMatcher(gateway)
    raise UsageError(f"unknown matcher {kind!r}")


# ---------------------------------------------------------------------------
# pipeline subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args, settings: Settings) -> int:
    from .pipeline import generate_dataset, load_manifest_dir, write_jsonl
    manifests = load_manifest_dir(args.manifests or bundled_manifests())
    gateway = _gateway(args, settings)
    m = args.m if args.m is not None else settings.tasks_per_set
    samples = generate_dataset(manifests, args.n, m, args.seed, gateway, max_workers=settings.parallelism)
    out = Path(args.out) / f"tasks_N{args.n}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, (s.to_dict() for s in samples),
                {"kind": "tasks", "n_tools": args.n, "tasks_per_set": m, "seed": args.seed,
                 "servers": sorted(x.server_id for x in manifests)})
    logger.info("wrote %d tasks to %s", len(samples), out)
    print(out)
    return 0


def cmd_simulate(args, settings: Settings) -> int:
    from .pipeline import load_tasks, simulate_matches, write_jsonl
    header, samples = load_tasks(args.data)
    if not samples:
        raise ScopeGuardError(f"{args.data} holds no tasks")
    n = header.get("n_tools", samples[0].n_tools)
    cfg = DatasetConfig(n_tools=n, tasks_per_set=header.get("tasks_per_set", settings.tasks_per_set),
                        wrong_ratio=settings.wrong_ratio, null_ratio=settings.null_ratio, seed=args.seed)
    matches = simulate_matches(samples, cfg, _registry(args))
    out = Path(args.out) if args.out else Path(args.data).with_name(f"matches_N{n}.jsonl")
    write_jsonl(out, (r.to_dict() for r in matches),
                {"kind": "matches", "n_tools": n, "seed": args.seed,
                 "wrong_ratio": cfg.wrong_ratio, "null_ratio": cfg.null_ratio})
    logger.info("wrote %d match requests to %s", len(matches), out)
    print(out)
    return 0


def cmd_split(args, settings: Settings) -> int:
    from .pipeline import load_matches, split_dataset, split_manifest, write_jsonl
    header, matches = load_matches(args.data)
    frac = args.val_fraction if args.val_fraction is not None else settings.val_fraction
    validation, test = split_dataset(matches, args.seed, frac)
    out_dir = Path(args.out_dir or Path(args.data).parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.data).stem
    for name, part in (("validation", validation), ("test", test)):
        write_jsonl(out_dir / f"{stem}.{name}.jsonl", (r.to_dict() for r in part), {**header, "split": name})
    (out_dir / f"{stem}.split.json").write_text(json.dumps(split_manifest(matches, args.seed, frac), indent=2) + "\n")
    print(out_dir / f"{stem}.validation.jsonl")
    print(out_dir / f"{stem}.test.jsonl")
    return 0


def cmd_calibrate(args, settings: Settings) -> int:
    from .matchers import SemSimMatcher, calibrate_threshold
    from .pipeline import load_matches
    _, validation = load_matches(args.data)
    matcher = SemSimMatcher(_gateway(args, settings))
    tau = calibrate_threshold(validation, matcher, _registry(args))
    result = {"threshold": tau, "data": str(args.data), "n_requests": len(validation)}
    _write(args.out, json.dumps(result, indent=2) + "\n")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    from .evaluation import DecisionCache, evaluate, report
    from .pipeline import load_matches
    header, data = load_matches(args.data)
    threshold = args.threshold if args.threshold is not None else settings.threshold
    if args.threshold_file:
        threshold = json.loads(Path(args.threshold_file).read_text())["threshold"]
    matcher = _build_matcher(args.matcher, _gateway(args, settings), threshold)
    cache = DecisionCache(args.cache) if args.cache else None
    metrics = evaluate(matcher, data, _registry(args), dataset_id=args.dataset_id or Path(args.data).stem,
                       parallelism=settings.parallelism, cache=cache)
    if args.live:
        metrics.run_label = "single live run"
    _write(args.out, report(metrics, args.format))
    if args.metrics_out:
        _write(args.metrics_out, report(metrics, "json"))
    budget = args.error_budget if args.error_budget is not None else settings.error_budget
    if metrics.error_rate > budget:
        logger.error("matcher error rate %.3f exceeds budget %.3f", metrics.error_rate, budget)
        return 1
    return 0


def cmd_report(args, settings: Settings) -> int:
    from .evaluation import load_reports, report, tradeoff_table
    reports = []
    for path in args.inputs:
        reports.extend(load_reports(Path(path).read_text(encoding="utf-8")))
    text = tradeoff_table(reports, args.format) if args.tradeoff else report(reports, args.format)
    _write(args.out, text)
    return 0


def cmd_e2e(args, settings: Settings) -> int:
    from .e2e import PRESETS, run_preset
    preset = PRESETS[args.preset].with_options(extra_count=args.extra_scopes, tamper=args.tamper or None)
    gateway = None
    if args.matcher == "semsim" or args.gateway != "mock" or args.live:
        gateway = _gateway(args, settings)
    transcript = run_preset(args.flow, preset, _registry(args), matcher_kind=args.matcher, seed=args.seed,
                            gateway=gateway, strict_mode=settings.strict_mode)
    _write(args.transcript, transcript.to_json())
    summary = {"flow": transcript.flow, "granted": transcript.granted_scopes, "access": transcript.access,
               "post_finalize_access": transcript.post_finalize_access, "failed_step": transcript.failed_step}
    print(json.dumps(summary), file=sys.stderr if not args.transcript else sys.stdout)
    return 0 if transcript.ok else 1


# ---------------------------------------------------------------------------
# servers
# ---------------------------------------------------------------------------


def _serve(app, host: str, port: int) -> None:
    import uvicorn
    uvicorn.run(app, host=host, port=port, log_level="info")


def _serve_pair(primary, secondary, host: str, port: int, secondary_port: int) -> None:
    import threading
    import uvicorn
    second = uvicorn.Server(uvicorn.Config(secondary, host=host, port=secondary_port, log_level="info"))
    threading.Thread(target=second.run, name="secondary-listener", daemon=True).start()
    try:
        _serve(primary, host, port)
    finally:
        second.should_exit = True


def cmd_serve_as(args, settings: Settings) -> int:
    from .audit import AuditLog
    from .authz import AuthorizationServer, AuthzConfig, create_proxy_app, create_public_app
    cfg = AuthzConfig(issuer=settings.issuer, signing_key=settings.signing_key, proxy_secret=settings.proxy_secret,
                      grant_ttl=settings.grant_ttl, token_ttl=settings.token_ttl, strict_mode=settings.strict_mode,
                      mode=args.mode)
    matcher = None
    if args.mode == "enhanced":
        matcher = _build_matcher(args.matcher, _gateway(args, settings), settings.threshold)
    server = AuthorizationServer(cfg, _registry(args), matcher, audit=AuditLog(args.audit_log),
                                 max_workers=settings.parallelism)
    _serve_pair(create_public_app(server), create_proxy_app(server), args.host, args.port, args.proxy_port)
    return 0


def cmd_serve_proxy(args, settings: Settings) -> int:
    import httpx
    from .audit import AuditLog
    from .proxy import TrustedProxy, create_proxy_agent_app
    proxy = TrustedProxy(httpx.Client(base_url=args.as_url, timeout=30.0),
                         httpx.Client(base_url=args.as_proxy_url, timeout=60.0),
                         settings.proxy_secret, audit=AuditLog(args.audit_log),
                         max_task_seconds=settings.max_task_seconds, strict_mode=settings.proxy_strict_mode)
    _serve(create_proxy_agent_app(proxy), args.host, args.port)
    return 0


def cmd_serve_rs(args, settings: Settings) -> int:
    from .authz import RevocationList, SystemClock, TokenVerifier
    from .resource import ProtectedResource, ResourceServer, RevocationPoller, create_resource_app, load_fixtures
    revocations = RevocationList()
    verifier = TokenVerifier(settings.signing_key, SystemClock(), revocations)
    fixtures = load_fixtures(args.fixtures) if args.fixtures else None
    rs = ResourceServer(args.base_url, _registry(args), verifier, [ProtectedResource.example()], fixtures)
    poller = None
    if args.revocations_url:
        poller = RevocationPoller(args.revocations_url, revocations, settings.revocation_poll_seconds)
        poller.start()
    try:
        _serve(create_resource_app(rs), args.host, args.port)
    finally:
        if poller:
            poller.stop()
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (env SCOPEGUARD_<KEY> overrides it)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default: config seed)")
    common.add_argument("--log-json", action="store_true", help="emit logs as JSON lines")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--manifests", "--registry", dest="manifests",
                        help="manifest directory (default: bundled demo manifests)")

    gw = argparse.ArgumentParser(add_help=False)
    gw.add_argument("--gateway", choices=("mock", "cassette", "live"), default="mock",
                    help="model backend: deterministic mock, recorded cassette, or live API")
    gw.add_argument("--cassette", help="cassette JSONL to replay (cassette) or record into (live)")

    p = _Parser(prog="scopeguard", description="Task-scoped delegated authorization toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("gen-data", parents=[common, gw], help="generate tasks for N-tool sets")
    s.add_argument("--n", type=int, required=True, choices=(1, 2, 3))
    s.add_argument("--m", type=int, default=None, help="tasks per tool set")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("simulate", parents=[common], help="emit correct/wrong/null match requests")
    s.add_argument("--data", required=True, help="tasks JSONL")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("split", parents=[common], help="server-disjoint validation/test split")
    s.add_argument("--data", required=True, help="matches JSONL")
    s.add_argument("--val-fraction", type=float, default=None)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("calibrate", parents=[common, gw], help="choose the SemSimM threshold by F1")
    s.add_argument("--data", required=True, help="validation matches JSONL")
    s.add_argument("--out")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("eval", parents=[common, gw], help="score a matcher on a matches JSONL")
    s.add_argument("--matcher", choices=("semsim", "llmres"), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--format", choices=("text", "csv", "json"), default="text")
    s.add_argument("--metrics-out", help="also write the JSON report here")
    s.add_argument("--dataset-id")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--threshold-file", help="JSON written by calibrate")
    s.add_argument("--cache", help="decision cache JSONL")
    s.add_argument("--error-budget", type=float, default=None, help="max tolerated matcher error rate")
    s.add_argument("--live", action="store_true", help="use the live API (LM_API_BASE, LM_API_KEY)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="render JSON reports as tables")
    s.add_argument("inputs", nargs="+", help="JSON reports from eval --format json")
    s.add_argument("--format", default="text", help="text, csv or json")
    s.add_argument("--tradeoff", action="store_true", help="FPR/FNR per N instead of the metrics table")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("e2e", parents=[common, gw], help="run the scripted agent flow")
    s.add_argument("--flow", choices=("baseline", "enhanced"), required=True)
    s.add_argument("--preset", choices=("fig1-attack", "honest"), default="fig1-attack")
    s.add_argument("--matcher", choices=("llmres", "semsim", "static"), default="llmres")
    s.add_argument("--extra-scopes", type=int, default=None, help="how many extra scopes the agent adds")
    s.add_argument("--tamper", action="store_true", help="agent also sends a rewritten prompt")
    s.add_argument("--live", action="store_true")
    s.add_argument("--transcript")
    s.set_defaults(func=cmd_e2e)

    s = sub.add_parser("serve-as", parents=[common, gw], help="run the authorization server")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8100)
    s.add_argument("--proxy-port", type=int, default=8101, help="listener reserved for the trusted proxy")
    s.add_argument("--mode", choices=("enhanced", "baseline"), default="enhanced")
    s.add_argument("--matcher", choices=("semsim", "llmres"), default="llmres")
    s.add_argument("--audit-log")
    s.set_defaults(func=cmd_serve_as)

    s = sub.add_parser("serve-proxy", parents=[common], help="run the trusted proxy")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8200)
    s.add_argument("--as-url", default="http://127.0.0.1:8100")
    s.add_argument("--as-proxy-url", default="http://127.0.0.1:8101")
    s.add_argument("--audit-log")
    s.set_defaults(func=cmd_serve_proxy)

    s = sub.add_parser("serve-rs", parents=[common], help="run the simulated resource server")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8300)
    s.add_argument("--base-url", default="https://resource.example.com")
    s.add_argument("--revocations-url", help="poll this AS endpoint for revoked token ids")
    s.add_argument("--fixtures", help="JSON of canned tool results keyed by scope")
    s.set_defaults(func=cmd_serve_rs)
    return p


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {"ts": record.created, "level": record.levelname, "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            out["exc"] = self.formatException(record.exc_info)
        return json.dumps(out)


def _setup_logging(log_json: bool, verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if log_json else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    logging.getLogger("httpx").setLevel(logging.DEBUG if verbose else logging.WARNING)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"scopeguard: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    _setup_logging(args.log_json, args.verbose)
    try:
        settings = Settings.load(args.config)
    except (OSError, ValueError, TypeError) as exc:
        print(f"scopeguard: bad config: {exc}", file=sys.stderr)
        return 2
    if args.seed is None:
        args.seed = settings.seed
    try:
        return args.func(args, settings)
    except UsageError as exc:
        print(f"scopeguard: error: {exc}", file=sys.stderr)
        return 2
    except (ScopeGuardError, OSError, ValueError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
