"""Command line entry point: run the control server, replay traces, lint policies."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import replay as replay_mod
from .dsl.parser import PolicyParseError
from .server import ConfigError, load_config, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentguard",
        description="Attribute-based access control for tool-using agents.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the control server")
    p_serve.add_argument("--config", help="TOML config file (env AGENTGUARD_* overrides it)")
    p_serve.add_argument("--host", help="listen address")
    p_serve.add_argument("--port", type=int, help="listen port")
    p_serve.add_argument("--policies", dest="policy_path", help="policy file (.agp)")
    p_serve.add_argument("--audit", dest="audit_path", help="audit log path")
    p_serve.add_argument("--admin-token", dest="admin_token", help="bearer token for operator endpoints")
    p_serve.add_argument("--console-dir", dest="console_dir", help="static console assets to serve under /console")

    p_replay = sub.add_parser("replay", help="replay a recorded trace against a policy file")
    p_replay.add_argument("--policies", required=True, help="policy file (.agp)")
    p_replay.add_argument("--trace", required=True, help="newline-delimited JSON trace file")
    p_replay.add_argument("--review-as", choices=replay_mod.REVIEW_MODES, default="deny",
                          help="how review outcomes resolve offline (default: deny)")
    p_replay.add_argument("--json", action="store_true", help="machine-readable report")

    p_check = sub.add_parser("check-policies", help="parse and lint a policy file")
    p_check.add_argument("--policies", required=True, help="policy file (.agp)")
    p_check.add_argument("--json", action="store_true", help="machine-readable diagnostics")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "serve":
        overrides = {
            "host": args.host,
            "port": args.port,
            "policy_path": args.policy_path,
            "audit_path": args.audit_path,
            "admin_token": args.admin_token,
            "console_dir": args.console_dir,
        }
        try:
            config = load_config(args.config, overrides)
            serve(config)
        except (ConfigError, FileNotFoundError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except PolicyParseError as exc:
            print("error: active policy file rejected:", file=sys.stderr)
            for diag in exc.diagnostics:
                print(f"  {diag.render()}", file=sys.stderr)
            return 2
        return 0

    if args.command == "replay":
        return replay_mod.replay(args.policies, args.trace,
                                 review_as=args.review_as, json_output=args.json)

    if args.command == "check-policies":
        return replay_mod.check_policies(args.policies, json_output=args.json)

    return 2  # pragma: no cover - argparse enforces the choices


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
