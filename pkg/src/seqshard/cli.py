"""Command-line entry point.

The CLI is a thin client of the HTTP service: by default it mounts the app
in-process, and `--server URL` points it at a running instance instead.
Results are printed as aligned text tables and written as CSV when --out is
given. Exit codes: 0 success, 1 verification failure or internal error,
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import sys
from pathlib import Path

import httpx

from .errors import ConfigError
from .version import __version__

_TIMEOUT = 600.0


# ---------------------------------------------------------------------------
# Service client


def _call(server: str | None, method: str, path: str,
          payload: dict | None = None) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server.rstrip("/"),
                          timeout=_TIMEOUT) as client:
            return client.request(method, path, json=payload)

    async def _in_process() -> httpx.Response:
        from .service.app import create_app
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://seqshard.internal",
                                     timeout=_TIMEOUT) as client:
            return await client.request(method, path, json=payload)

    return asyncio.run(_in_process())


def _post_json(server: str | None, path: str, payload: dict) -> dict:
    try:
        resp = _call(server, "POST", path, payload)
    except httpx.HTTPError as exc:
        raise ConfigError(f"cannot reach service: {exc}") from exc
    if resp.status_code in (400, 422):
        body = resp.json()
        raise ConfigError(str(body.get("error") or body.get("detail")))
    if resp.status_code != 200:
        raise RuntimeError(f"service error {resp.status_code}: {resp.text}")
    return resp.json()


# ---------------------------------------------------------------------------
# Formatting

_NA = "-"


def _fmt(value, spec: str | None = None) -> str:
    if value is None:
        return _NA
    if spec is None:
        return str(value)
    return format(value, spec)


def _print_table(headers: list[str], rows: list[list[str]]) -> None:
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    print(line.rstrip())
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(cell.ljust(w)
                        for cell, w in zip(row, widths)).rstrip())


def _write_csv(out_dir: str | None, name: str, headers: list[str],
               rows: list[list[str]]) -> None:
    if out_dir is None:
        return
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / name).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def _read_config_text(path: str | None) -> str | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return p.read_text()


def _common_payload(args: argparse.Namespace) -> dict:
    return {
        "config_text": _read_config_text(args.config),
        "seed": args.seed,
        "precision": args.precision,
        "mode": args.mode,
    }


# ---------------------------------------------------------------------------
# Verbs


def cmd_verify(args: argparse.Namespace) -> int:
    payload = _common_payload(args)
    payload["inject"] = args.inject
    body = _post_json(args.server, "/verify", payload)
    headers = ["property", "status", "trials", "max_error", "detail"]
    rows = []
    for rec in body["results"]:
        err = rec["max_error"]
        rows.append([
            rec["property"],
            "pass" if rec["passed"] else "FAIL",
            str(rec["trials"]),
            _NA if err is None else format(err, ".3e"),
            rec["detail"],
        ])
    _print_table(headers, rows)
    _write_csv(args.out, "verify.csv", headers, rows)
    if body["ok"]:
        print("all properties passed")
        return 0
    failed = [r["property"] for r in body["results"] if not r["passed"]]
    print(f"FAILED: {', '.join(failed)}")
    return 1


def cmd_compare(args: argparse.Namespace) -> int:
    body = _post_json(args.server, "/compare", _common_payload(args))
    headers = ["strategy", "partitions", "landmarks", "gflops_total",
               "gflops_per_device", "comp_speedup_pct", "pdplc_tokens",
               "cr", "comm_speedup_pct"]
    rows = []
    for rec in body["rows"]:
        rows.append([
            rec["strategy"],
            str(rec["partitions"]),
            _fmt(rec["landmarks"]),
            format(rec["gflops_total"], ".4f"),
            format(rec["gflops_per_device"], ".4f"),
            _fmt(rec["comp_speedup_pct"], ".2f"),
            _fmt(rec["pdplc_tokens"]),
            _fmt(rec["cr"], ".2f"),
            _fmt(rec["comm_speedup_pct"], ".2f"),
        ])
    _print_table(headers, rows)
    _write_csv(args.out, "compare.csv", headers, rows)
    return 0


def cmd_latency(args: argparse.Namespace) -> int:
    body = _post_json(args.server, "/latency", _common_payload(args))
    headers = ["bandwidth_mbps", "single_s", "voltage_s", "prism_s",
               "prism_over_voltage"]
    rows = [[
        format(rec["bandwidth_mbps"], ".1f"),
        format(rec["single_s"], ".6e"),
        format(rec["voltage_s"], ".6e"),
        format(rec["prism_s"], ".6e"),
        format(rec["prism_over_voltage"], ".6f"),
    ] for rec in body["rows"]]
    _print_table(headers, rows)
    _write_csv(args.out, "latency.csv", headers, rows)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.app import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port,
                log_level="info")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqshard",
        description="Simulator for communication-efficient distributed "
                    "transformer inference.")
    parser.add_argument("--version", action="version",
                        version=f"seqshard {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="PATH",
                       help="experiment config (INI); built-in defaults "
                            "otherwise")
        p.add_argument("--seed", type=int, default=None,
                       help="override the experiment seed")
        p.add_argument("--precision", choices=("f32", "f64"), default=None,
                       help="override the compute precision")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="directory for CSV output")
        p.add_argument("--mode", choices=("unicast", "broadcast"),
                       default=None, help="override the exchange mode")
        p.add_argument("--server", metavar="URL", default=None,
                       help="talk to a running service instead of "
                            "in-process")

    p_verify = sub.add_parser(
        "verify", help="run the correctness property suite")
    common(p_verify)
    p_verify.add_argument("--inject", default=None,
                          help="deliberately break the named internal "
                               "quantity (expects the suite to fail)")
    p_verify.set_defaults(func=cmd_verify)

    p_compare = sub.add_parser(
        "compare", help="analytical cost table across strategies")
    common(p_compare)
    p_compare.set_defaults(func=cmd_compare)

    p_latency = sub.add_parser(
        "latency", help="latency sweep over link bandwidth")
    common(p_latency)
    p_latency.set_defaults(func=cmd_latency)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8351)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
