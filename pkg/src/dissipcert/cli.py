"""Command-line client for the certification service.

Subcommands mirror the service endpoints: `equilibrium`, `sweep`, `certify`,
`lq` and `pareto`.  By default requests run against an in-process instance of
the service (no network); `--server URL` targets a running instance instead.
Data lands in CSV files, certificates in JSON, and a short human-readable
summary goes to stdout.  Exit codes: 0 on success (a Refuted certificate is a
successful analysis), 1 on analysis or I/O failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx

FMT_DIGITS = 9


class CliError(Exception):
    pass


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    return "%.*g" % (FMT_DIGITS, value)


class ApiClient:
    """Minimal JSON-over-HTTP client; in-process ASGI unless a server URL is
    given."""

    def __init__(self, server=None):
        self.server = server

    def post(self, path, payload):
        if self.server:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                response = client.post(path, json=payload)
        else:
            from .service import create_app

            async def _call():
                transport = httpx.ASGITransport(app=create_app())
                async with httpx.AsyncClient(transport=transport,
                                             base_url="http://dissipcert",
                                             timeout=None) as client:
                    return await client.post(path, json=payload)

            response = asyncio.run(_call())
        if response.status_code != 200:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise CliError("%s -> HTTP %d: %s" % (path, response.status_code, detail))
        return response.json()


def _read_problem(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as err:
        raise CliError("cannot read problem file: %s" % err) from err


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as err:
        raise CliError("cannot write %s: %s" % (path, err)) from err


def _write_json(path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_equilibrium(client, args):
    payload = {"problem_text": _read_problem(args.problem), "mu": args.mu}
    if args.weights:
        payload["weights"] = [float(v) for v in args.weights.split(",")]
    data = client.post("/equilibrium", payload)
    print("x_e = %s" % " ".join(_fmt(v) for v in data["x"]))
    print("u_e = %s" % " ".join(_fmt(v) for v in data["u"]))
    print("nu  = %s" % " ".join(_fmt(v) for v in data["nu"]))
    print("cost = %s  residual = %s" % (_fmt(data["cost_value"]),
                                        _fmt(data["kkt_residual"])))
    print("regular=%s sosc=%s interior=%s" % (data["regular"], data["sosc"],
                                              data["interior"]))
    if data.get("tied"):
        print("tied minimisers: %d" % len(data["tied"]))
    if data.get("closed_form_gap") is not None:
        print("closed-form gap = %s" % _fmt(data["closed_form_gap"]))
    if args.json:
        _write_json(args.json, data)
    return 0


def _sweep_csv(data):
    records = data["records"]
    jumps = data["jumps"]
    width = {k: 0 for k in ("x", "u", "nu", "lam_tilde")}
    for rec in records:
        for key in width:
            if rec.get(key):
                width[key] = max(width[key], len(rec[key]))
    header = ["mu"]
    header += ["x%d" % (i + 1) for i in range(width["x"])]
    header += ["u%d" % (i + 1) for i in range(width["u"])]
    header += ["nu%d" % (i + 1) for i in range(width["nu"])]
    header += ["lambda_tilde%d" % (i + 1) for i in range(width["lam_tilde"])]
    header += ["min_rotated_hess_eig", "status", "jump"]
    lines = [",".join(header)]
    for rec in records:
        in_jump = any(j["mu_lo"] - 1e-15 <= rec["mu"] <= j["mu_hi"] + 1e-15
                      for j in jumps)
        row = [_fmt(rec["mu"])]
        for key in ("x", "u", "nu", "lam_tilde"):
            vals = rec.get(key) or []
            row += [_fmt(v) for v in vals] + [""] * (width[key] - len(vals))
        row.append(_fmt(rec.get("min_rotated_hess_eig")))
        row.append(rec["status"])
        row.append("1" if in_jump else "0")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_sweep(client, args):
    payload = {"problem_text": _read_problem(args.problem), "grid": args.grid,
               "seed": args.seed}
    if args.threshold is not None:
        payload["jump_threshold"] = args.threshold
    data = client.post("/sweep", payload)
    print("grid points: %d, jump threshold: %s" % (len(data["records"]),
                                                   _fmt(data["threshold"])))
    for j in data["jumps"]:
        print("jump: mu in [%s, %s], size %s" % (_fmt(j["mu_lo"]),
                                                 _fmt(j["mu_hi"]),
                                                 _fmt(j["size"])))
    if not data["jumps"]:
        print("no jumps flagged")
    statuses = {}
    for rec in data["records"]:
        statuses[rec["status"]] = statuses.get(rec["status"], 0) + 1
    print("statuses: " + ", ".join("%s=%d" % kv for kv in sorted(statuses.items())))
    if args.out:
        _write(args.out, _sweep_csv(data))
        print("wrote %s" % args.out)
    return 0


def cmd_certify(client, args):
    if (args.mu is None) == (args.grid is None):
        raise CliError("provide exactly one of --mu or --grid")
    payload = {
        "problem_text": _read_problem(args.problem),
        "samples_grid": args.samples_grid,
        "samples_random": args.samples_random,
        "seed": args.seed,
        "threads": args.threads,
    }
    if args.mu is not None:
        payload["mu"] = args.mu
    else:
        payload["grid"] = args.grid
    if args.lower_bound:
        payload["lower_bound"] = args.lower_bound
    data = client.post("/certify", payload)
    for cert in data["certificates"]:
        print("mu=%s: %s via %s (m1=%s m2=%s alpha=%s)" % (
            _fmt(cert["weights"][0]), cert["status"], cert["path"] or "-",
            _fmt(cert.get("m1")), _fmt(cert.get("m2")),
            _fmt(cert.get("alpha_coefficient"))))
    if args.out:
        _write_json(args.out, data)
        print("wrote %s" % args.out)
    return 0


def cmd_lq(client, args):
    payload = {"problem_text": _read_problem(args.problem), "grid": args.grid,
               "require_psd": args.require_psd}
    data = client.post("/lq", payload)
    if not data["lq"]:
        print("not linear-quadratic: %s" % data["reason"])
    else:
        print("A = %s" % data["A"])
        print("B = %s" % data["B"])
        for item in data["lmi"]:
            print("cost %d: margin=%s feasible=%s psd_P=%s" % (
                item["cost_index"], _fmt(item["margin"]), item["feasible"],
                item["psd_P"]))
        nu = data.get("nu_linearity")
        if nu:
            print("nu linearity: max deviation %s at mu=%s (a=1: %s, q1r2=q2r1: %s)"
                  % (_fmt(nu["max_deviation"]), _fmt(nu["argmax_mu"]),
                     nu["condition_a_eq_1"], nu["condition_qr"]))
    if args.json:
        _write_json(args.json, data)
    return 0


def cmd_pareto(client, args):
    payload = {
        "problem_text": _read_problem(args.problem),
        "x0": [float(v) for v in args.x0.split(",")],
        "horizon": args.horizon,
        "grid": args.grid,
        "restarts": args.restarts,
        "seed": args.seed,
        "include_trajectories": bool(args.trajectories),
    }
    data = client.post("/pareto", payload)
    front = data["front"]
    print("front: %d nondominated of %d weights" % (len(front),
                                                    len(data["per_weight"])))
    lines = ["mu,J1,J2,converged"]
    for p in front:
        lines.append(",".join([_fmt(p["mu"]), _fmt(p["J1"]), _fmt(p["J2"]),
                               _fmt(p["converged"])]))
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, csv_text)
        print("wrote %s" % args.out)
    else:
        sys.stdout.write(csv_text)
    if args.all_out:
        rows = ["mu,J1,J2,converged"]
        for q in data["per_weight"]:
            if q.get("error"):
                continue
            rows.append(",".join([_fmt(q["mu"]), _fmt(q["J1"]), _fmt(q["J2"]),
                                  _fmt(q["converged"])]))
        _write(args.all_out, "\n".join(rows) + "\n")
        print("wrote %s" % args.all_out)
    if args.trajectories:
        os.makedirs(args.trajectories, exist_ok=True)
        front_mus = {p["mu"] for p in front}
        for q in data["per_weight"]:
            if q.get("error") or q["mu"] not in front_mus or q.get("x") is None:
                continue
            xs, us = q["x"], q["u"]
            n, m = len(xs[0]), len(us[0]) if us else 0
            head = ["k"] + ["x%d" % (i + 1) for i in range(n)] \
                + ["u%d" % (i + 1) for i in range(m)]
            rows = [",".join(head)]
            for k, xk in enumerate(xs):
                uk = us[k] if k < len(us) else [None] * m
                rows.append(",".join([str(k)] + [_fmt(v) for v in xk]
                                     + [_fmt(v) for v in uk]))
            path = os.path.join(args.trajectories,
                                "trajectory_mu%s.csv" % _fmt(q["mu"]))
            _write(path, "\n".join(rows) + "\n")
        print("wrote trajectories to %s" % args.trajectories)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dissipcert",
        description="Certify or refute strict dissipativity of weighted-sum "
                    "optimal control problems.")
    parser.add_argument("--server", default=None,
                        help="URL of a running service (default: in-process)")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("DISSIPCERT_THREADS",
                                                   os.cpu_count() or 1)),
                        help="worker threads for grid certification")
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("equilibrium", help="optimal equilibrium and multiplier")
    pe.add_argument("problem")
    pe.add_argument("--mu", type=float, default=0.5)
    pe.add_argument("--weights", default=None,
                    help="comma-separated weights (overrides --mu)")
    pe.add_argument("--json", default=None, help="write the full result here")
    pe.set_defaults(handler=cmd_equilibrium)

    ps = sub.add_parser("sweep", help="weight sweep: equilibria, multiplier "
                                      "curve, continuity scan")
    ps.add_argument("problem")
    ps.add_argument("--grid", type=int, default=83)
    ps.add_argument("--threshold", type=float, default=None,
                    help="jump threshold (default: adaptive)")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", default=None, help="CSV output path")
    ps.set_defaults(handler=cmd_sweep)

    pc = sub.add_parser("certify", help="dissipativity certificate(s)")
    pc.add_argument("problem")
    pc.add_argument("--mu", type=float, default=None)
    pc.add_argument("--grid", type=int, default=None,
                    help="certify on a weight grid instead of a single mu")
    pc.add_argument("--samples-grid", type=int, default=200)
    pc.add_argument("--samples-random", type=int, default=1000)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--lower-bound", default=None,
                    help="strictly convex lower bound expression")
    pc.add_argument("--out", default=None, help="JSON report path")
    pc.set_defaults(handler=cmd_certify)

    pl = sub.add_parser("lq", help="matrix-inequality analysis and "
                                   "multiplier linearity check")
    pl.add_argument("problem")
    pl.add_argument("--grid", type=int, default=101)
    pl.add_argument("--require-psd", action="store_true")
    pl.add_argument("--json", default=None)
    pl.set_defaults(handler=cmd_lq)

    pp = sub.add_parser("pareto", help="weighted-sum nondominated front")
    pp.add_argument("problem")
    pp.add_argument("--x0", required=True, help="comma-separated initial state")
    pp.add_argument("--horizon", type=int, default=10)
    pp.add_argument("--grid", type=int, default=101)
    pp.add_argument("--restarts", type=int, default=5)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out", default=None, help="front CSV path")
    pp.add_argument("--all-out", default=None, help="per-weight CSV path")
    pp.add_argument("--trajectories", default=None,
                    help="directory for per-trajectory CSVs")
    pp.set_defaults(handler=cmd_pareto)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    client = ApiClient(server=args.server)
    try:
        return args.handler(client, args)
    except CliError as err:
        print("error: %s" % err, file=sys.stderr)
        return 1
    except httpx.HTTPError as err:
        print("error: cannot reach server: %s" % err, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
