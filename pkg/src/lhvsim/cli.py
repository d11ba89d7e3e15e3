"""Command-line entry point.

Subcommands:

* ``simulate``  - run a protocol over a setting grid and certify it against
  the Born oracle (CSV of per-setting rows + JSON report);
* ``sweep``     - communication-cost-vs-p curve (CSV);
* ``props``     - analytic property suites for the hemisphere law and the
  sub-normalized density;
* ``wire-run``  - like simulate, but Alice and Bob run as separate processes
  over sockets; dumps and audits the transcript;
* ``audit``     - re-audit a transcript dumped by wire-run.

Exit codes: 0 = pass, 1 = verification failure, 2 = usage error.  A JSON
config file (flat keys mirroring the flags) can seed any subcommand; flags
override the file.  LHVSIM_SEED provides the default seed.

Every report embeds (seed, config hash, version); identical config and seed
produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bloch import State, tsirelson_settings
from .errors import DomainError, ProtocolViolationError, TransportError, ValidationError
from .protocols import PROTOCOLS, ProtocolId, simulate
from .sampling import improved_one_bit_threshold, n_of_p
from .verify import (
    chsh_from_result,
    chsh_setting_pairs,
    default_setting_pairs,
    fibonacci_sphere,
    hemisphere_law_check,
    density_property_suite,
    report_rows_csv,
    report_to_json,
    verification_report,
)
from .wire import WireConfig, audit_transcript, run_networked, Transcript

DEFAULT_PROPS_PLIST = "0.5,0.7,0.835,0.933,0.99,1.0"


def _default_seed() -> int:
    return int(os.environ.get("LHVSIM_SEED", "0"))


@dataclass
class RunConfig:
    """One simulate/wire-run invocation."""

    protocol: str = "trit"
    p: float = 0.7
    rounds: int = 100000
    seed: int = 0
    settings: str = "grid:20"  # grid:N | chsh | file:PATH
    mode: str = "in-process"  # in-process | networked
    workers: int = 1
    port: int = 0  # networked mode: referee port (0 = ephemeral)
    out_dir: str = "lhvsim_out"
    chsh: bool = False
    tolerance: Optional[float] = None


@dataclass
class SweepConfig:
    """Cost-curve sweep over the state parameter."""

    p_start: float = 0.5
    p_stop: float = 1.0
    p_step: float = 0.02
    rounds: int = 200000
    seed: int = 0
    out: str = "lhvsim_out/sweep.csv"


def _config_hash(cfg: dict) -> str:
    # hash only what determines the run's results: output locations and
    # worker counts do not change a single byte of the reports
    semantic = {k: v for k, v in cfg.items() if k not in ("out_dir", "out", "workers")}
    canon = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a flat JSON object")
    return data


def _merge_config(cls, file_cfg: dict, args: argparse.Namespace):
    """File values first, then any flag the user actually passed."""
    cfg = cls()
    fields = set(asdict(cfg))
    for key, val in file_cfg.items():
        if key not in fields:
            raise ValidationError(f"unknown config key {key!r}")
        setattr(cfg, key, val)
    for key in fields:
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg


def _parse_protocol(name: str) -> ProtocolId:
    for pid in ProtocolId:
        if pid.value == name:
            return pid
    raise ValidationError(
        f"unknown protocol {name!r}; choose from "
        + ", ".join(pid.value for pid in ProtocolId)
    )


def _parse_settings(spec: str, chsh: bool):
    if chsh or spec == "chsh":
        return chsh_setting_pairs(), True
    if spec.startswith("grid:"):
        n = int(spec.split(":", 1)[1])
        if n < 1:
            raise ValidationError("grid size must be >= 1")
        return default_setting_pairs(n), False
    if spec.startswith("file:"):
        path = spec.split(":", 1)[1]
        with open(path) as fh:
            raw = json.load(fh)
        pairs = [(np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for x, y in raw]
        return pairs, False
    raise ValidationError(f"bad settings spec {spec!r}; use grid:N, chsh or file:PATH")


def _write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(data)


def cmd_simulate(cfg: RunConfig) -> int:
    protocol = _parse_protocol(cfg.protocol)
    state = State(float(cfg.p))
    pairs, is_chsh = _parse_settings(cfg.settings, cfg.chsh)

    meta = {
        "command": "wire-run" if cfg.mode == "networked" else "simulate",
        "config_hash": _config_hash(asdict(cfg)),
        "mode": cfg.mode,
        "p": float(cfg.p),
        "protocol": protocol.value,
        "rounds": int(cfg.rounds),
        "seed": int(cfg.seed),
        "version": __version__,
    }
    out = Path(cfg.out_dir)

    transcript = None
    if cfg.mode == "networked":
        sim, transcript = run_networked(
            protocol,
            state,
            pairs,
            int(cfg.rounds),
            int(cfg.seed),
            config=WireConfig(referee_port=int(cfg.port)),
        )
    elif cfg.mode == "in-process":
        sim = simulate(
            protocol, state, pairs, int(cfg.rounds), int(cfg.seed), workers=int(cfg.workers)
        )
    else:
        raise ValidationError(f"bad mode {cfg.mode!r}; use in-process or networked")

    est = None
    if is_chsh:
        est = chsh_from_result(sim, tsirelson_settings())
    report = verification_report(sim, tolerance=cfg.tolerance, meta=meta, chsh=est)
    _write(out / "report.json", report_to_json(report))
    _write(out / "settings.csv", report_rows_csv(report))

    ok = report.passed
    if transcript is not None:
        (out / "transcript.bin").write_bytes(transcript.to_binary())
        _write(out / "transcript.json", transcript.summary_json())
        audit = audit_transcript(transcript, protocol)
        for finding in audit.findings:
            print(f"audit: {finding}", file=sys.stderr)
        ok = ok and audit.passed

    print(f"max TVD {report.max_tvd:.6f} (tolerance {report.tolerance:.6f})")
    print(f"mean bits/round {report.comm.mean_bits:.6f} +- {report.comm.stderr:.6f}")
    if est is not None:
        print(f"CHSH S = {est.value:.4f} +- {est.stderr:.4f} (oracle {est.oracle:.4f})")
    print(f"report written to {out / 'report.json'}")
    return 0 if ok else 1


def cmd_sweep(cfg: SweepConfig) -> int:
    if not (0.5 <= cfg.p_start <= cfg.p_stop <= 1.0):
        raise ValidationError("sweep range must satisfy 0.5 <= start <= stop <= 1")
    if cfg.p_step <= 0:
        raise ValidationError("sweep step must be positive")
    threshold = improved_one_bit_threshold()
    pair = default_setting_pairs(1)
    lines = ["p,protocol,alphabet,mean_bits,stderr,N_of_p"]
    rows = []
    p = cfg.p_start
    while p <= cfg.p_stop + 1e-12:
        p = min(round(p, 12), 1.0)
        if p > 0.5 and n_of_p(p) <= 1.0:
            pid = ProtocolId.IMPROVED_ONE_BIT
        else:
            pid = ProtocolId.TRIT
        sim = simulate(pid, State(p), pair, int(cfg.rounds), int(cfg.seed))
        n_val = n_of_p(p) if p > 0.5 else float("nan")
        rows.append((p, pid, sim))
        lines.append(
            ",".join(
                [
                    repr(float(p)),
                    pid.value,
                    str(PROTOCOLS[pid].alphabet_size),
                    repr(float(sim.mean_bits)),
                    repr(float(sim.bits_stderr)),
                    repr(float(n_val)) if np.isfinite(n_val) else "",
                ]
            )
        )
        p += cfg.p_step
    meta = f"# seed={cfg.seed} rounds={cfg.rounds} threshold={threshold!r} version={__version__} config_hash={_config_hash(asdict(cfg))}\n"
    _write(Path(cfg.out), meta + "\n".join(lines) + "\n")
    print(f"{len(rows)} points written to {cfg.out}")
    return 0


def cmd_props(p_list, rounds: int, trials: int, seed: int) -> int:
    ok = True

    # hemisphere-law grid: deterministic pairs over the sphere
    vs = fibonacci_sphere(4)
    ys = fibonacci_sphere(5) @ np.diag([1.0, -1.0, 1.0])
    for i, v in enumerate(vs):
        for j, y in enumerate(ys):
            r = hemisphere_law_check(v, y / np.linalg.norm(y), rounds, seed + 31 * i + j)
            status = "ok" if r.passed else "FAIL"
            if not r.passed:
                ok = False
                print(
                    f"hemisphere law {status}: v={v.round(4).tolist()} "
                    f"y={y.round(4).tolist()} p_hat={r.p_hat:.5f} want {r.expected:.5f}"
                )
    print(f"hemisphere-law grid: {len(vs) * len(ys)} pairs at {rounds} rounds "
          f"{'pass' if ok else 'FAIL'}")

    rep = density_property_suite(p_list, trials=trials, seed=seed)
    for m in rep.margins:
        print(
            f"density property ({m.name}): worst margin {m.worst:.3e} "
            f"(limit {m.limit:.0e}) {'pass' if m.passed else 'FAIL at ' + repr(m.witness)}"
        )
    for a in rep.areas:
        print(
            f"density area p={a.p}: mc {a.monte_carlo:.6f}, quad {a.quadrature:.9f}, "
            f"want {a.expected:.6f} {'pass' if a.passed else 'FAIL'}"
        )
    ok = ok and rep.passed
    return 0 if ok else 1


def cmd_audit(path: str) -> int:
    transcript = Transcript.from_binary(Path(path).read_bytes())
    rep = audit_transcript(transcript)
    print(
        f"{rep.rounds} rounds, {rep.messages} messages "
        f"(fraction {rep.message_fraction:.4f}), symbols {rep.symbol_histogram}"
    )
    for finding in rep.findings:
        print(f"finding: {finding}")
    print("audit pass" if rep.passed else "audit FAIL")
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lhvsim",
        description="Classical simulation of entangled-qubit measurement statistics.",
    )
    parser.add_argument("--version", action="version", version=f"lhvsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(sp):
        sp.add_argument("--config", help="JSON config file (flags override it)")
        sp.add_argument("--protocol", help="|".join(pid.value for pid in ProtocolId))
        sp.add_argument("--p", type=float, help="state parameter in [1/2, 1]")
        sp.add_argument("--rounds", type=int, help="rounds per setting pair")
        sp.add_argument("--seed", type=int, help="base seed (default: $LHVSIM_SEED or 0)")
        sp.add_argument("--settings", help="grid:N | chsh | file:PATH (default grid:20)")
        sp.add_argument("--chsh", action="store_const", const=True, default=None,
                        help="use the CHSH preset settings and report S")
        sp.add_argument("--tolerance", type=float, help="override the TVD pass threshold")
        sp.add_argument("--out-dir", dest="out_dir", help="directory for report files")
        sp.add_argument("--port", type=int, help="referee port for networked runs (0 = ephemeral)")

    sp = sub.add_parser("simulate", help="run a protocol and certify it")
    add_run_flags(sp)
    sp.add_argument("--mode", choices=["in-process", "networked"], help="execution mode")
    sp.add_argument("--workers", type=int, help="parallel workers (in-process mode)")

    sp = sub.add_parser("wire-run", help="networked run with transcript audit")
    add_run_flags(sp)

    sp = sub.add_parser("sweep", help="communication cost versus p (CSV)")
    sp.add_argument("--config", help="JSON config file (flags override it)")
    sp.add_argument("--p-start", dest="p_start", type=float)
    sp.add_argument("--p-stop", dest="p_stop", type=float)
    sp.add_argument("--p-step", dest="p_step", type=float)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output CSV path")

    sp = sub.add_parser("props", help="analytic property suites")
    sp.add_argument("--p-list", default=DEFAULT_PROPS_PLIST, help="comma separated p values")
    sp.add_argument("--rounds", type=int, default=100000, help="rounds per hemisphere-law pair")
    sp.add_argument("--trials", type=int, default=100000, help="random triples per p")
    sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("audit", help="audit a dumped transcript")
    sp.add_argument("transcript", help="path to transcript.bin")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("simulate", "wire-run"):
            file_cfg = _load_config_file(args.config)
            cfg = _merge_config(RunConfig, file_cfg, args)
            if args.command == "wire-run":
                cfg.mode = "networked"
            if getattr(args, "seed", None) is None and "seed" not in file_cfg:
                cfg.seed = _default_seed()
            return cmd_simulate(cfg)
        if args.command == "sweep":
            file_cfg = _load_config_file(args.config)
            cfg = _merge_config(SweepConfig, file_cfg, args)
            if args.seed is None and "seed" not in file_cfg:
                cfg.seed = _default_seed()
            return cmd_sweep(cfg)
        if args.command == "props":
            p_list = [float(tok) for tok in args.p_list.split(",") if tok]
            if not p_list or not all(0.5 <= p <= 1.0 for p in p_list):
                raise ValidationError("props p-list must lie in [1/2, 1]")
            seed = args.seed if args.seed is not None else _default_seed()
            return cmd_props(p_list, args.rounds, args.trials, seed)
        if args.command == "audit":
            return cmd_audit(args.transcript)
        raise ValidationError(f"unknown command {args.command!r}")
    except (ValidationError, DomainError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ProtocolViolationError, TransportError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
