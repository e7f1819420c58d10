"""Command-line entry point: ``qdlock <subcommand> [options]``.

Options can also come from a flat ``key = value`` file passed with
``--config``; explicit flags win over the file, the file wins over
defaults.  Keys that no subcommand understands are rejected.

Exit codes: 0 success, 1 bad configuration, 2 decode failure,
3 infeasible plan.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
import scipy.fft as sfft

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DECODE = 2
EXIT_INFEASIBLE = 3


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _seed(text) -> int:
    return int(str(text), 0)


@dataclass(frozen=True)
class Opt:
    key: str
    flag: str
    kind: Callable[[Any], Any]
    default: Any
    help: str
    switch: bool = False


GLOBAL = [
    Opt("seed", "--seed", _seed, 0, "root seed for every random stream"),
    Opt("out", "--out", str, "out", "output directory"),
    Opt("threads", "--threads", int, 1, "FFT worker threads"),
]

SESSION = [
    Opt("master_seed", "--master-seed", _seed, 1, "public codebook seed"),
    Opt("K", "--K", int, None, "codebook lines (power of two); default from the key budget"),
    Opt("n", "--n", int, 126, "photons per codebook line"),
    Opt("d", "--d", float, 64.0, "channel dimension used by the key budget"),
    Opt("x", "--x", int, 35, "RS(63, x) data symbols"),
    Opt("mode", "--mode", str, "analytic", "analytic or physical channel"),
    Opt("p_err", "--perr", float, 0.10, "analytic symbol error probability"),
    Opt("p_loss", "--ploss", float, 0.0, "per-use erasure probability (analytic)"),
    Opt("p_dark", "--pdark", float, 0.0, "dark-count substitution probability (physical)"),
    Opt("herald", "--herald", _bool, True, "physical mode: keep only detected photons (true/false)"),
    Opt("sigma", "--sigma", float, 100.0, "beam waist in SLM pixels"),
    Opt("pad", "--pad", int, 3, "zero-padding factor"),
    Opt("alpha", "--alpha", float, 0.0, "misfocus in rad/pixel^2"),
]

COMMANDS: dict[str, list[Opt]] = {
    "plan": [
        Opt("d", "--d", _float_list, [64.0], "channel dimension(s), comma separated"),
        Opt("n", "--n", _int_list, [63, 126], "block length(s), comma separated"),
        Opt("x", "--x", _int_list, None, "RS data lengths; default 1..63"),
        Opt("c", "--c", float, 0.5, "security exponent"),
    ],
    "estimate-d": [
        Opt("practical", "--practical", _bool, False, "print the detector-limited dimension", True),
        Opt("sigma", "--sigma", float, 100.0, "beam waist in SLM pixels"),
        Opt("trials", "--trials", int, 300, "masks per message and repetition"),
        Opt("repetitions", "--repetitions", int, 10, "independent repetitions"),
        Opt("alpha", "--alpha", float, 0.0, "misfocus in rad/pixel^2"),
        Opt("alpha_sweep", "--alpha-sweep", _bool, False, "sweep misfocus up to 50% crosstalk", True),
        Opt("method", "--method", str, "fit", "Eve spread: fit or moment"),
        Opt("pad", "--pad", int, 3, "zero-padding factor"),
    ],
    "simulate-optics": [
        Opt("sigma", "--sigma", float, 100.0, "beam waist in SLM pixels"),
        Opt("pad", "--pad", int, 3, "zero-padding factor"),
        Opt("message", "--message", int, 0, "linear-phase symbol 0..63"),
        Opt("mask_seed", "--mask-seed", _seed, None, "Alice's scrambling mask seed"),
        Opt("receiver_seed", "--receiver-seed", _seed, None, "receiver mask seed"),
        Opt("alpha", "--alpha", float, 0.0, "misfocus in rad/pixel^2"),
        Opt("format", "--format", str, "bin", "probability-map format: bin, csv or none"),
    ],
    "transmit": SESSION + [
        Opt("packets", "--packets", int, 420, "RS packets to send"),
        Opt("eve", "--eve", _bool, False, "also run the random-guess eavesdropper", True),
        Opt("eve_per", "--eve-per", str, "photon", "Eve re-guesses per photon or per block"),
        Opt("min_success", "--min-success", float, 1.0, "success rate below this exits 2"),
        Opt("rotate_keys", "--rotate-keys", _bool, False, "switch lines using delivered key", True),
    ],
    "analyze": [
        Opt("transcript", "--transcript", str, None, "transcript CSV to summarise"),
        Opt("tables", "--tables", _bool, False, "write key-rate / allocation / success tables", True),
        Opt("success_x", "--success-x", _int_list, [35, 45, 51, 55, 61], "x values for success.csv"),
        Opt("packets", "--packets", int, 420, "packets per success point"),
        Opt("p_err", "--perr", float, 0.10, "analytic symbol error probability"),
    ],
}

KNOWN_KEYS = {o.key for o in GLOBAL} | {o.key for opts in COMMANDS.values() for o in opts}


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = dict(parser["run"])
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdlock", description="Quantum data locking planner and simulator.")
    parser.add_argument("--config", default=None, help="flat key = value config file")
    for o in GLOBAL:
        parser.add_argument(o.flag, dest=o.key, default=None, help=o.help)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", dest="sub_config", default=None, help=argparse.SUPPRESS)
        for o in GLOBAL:
            p.add_argument(o.flag, dest="sub_" + o.key, default=None, help=argparse.SUPPRESS)
        for o in opts:
            if o.switch:
                p.add_argument(o.flag, dest=o.key, action="store_const", const="true",
                               default=None, help=o.help)
            else:
                p.add_argument(o.flag, dest=o.key, default=None, help=o.help)
    return parser


def resolve(argv: Sequence[str] | None = None) -> dict[str, Any]:
    """Parse flags, merge the config file, convert and validate types."""
    ns = build_parser().parse_args(argv)
    # global flags may also follow the subcommand
    for key in ["config"] + [o.key for o in GLOBAL]:
        late = getattr(ns, "sub_" + key)
        if late is not None:
            setattr(ns, key, late)
    raw = read_config(ns.config) if ns.config else {}
    cfg: dict[str, Any] = {"command": ns.command, "config": ns.config}
    for o in GLOBAL + COMMANDS[ns.command]:
        value = getattr(ns, o.key)
        if value is None:
            value = raw.get(o.key)
        if value is None:
            cfg[o.key] = o.default
            continue
        try:
            cfg[o.key] = o.kind(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {o.key}: {value!r}") from exc
    return cfg


def _describe(cfg: dict[str, Any]) -> str:
    keys = sorted(k for k in cfg if k not in ("command",))
    return "\n".join(f"{k} = {cfg[k]}" for k in keys)


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")


# ------------------------------------------------------------------ commands


def cmd_plan(cfg: dict[str, Any]) -> int:
    from . import budget

    xs = cfg["x"] or list(range(1, budget.RS_LENGTH + 1))
    for n in cfg["n"]:
        if n < 1:
            raise ConfigError("n must be >= 1")
    for x in xs:
        if not 1 <= x <= budget.RS_LENGTH:
            raise ConfigError("x must lie in 1..63")
    rows = []
    for d in cfg["d"]:
        if d < 2:
            raise ConfigError("d must be >= 2")
        rows.extend(budget.sweep_key_rate(d, cfg["n"], cfg["c"]))
    budget.write_keyrate_csv(os.path.join(cfg["out"], "keyrate.csv"), rows)
    lines = [f"{'n':>5} {'d':>8} {'key/photon':>11} feasible"]
    lines += [f"{r.n:>5} {r.d:>8g} {r.key_per_photon:>11.4f} {int(r.feasible)}" for r in rows]
    infeasible = False
    for d in cfg["d"]:
        for n in cfg["n"]:
            allocs = budget.sweep_allocation(d, n, xs, cfg["c"])
            name = f"alloc_d{d:g}_n{n}.csv"
            budget.write_allocation_csv(os.path.join(cfg["out"], name), allocs)
            if cfg["x"]:
                for a in allocs:
                    lines.append(f"d={d:g} n={n} x={a.rs_k}: message={a.message_bits:.4f} "
                                 f"newkey={a.newkey_bits:.4f} redundancy={a.redundancy_bits:.4f} "
                                 f"feasible={int(a.feasible)}")
                    infeasible |= not a.feasible
    print("\n".join(lines))
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def cmd_estimate_d(cfg: dict[str, Any]) -> int:
    from . import dimension
    from .optics import default_geometry

    if cfg["practical"]:
        _, geom = default_geometry(cfg["sigma"], pad=cfg["pad"])
        d = dimension.practical_dimension(geom)
        _write(os.path.join(cfg["out"], "dimension.txt"), f"d_practical = {d}")
        print(d)
        return EXIT_OK
    if cfg["method"] not in ("fit", "moment"):
        raise ConfigError("method must be fit or moment")
    common = dict(sigma=cfg["sigma"], trials=cfg["trials"], repetitions=cfg["repetitions"],
                  seed=cfg["seed"], pad=cfg["pad"], method=cfg["method"])
    if cfg["alpha_sweep"]:
        estimates = dimension.misfocus_sweep(**common)
    else:
        estimates = [dimension.estimate_dimension(alpha=cfg["alpha"], **common)]
    text = dimension.write_report(os.path.join(cfg["out"], "dimension.csv"), estimates)
    _write(os.path.join(cfg["out"], "dimension.txt"), text + "\n\n" + _describe(cfg))
    print(text)
    return EXIT_OK


def cmd_simulate_optics(cfg: dict[str, Any]) -> int:
    from .optics import (
        Misfocus,
        PhaseMask,
        apply_phase,
        bin_to_detector,
        default_geometry,
        gaussian_field,
        propagate,
        save_map_binary,
        save_map_csv,
    )

    if not 0 <= cfg["message"] < 64:
        raise ConfigError("message must lie in 0..63")
    if cfg["format"] not in ("bin", "csv", "none"):
        raise ConfigError("format must be bin, csv or none")
    phases, geom = default_geometry(cfg["sigma"], pad=cfg["pad"])
    field = apply_phase(gaussian_field(cfg["sigma"]), phases[cfg["message"]])
    for seed in (cfg["mask_seed"], cfg["receiver_seed"]):
        if seed is not None:
            field = apply_phase(field, PhaseMask.from_seed(seed))
    if cfg["alpha"]:
        field = apply_phase(field, Misfocus(cfg["alpha"]))
    pmap = propagate(field, geom)
    pmf = bin_to_detector(pmap, geom)
    if cfg["format"] == "bin":
        save_map_binary(os.path.join(cfg["out"], "probability_map.bin"), pmap, cfg["pad"])
    elif cfg["format"] == "csv":
        save_map_csv(os.path.join(cfg["out"], "probability_map.csv"), pmap)
    with open(os.path.join(cfg["out"], "detector_pmf.csv"), "w") as fh:
        fh.write("bin,probability\n")
        for i, p in enumerate(pmf.probs):
            fh.write(f"{'loss' if i == 64 else i},{p:.10g}\n")
    print(f"message={cfg['message']} argmax={pmf.argmax()} "
          f"target={pmf.lens[cfg['message']]:.4f} max_lens={pmf.lens.max():.4f} loss={pmf.loss:.4f}")
    return EXIT_OK


def cmd_transmit(cfg: dict[str, Any]) -> int:
    from . import analysis, protocol
    from .budget import BlockParams, allocate_bits

    try:
        channel = protocol.ChannelConfig(
            mode=cfg["mode"], p_err=cfg["p_err"], p_loss=cfg["p_loss"], p_dark=cfg["p_dark"],
            herald=cfg["herald"], sigma=cfg["sigma"], pad=cfg["pad"], alpha=cfg["alpha"])
    except protocol.ProtocolError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["eve_per"] not in ("photon", "block"):
        raise ConfigError("eve_per must be photon or block")
    if cfg["n"] < 1 or cfg["n"] % 63:
        raise ConfigError("n must be a positive multiple of 63")
    if not 1 <= cfg["x"] <= 62:
        raise ConfigError("x must lie in 1..62")
    if cfg["packets"] < 1:
        raise ConfigError("packets must be >= 1")
    alloc = allocate_bits(BlockParams(cfg["n"], cfg["d"]), cfg["x"])
    try:
        if not alloc.feasible:
            raise protocol.ProtocolError("no message bits left")
        protocol.plan_packet(alloc)
    except protocol.ProtocolError as exc:
        print(f"infeasible plan RS(63,{cfg['x']}) at d={cfg['d']:g}, n={cfg['n']}: {exc}")
        return EXIT_INFEASIBLE
    session = protocol.SessionConfig(
        master_seed=cfg["master_seed"], n=cfg["n"], d=cfg["d"], x=cfg["x"], K=cfg["K"],
        channel=channel, eve_per=cfg["eve_per"], rotate_keys=cfg["rotate_keys"])
    rng = np.random.default_rng(cfg["seed"])
    try:
        res = protocol.run_session(session, cfg["packets"], rng, eve=cfg["eve"])
    except protocol.ProtocolError as exc:
        raise ConfigError(str(exc)) from exc
    out = cfg["out"]
    protocol.write_transcript(os.path.join(out, "transcript.csv"), res.bob_records + res.eve_records)
    bob = analysis.accumulate_joint(res.bob_records)
    analysis.joint_table(os.path.join(out, "joint_bob.csv"), bob)
    lines = [
        f"packets = {res.packets}",
        f"success_rate = {res.success_rate:.6f}",
        f"decode_failures = {res.decode_failures}",
        f"log2_K = {res.book.log2_lines}",
        f"key_balance = {res.ledger.balance:g}",
        f"bob_symbol_accuracy = {_accuracy(res.bob_records):.6f}",
        f"bob_mi_bits = {analysis.mutual_information(bob):.4f}" if bob.total else "bob_mi_bits = nan",
    ]
    if cfg["eve"]:
        eve = analysis.accumulate_joint(res.eve_records)
        analysis.joint_table(os.path.join(out, "joint_eve.csv"), eve)
        lines.append(f"eve_symbol_accuracy = {_accuracy(res.eve_records):.6f}")
        lines.append(f"eve_mi_bits = {analysis.mutual_information(eve):.4f}" if eve.total
                     else "eve_mi_bits = nan")
    report = "\n".join(lines)
    _write(os.path.join(out, "report.txt"), report + "\n\n" + _describe(cfg))
    print(report)
    return EXIT_OK if res.success_rate >= cfg["min_success"] else EXIT_DECODE


def _accuracy(records) -> float:
    if not records:
        return float("nan")
    return float(np.mean([r.detected == r.message for r in records]))


def cmd_analyze(cfg: dict[str, Any]) -> int:
    from . import analysis, protocol

    if not cfg["transcript"] and not cfg["tables"]:
        raise ConfigError("analyze needs --transcript and/or --tables")
    lines = []
    if cfg["transcript"]:
        try:
            records = protocol.read_transcript(cfg["transcript"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read transcript: {exc}") from exc
        for party in sorted({r.party for r in records}):
            joint = analysis.accumulate_joint(r for r in records if r.party == party)
            analysis.joint_table(os.path.join(cfg["out"], f"joint_{party.lower()}.csv"), joint)
            mi = analysis.mutual_information(joint) if joint.total else float("nan")
            diag = joint.diagonal_mass() if joint.total else float("nan")
            lines.append(f"{party}: detections={joint.total} mi_bits={mi:.4f} diagonal={diag:.4f}")
    if cfg["tables"]:
        written = analysis.emit_tables(os.path.join(cfg["out"], "tables"),
                                       success_xs=cfg["success_x"], packets=cfg["packets"],
                                       p_err=cfg["p_err"], seed=cfg["seed"])
        lines += [f"wrote {p}" for p in written]
    print("\n".join(lines))
    return EXIT_OK


HANDLERS = {
    "plan": cmd_plan,
    "estimate-d": cmd_estimate_d,
    "simulate-optics": cmd_simulate_optics,
    "transmit": cmd_transmit,
    "analyze": cmd_analyze,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = resolve(argv)
        if cfg["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        os.makedirs(cfg["out"], exist_ok=True)
        with sfft.set_workers(cfg["threads"]):
            return HANDLERS[cfg["command"]](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
