"""Command-line entry point: scenario runs, self-check suites, fixtures.

Subcommands
  run SCENARIO    execute one module pipeline and emit delimited metrics
  verify SUITE    run a self-check suite, printing pass/fail per invariant
  fixtures ...    list the built-in fixtures or write them to disk
  report ...      render figures + summary from a saved metrics file

Every run is deterministic: the same scenario, flags and seed produce
byte-identical output files.  Numbers are serialized with full precision
(shortest round-trip decimal form).  Exit codes are documented in
``docs/cli.md`` and mirror the error taxonomy in :mod:`cgamotion.errors`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import anim_codec, fixtures, net_sync, rope, skinning, softbody, verify
from .errors import ConfigError, EngineError, IoError

_MODEL_BUILTINS = {"arm": fixtures.arm_model, "walk": fixtures.walk_model}
_TRACK_BUILTINS = {"smooth": fixtures.smooth_track, "walk": fixtures.walk_track}
_BODY_BUILTINS = {"jello": lambda: fixtures.jello_body(drop_height=0.0),
                  "bar": fixtures.bar_body}
_ROPE_BUILTINS = {"hanging": fixtures.hanging_rope,
                  "trefoil": fixtures.trefoil_rope}
_TRACK_MODEL_PAIRING = {"smooth": "arm", "walk": "walk"}


# ------------------------------------------------------------ output plumbing

def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ";".join(_cell(v) for v in value)
    return str(value)


def _jsonable(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    return value


def _emit_rows(columns, rows, fmt: str, out: str | None) -> None:
    """Write rows as CSV or JSON-lines to ``out`` (stdout when None)."""
    lines = []
    if fmt == "csv":
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_cell(v) for v in row))
    else:
        for row in rows:
            lines.append(json.dumps(
                {c: _jsonable(v) for c, v in zip(columns, row)},
                separators=(",", ":")))
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from exc


def _metric_rows(pairs):
    return [(key, value) for key, value in pairs]


# ----------------------------------------------------------- input resolution

def _resolve(arg: str, builtins: dict, extension: str, loader, what: str):
    """Resolve a path-or-builtin-name argument.

    Tries the literal path, then the path with the canonical extension,
    then the basename as a built-in fixture name.
    """
    if os.path.exists(arg):
        return loader(arg)
    with_ext = arg + extension
    if os.path.exists(with_ext):
        return loader(with_ext)
    name = os.path.basename(arg)
    if name in builtins:
        return builtins[name]()
    raise ConfigError(
        f"unknown {what} {arg!r}: not a readable file and not one of "
        f"{', '.join(sorted(builtins))}")


def _load_model(arg: str):
    return _resolve(arg, _MODEL_BUILTINS, ".model", skinning.load_model,
                    "model")


def _load_track(arg: str):
    return _resolve(arg, _TRACK_BUILTINS, ".track", anim_codec.load_track,
                    "track")


def _load_body(arg: str):
    return _resolve(arg, _BODY_BUILTINS, ".body", softbody.load_body, "body")


def _load_rope(arg: str):
    return _resolve(arg, _ROPE_BUILTINS, ".rope", rope.load_rope, "rope")


# ------------------------------------------------------------- run scenarios

def _parse_pose(name: str, model):
    if name == "identity":
        # identity deformation: the bind pose itself, so the skinned
        # output reproduces the rest vertices
        if model.bind_pose is not None:
            return model.bind_pose
        return skinning.PoseSample.identity(model.bone_count)
    kind, _, arg = name.partition(":")
    try:
        if kind == "wave":
            return fixtures.arm_wave_pose(float(arg))
        if kind == "walk":
            return fixtures.walk_pose(int(arg))
    except ValueError as exc:
        raise ConfigError(f"bad pose argument {name!r}: {exc}") from exc
    raise ConfigError(
        f"unknown pose {name!r}: use identity, wave:PHASE or walk:FRAME")


def _run_skin(args) -> int:
    model = _load_model(args.model)
    pose = _parse_pose(args.pose, model)
    skinned = skinning.skin_model(model, pose)
    rows = [(m, p[0], p[1], p[2]) for m, p in enumerate(skinned)]
    _emit_rows(("vertex", "x", "y", "z"), rows, args.format, args.out)
    return 0


def _run_codec(args) -> int:
    track = _load_track(args.track)
    if args.model is not None:
        model = _load_model(args.model)
    else:
        pair = _TRACK_MODEL_PAIRING.get(os.path.basename(args.track))
        if pair is None:
            raise ConfigError(
                "--model is required when --track is not a built-in name")
        model = _MODEL_BUILTINS[pair]()
    keys = anim_codec.reduce_keyframes(track, model, args.epsilon)
    report = anim_codec.codec_report(track, keys, model)
    rows = _metric_rows(sorted(report.items()))
    _emit_rows(("metric", "value"), rows, args.format, args.out)
    return 0


def _run_net(args) -> int:
    if args.harness is not None:
        cfg = net_sync.load_harness_config(args.harness)
    else:
        cfg = net_sync.HarnessConfig()
    link = cfg.link
    cfg.frames = args.frames if args.frames is not None else cfg.frames
    if args.snapshot_every is not None:
        cfg.snapshot_every = args.snapshot_every
    cfg.link = net_sync.LinkConfig(
        latency_ms=args.latency if args.latency is not None
        else link.latency_ms,
        jitter_ms=args.jitter if args.jitter is not None else link.jitter_ms,
        loss_probability=args.loss if args.loss is not None
        else link.loss_probability,
        seed=args.seed if args.seed is not None else link.seed,
    )
    if args.fixture != "walk":
        raise ConfigError(f"unknown net fixture {args.fixture!r}: use walk")
    track = fixtures.walk_track()
    model = fixtures.walk_model()
    session = net_sync.run_pose_session(track, model, cfg)
    if args.format == "csv" and args.out is not None:
        net_sync.write_metrics_csv(session.rows, args.out)
    else:
        rows = [(r.time_ms, r.bytes_protocol, r.bytes_baseline,
                 r.rendered_error, r.dropped, r.delivered)
                for r in session.rows]
        _emit_rows(net_sync.METRICS_COLUMNS, rows, args.format, args.out)
    if args.out is not None:
        report = net_sync.bandwidth_report(session)
        for key in sorted(report):
            print(f"{key} {report[key]!r}")
    return 0


def _trajectory_rows(steps: int, sample_every: int, advance, positions):
    rows = []
    for step in range(steps + 1):
        if step % sample_every == 0:
            for idx, p in enumerate(positions()):
                rows.append((step, idx, p[0], p[1], p[2]))
        if step < steps:
            advance()
    return rows


def _run_soft(args) -> int:
    body = _load_body(args.body)
    body.positions[:, 1] += args.drop
    state = {"body": body}

    def advance():
        state["body"] = softbody.step(state["body"], args.dt,
                                      (0.0, -9.81, 0.0))

    rows = _trajectory_rows(args.steps, args.sample_every, advance,
                            lambda: state["body"].positions)
    _emit_rows(("step", "particle", "x", "y", "z"), rows, args.format,
               args.out)
    return 0


def _run_rope(args) -> int:
    line = _load_rope(args.rope)
    state = {"rope": line}

    def advance():
        state["rope"] = rope.rope_step(state["rope"], args.dt,
                                       (0.0, -9.81, 0.0))

    rows = _trajectory_rows(args.steps, args.sample_every, advance,
                            lambda: state["rope"].positions)
    _emit_rows(("step", "node", "x", "y", "z"), rows, args.format, args.out)
    return 0


def _run_knot(args) -> int:
    line = _load_rope(args.rope)
    pulled = fixtures.pull_knot(line, steps=args.steps, dt=args.dt)
    integrity = rope.knot_integrity_check(pulled)
    seg = np.linalg.norm(np.diff(pulled.positions, axis=0), axis=1)
    strain = float(np.max(np.abs(seg - pulled.rest_length))
                   / pulled.rest_length)
    end_sep = float(np.linalg.norm(pulled.positions[-1]
                                   - pulled.positions[0]))
    pair = integrity["pair"] if integrity["pair"] is not None else (-1, -1)
    rows = _metric_rows([
        ("passed", bool(integrity["passed"])),
        ("min_distance", integrity["min_distance"]),
        ("radius", integrity["radius"]),
        ("closest_segment_a", pair[0]),
        ("closest_segment_b", pair[1]),
        ("max_strain", strain),
        ("end_separation", end_sep),
    ])
    _emit_rows(("metric", "value"), rows, args.format, args.out)
    return 0


_SCENARIOS = {
    "skin": _run_skin,
    "codec": _run_codec,
    "net": _run_net,
    "soft": _run_soft,
    "rope": _run_rope,
    "knot": _run_knot,
}


# ----------------------------------------------------- verify / fixtures / report

def _cmd_verify(args) -> int:
    checks = verify.run_suite(args.suite)
    for check in checks:
        print(verify.format_check(check))
    return 0 if all(c.passed for c in checks) else 1


_FIXTURE_TABLE = (
    ("arm", "model", "three-bone tube with smooth ring weights"),
    ("walk", "model", "thirty-bone biped rig"),
    ("smooth", "track", "120-frame sinusoidal arm animation"),
    ("walk", "track", "240-frame walk cycle"),
    ("jello", "body", "4x4x4 particle cube, one cluster"),
    ("bar", "body", "8x4x4 particle bar for tearing"),
    ("hanging", "rope", "30-node rope pinned at one end"),
    ("trefoil", "rope", "70-node pre-threaded overhand knot"),
    ("session", "harness", "default lossy-link session settings"),
    ("golden", "wire", "pinned hex dumps of the four message types"),
)


def _cmd_fixtures(args) -> int:
    if args.action == "list":
        rows = _FIXTURE_TABLE
        _emit_rows(("name", "kind", "description"), rows, args.format,
                   args.out)
        return 0
    return _write_fixtures(args.dir)


_SESSION_HARNESS = """format harness 1
rate 60
frames 240
snapshot_every 30
delta_threshold 0.001
latency_ms 40.0
jitter_ms 10.0
loss 0.1
seed 7
"""


def _write_fixtures(out_dir: str) -> int:
    try:
        os.makedirs(os.path.join(out_dir, "golden"), exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    written = []

    def emit(name: str, writer):
        path = os.path.join(out_dir, name)
        writer(path)
        written.append(path)

    emit("arm.model", lambda p: skinning.save_model(fixtures.arm_model(), p))
    emit("smooth.track",
         lambda p: anim_codec.save_track(fixtures.smooth_track(), p))
    emit("jello.body", lambda p: softbody.save_body(fixtures.jello_body(), p))
    emit("bar.body", lambda p: softbody.save_body(fixtures.bar_body(), p))
    emit("hanging.rope",
         lambda p: rope.save_rope(fixtures.hanging_rope(), p))
    emit("trefoil.rope",
         lambda p: rope.save_rope(fixtures.trefoil_rope(), p))
    emit("session.harness", lambda p: _write_text(p, _SESSION_HARNESS))
    for name in sorted(fixtures.GOLDEN_HEX):
        hexstr = fixtures.GOLDEN_HEX[name]
        body = "\n".join(hexstr[i:i + 64] for i in range(0, len(hexstr), 64))
        emit(os.path.join("golden", f"{name}.hex"),
             lambda p, b=body: _write_text(p, b + "\n"))
    for path in written:
        print(path)
    return 0


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _cmd_report(args) -> int:
    from . import plots

    rows = net_sync.read_metrics_csv(args.metrics)
    for path in plots.render_session_report(rows, args.out_dir):
        print(path)
    return 0


# ------------------------------------------------------------------- parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgamotion",
        description="conformal-geometric-algebra motion engine scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one scenario")
    run_sub = run.add_subparsers(dest="scenario", required=True)

    def common(p):
        p.add_argument("--out", default=None,
                       help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for the scenario's random link/stream")

    p = run_sub.add_parser("skin", help="skin a model with one pose")
    p.add_argument("--model", required=True,
                   help="model file or built-in name (arm, walk)")
    p.add_argument("--pose", default="identity",
                   help="identity, wave:PHASE or walk:FRAME")
    common(p)

    p = run_sub.add_parser("codec", help="keyframe-reduce a pose track")
    p.add_argument("--track", required=True,
                   help="track file or built-in name (smooth, walk)")
    p.add_argument("--model", default=None,
                   help="model used for the vertex-error report")
    p.add_argument("--epsilon", type=float, default=1e-3,
                   help="vertex-error tolerance in model units")
    common(p)

    p = run_sub.add_parser("net", help="run the lossy-link pose session")
    p.add_argument("--fixture", default="walk", help="fixture pair (walk)")
    p.add_argument("--harness", default=None,
                   help="harness config file (flags override it)")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--snapshot-every", type=int, default=None)
    p.add_argument("--latency", type=float, default=None,
                   help="mean one-way latency in ms")
    p.add_argument("--jitter", type=float, default=None,
                   help="uniform latency jitter half-width in ms")
    p.add_argument("--loss", type=float, default=None,
                   help="independent drop probability in [0, 1)")
    common(p)

    p = run_sub.add_parser("soft", help="drop a soft body under gravity")
    p.add_argument("--body", default="jello",
                   help="body file or built-in name (jello, bar)")
    p.add_argument("--drop", type=float, default=1.0,
                   help="initial lift above the body's stored position")
    p.add_argument("--steps", type=int, default=240)
    p.add_argument("--dt", type=float, default=1.0 / 60.0)
    p.add_argument("--sample-every", type=int, default=1,
                   help="record positions every k-th step")
    common(p)

    p = run_sub.add_parser("rope", help="settle a rope under gravity")
    p.add_argument("--rope", default="hanging",
                   help="rope file or built-in name (hanging, trefoil)")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--dt", type=float, default=1.0 / 240.0)
    p.add_argument("--sample-every", type=int, default=1)
    common(p)

    p = run_sub.add_parser("knot", help="pull the knotted rope tight")
    p.add_argument("--rope", default="trefoil",
                   help="rope file or built-in name (hanging, trefoil)")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--dt", type=float, default=1.0 / 120.0)
    common(p)

    p = sub.add_parser("verify", help="run one self-check suite")
    p.add_argument("suite", help="algebra, skinning, codec, net or physics")

    p = sub.add_parser("fixtures", help="list or write built-in fixtures")
    fx = p.add_subparsers(dest="action", required=True)
    q = fx.add_parser("list", help="print the fixture catalogue")
    q.add_argument("--out", default=None)
    q.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    q = fx.add_parser("write", help="write fixture files to a directory")
    q.add_argument("--dir", default="fixtures")

    p = sub.add_parser("report",
                       help="render figures from a saved metrics file")
    p.add_argument("--metrics", required=True,
                   help="metrics CSV produced by `run net --out`")
    p.add_argument("--out-dir", required=True,
                   help="directory for figures and summary.csv")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            if getattr(args, "sample_every", 1) < 1:
                raise ConfigError("--sample-every must be >= 1")
            return _SCENARIOS[args.scenario](args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "fixtures":
            return _cmd_fixtures(args)
        return _cmd_report(args)
    except EngineError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
