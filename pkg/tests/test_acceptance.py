"""Top-level acceptance gauntlet: one test per shipped guarantee.

Each test prints a single PASS/FAIL line with the measured values at the
stated tolerance (visible under ``pytest -s``) and then asserts.  The
heavy self-check suites run once per session via cached fixtures.
"""

import pathlib
import subprocess
import sys
import time

import numpy as np
import pytest

from cgamotion import fixtures, verify

REPO = pathlib.Path(__file__).resolve().parent.parent


def _report(ok: bool, line: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {line}")
    assert ok, line


@pytest.fixture(scope="module")
def algebra_suite():
    return {c.name: c for c in verify.run_suite("algebra")}


@pytest.fixture(scope="module")
def physics_suite():
    return {c.name: c for c in verify.run_suite("physics")}


def test_algebra_products_and_null_cone(algebra_suite):
    table = algebra_suite["algebra.blade-products"]
    null = algebra_suite["algebra.null-cone"]
    secs = algebra_suite["algebra.runtime-seconds"]
    ok = table.measured == 0.0 and null.measured <= 1e-9 \
        and secs.measured < 10.0
    _report(ok, "algebra: 32x32 blade products exact "
                f"(max diff {table.measured!r}), 10^4 versor sandwiches "
                f"max |X^2| = {null.measured:.3e} <= 1e-9, "
                f"{secs.measured:.2f}s < 10s")


def test_skinning_matches_matrix_blend_oracle():
    checks = {c.name: c for c in verify.run_suite("skinning")}
    blend = checks["skinning.matrix-blend-equivalence"]
    bind = checks["skinning.bind-pose-identity"]
    secs = checks["skinning.runtime-seconds"]
    ok = blend.measured <= 1e-6 and bind.measured <= 1e-9 \
        and secs.measured < 5.0
    _report(ok, "skinning: 200v/4b over 60 poses, max |delta| vs matrix "
                f"blend = {blend.measured:.3e} <= 1e-6, bind pose error "
                f"{bind.measured:.3e} <= 1e-9, {secs.measured:.2f}s < 5s")


def test_interpolation_type_closure(algebra_suite):
    kinds = algebra_suite["algebra.blend-kind-mismatches"]
    off = algebra_suite["algebra.blend-off-pattern"]
    ok = kinds.measured == 0.0 and off.measured <= 1e-6
    _report(ok, "type closure: 1000 same-kind pairs x t grid, "
                f"{int(kinds.measured)} kind mismatches, off-pattern mass "
                f"{off.measured:.3e} <= 1e-6")


def test_codec_bounds_and_monotonicity():
    checks = {c.name: c for c in verify.run_suite("codec")}
    err = checks["codec.max-vertex-error"]
    keys = checks["codec.key-budget"]
    mono = checks["codec.epsilon-monotonicity-violations"]
    ok = err.measured <= 1e-3 and keys.measured <= keys.bound \
        and mono.measured == 0.0
    _report(ok, "codec: smooth 120-frame fixture at eps=1e-3, max vertex "
                f"error {err.measured:.3e} <= 1e-3, keys "
                f"{int(keys.measured)} <= {int(keys.bound)} (50% of "
                f"frames), {int(mono.measured)} monotonicity violations")


def test_bandwidth_ratio_and_lossy_session():
    started = time.perf_counter()
    checks = {c.name: c for c in verify.run_suite("net")}
    clean = checks["net.snapshot-payload-ratio"]
    ratio = checks["net.lossy-protocol-ratio"]
    err = checks["net.lossy-rendered-error"]
    elapsed = time.perf_counter() - started
    ok = clean.measured == 4.0 and ratio.measured >= 4.0 \
        and err.measured <= 5e-2 and elapsed < 30.0
    _report(ok, f"bandwidth: snapshot-only payload ratio "
                f"{clean.measured!r} == 4.0 exactly; lossy walk session "
                f"(10% loss, 40±10 ms) ratio {ratio.measured:.2f} >= 4.0 "
                f"with rendered error {err.measured:.3e} <= 5e-2, "
                f"{elapsed:.2f}s < 30s")


def test_wire_goldens_byte_identical():
    mismatched = []
    for name, msg in fixtures.golden_messages():
        committed = (REPO / "fixtures" / "golden" / f"{name}.hex")
        pinned = "".join(committed.read_text().split())
        if msg.to_bytes().hex() != pinned:
            mismatched.append(name)
    ok = not mismatched
    _report(ok, "wire goldens: snapshot/delta/softbody/ack encode "
                f"byte-identical to committed hex (mismatched: "
                f"{mismatched or 'none'})")


def test_softbody_invariance_recovery_handle(physics_suite):
    rigid = physics_suite["softbody.rigid-invariance"]
    recov = physics_suite["softbody.perturbation-recovery"]
    deform = physics_suite["softbody.center-handle-deformation"]
    reach = physics_suite["softbody.center-handle-distance"]
    ok = rigid.measured <= 1e-9 and recov.measured < 1e-3 \
        and deform.measured <= 1e-9 and reach.measured <= 1e-3
    _report(ok, "soft body: rigid-motion corrections "
                f"{rigid.measured:.3e} <= 1e-9, perturbation recovery "
                f"{recov.measured:.3e} < 1e-3 within 200 steps "
                f"(dt=1/60, alpha=0.5), center handle deformation "
                f"{deform.measured:.3e} <= 1e-9 at target distance "
                f"{reach.measured:.3e}")


def test_rope_knot_suture(physics_suite):
    strain = physics_suite["rope.hanging-strain"]
    knot = physics_suite["rope.knot-min-distance"]
    suture = physics_suite["rope.suture-separation"]
    ok = strain.measured <= 0.01 and knot.measured >= knot.bound \
        and suture.measured <= 1e-3
    _report(ok, "rope/knot: hanging equilibrium strain "
                f"{strain.measured:.4f} <= 1%, trefoil after 1000 pull "
                f"steps min distance {knot.measured:.4f} >= radius "
                f"{knot.bound}, suture separation {suture.measured:.3e} "
                f"<= 1e-3 at compliance 0")


def test_run_invocations_byte_identical(tmp_path):
    scenarios = [
        ("net", ["run", "net", "--fixture", "walk", "--snapshot-every",
                 "30", "--loss", "0.1", "--seed", "7"]),
        ("soft", ["run", "soft", "--body", "jello", "--steps", "40"]),
        ("codec", ["run", "codec", "--track", "smooth", "--epsilon",
                   "1e-3", "--format", "jsonl"]),
    ]
    different = []
    for name, args in scenarios:
        outputs = []
        for attempt in range(2):
            out = tmp_path / f"{name}-{attempt}"
            proc = subprocess.run(
                [sys.executable, "-m", "cgamotion.cli", *args,
                 "--out", str(out)],
                capture_output=True, text=True, cwd=REPO)
            assert proc.returncode == 0, proc.stderr
            outputs.append(out.read_bytes())
        if outputs[0] != outputs[1]:
            different.append(name)
    ok = not different
    _report(ok, "determinism: seeded run invocations byte-identical "
                f"across executions (differing: {different or 'none'})")
