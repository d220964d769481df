import numpy as np
import pytest

from lfdepth.pipeline import PipelineConfig, run
from lfdepth.synth import Layer, SceneSpec, Texture, canonical_scene, synth_lightfield


def two_layer(d_bg=0.0, d_fg=2.0, rect=(20, 20, 44, 44), scale=6, seeds=(11, 23)):
    return SceneSpec(
        layers=(
            Layer(d_bg, Texture("checker", scale=scale, seed=seeds[0])),
            Layer(d_fg, Texture("checker", scale=scale, seed=seeds[1]), rect=rect),
        ),
        disparity_min=-1.0,
        disparity_max=3.0,
    )


def plane(d=1.0, scale=4, seed=3):
    return SceneSpec(layers=(Layer(d, Texture("noise", scale=scale, seed=seed)),), disparity_min=-2.0, disparity_max=2.0)


@pytest.fixture(scope="session")
def canonical():
    """Canonical 9x9x64x64 scene with ground truth."""
    return synth_lightfield(canonical_scene(), 9, 9, 64, 64)


@pytest.fixture(scope="session")
def canonical_run(canonical):
    lf, gt = canonical
    return run(lf, PipelineConfig(threads=4))


@pytest.fixture(scope="session")
def small():
    """5x5x32x32 two-layer scene, cheap enough for per-module tests."""
    spec = two_layer(rect=(10, 10, 22, 22), scale=4)
    return synth_lightfield(spec, 5, 5, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance" not in rep.nodeid:
                continue
            detail = "; ".join(v for k, v in rep.user_properties if k == "acceptance")
            name = rep.nodeid.split("::")[-1].removeprefix("test_")
            lines.append((name, "PASS" if outcome == "passed" else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status, detail in sorted(lines, key=lambda x: int(x[0].split("_")[1])):
            terminalreporter.write_line(f"{status} {name}: {detail}")
