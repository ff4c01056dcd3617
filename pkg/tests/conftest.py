"""Shared fixtures.

The toy overfit run is the one genuinely expensive artifact in the
suite (a few hundred Adam steps on a 16^3 person grid), so it is built
once per session and shared between the pipeline regression tests and
the acceptance suite. The acceptance tests also register one summary
line each, printed at the end of the run.
"""

import time

import pytest

from gridpose import AttentionConfig, RunConfig, SceneConfig, synth_scene, train_toy

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion_log():
    """Append one 'pass criterion N ...' line per acceptance criterion."""
    return ACCEPTANCE_LINES


def toy_scene_config(seed=4, **overrides):
    """Single person seen by 3 ring cameras; 1600mm person volume."""
    base = dict(
        seed=seed,
        n_people=1,
        space_extent=(2400.0, 2400.0, 2000.0),
        person_extent=1600.0,
        person_resolution=16,
        n_cameras=3,
        camera_radius=4000.0,
        camera_height=800.0,
        image_size=(128, 128),
        focal_px=100.0,
        heatmap_sigma=2.0,
    )
    base.update(overrides)
    return SceneConfig(**base)


def toy_run_config(steps=300, seed=0):
    attention = AttentionConfig(
        embed_dim=32, n_heads=2, bin_size=64, sinkhorn_iters=8, n_layers=1
    )
    return RunConfig(
        attention=attention,
        n_joints=15,
        grid_extent=1600.0,
        grid_resolution=16,
        residual_channels=(32,),
        train_steps=steps,
        lr=1e-3,
        optimizer="adam",
        seed=seed,
    )


@pytest.fixture(scope="session")
def toy_overfit():
    """300-step Adam overfit of the single-person scene (built once)."""
    scene = synth_scene(toy_scene_config())
    cfg = toy_run_config()
    t0 = time.perf_counter()
    result = train_toy(scene, cfg)
    seconds = time.perf_counter() - t0
    return {"scene": scene, "cfg": cfg, "result": result, "seconds": seconds}
