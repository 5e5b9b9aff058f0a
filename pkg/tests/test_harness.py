"""Experiment harness: engine/sequential agreement, determinism, grouping."""

import json

import numpy as np
import pytest

from streamgn import stats
from streamgn._engine import (
    CHUNK_SIZE,
    exploration_rng,
    replication_data,
    run_group_chunk,
)
from streamgn.harness import (
    Cell,
    ExperimentConfig,
    _build_groups,
    _group_task,
    default_checkpoints,
    run_curves,
    run_experiment,
    run_normality,
    run_replication_sequential,
    run_table,
    curves_config,
    normality_config,
    table1_config,
    table3_config,
)


def small_config(**kw):
    defaults = dict(
        cells=(Cell("asgn", 1.0, 0.66), Cell("sgd", 5.0, 0.66)),
        n=300,
        replications=8,
        init_radius=3.0,
        master_seed=0,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def engine_rows(config, rep):
    """Final engine state of every tag for one replication index."""
    out = {}
    for group in _build_groups(config):
        task = _group_task(config, group, config.collect_pivots)
        lo = (rep // CHUNK_SIZE) * CHUNK_SIZE
        res = run_group_chunk(task, lo, min(lo + CHUNK_SIZE, config.replications))
        for _, cell in group["members"]:
            out[cell.algorithm] = {k: (v[rep - lo] if v is not None else None)
                                   for k, v in res.items()}
    return out


# engine sse accumulators per reporting tag: averaged tags predict with
# theta_bar, the others with theta
SSE_KEY = {"asgn": "sse_bar", "asgd": "sse_bar", "asgn-raw": "sse_bar",
           "sgn": "sse_raw", "sgd": "sse_bar", "rls": "sse_raw"}


@pytest.mark.parametrize("rep", [0, 3])
def test_engine_matches_sequential_steps(rep):
    config = ExperimentConfig(
        cells=(
            Cell("sgn", c_beta=0.05, beta=0.2),
            Cell("asgn", 1.0, 0.66, c_beta=0.05, beta=0.1),
            Cell("asgn-raw", 1.0, 0.66, c_beta=0.05, beta=0.1),
            Cell("sgd", 5.0, 0.66),
            Cell("asgd", 5.0, 0.66),
        ),
        n=60,
        replications=4,
        init_radius=3.0,
        master_seed=11,
    )
    sequential = run_replication_sequential(config, rep)
    engine = engine_rows(config, rep)
    for tag in ("sgn", "asgn", "asgn-raw", "sgd", "asgd"):
        seq = sequential[tag]
        eng = engine[tag]
        assert np.abs(eng["theta"] - seq.theta).max() < 1e-12, tag
        if seq.theta_bar is not None:
            assert np.abs(eng["theta_bar"] - seq.theta_bar).max() < 1e-12, tag
        if seq.inverse is not None:
            assert np.abs(eng["inv"] - seq.inverse.inv).max() < 1e-12, tag
        assert abs(eng[SSE_KEY[tag]] - seq.sse) < 1e-9, tag


def test_engine_matches_sequential_on_linear_model():
    config = ExperimentConfig(
        cells=(Cell("rls"), Cell("sgn")),
        n=80,
        replications=2,
        init_radius=1.0,
        master_seed=4,
        model="linear",
        theta_true=(1.5, -0.5),
        covariate="normal",
        projection=False,
    )
    sequential = run_replication_sequential(config, 1)
    engine = engine_rows(config, 1)
    for tag in ("rls", "sgn"):
        assert np.abs(engine[tag]["theta"] - sequential[tag].theta).max() < 1e-12
        assert np.abs(engine[tag]["inv"] - sequential[tag].inverse.inv).max() < 1e-12


def test_replication_data_is_shared_across_groups():
    config = small_config()
    tasks = [_group_task(config, g, False) for g in _build_groups(config)]
    assert len(tasks) == 2
    t0a, xa, ya = replication_data(tasks[0], 5)
    t0b, xb, yb = replication_data(tasks[1], 5)
    assert np.array_equal(t0a, t0b)
    assert np.array_equal(xa, xb)
    assert np.array_equal(ya, yb)
    # initialization lands on the sphere of radius r0
    assert np.linalg.norm(t0a - np.array(config.theta_true)) == pytest.approx(3.0)


def test_exploration_draws_pre_drawn_block_equals_per_step_stream():
    block = exploration_rng(7, 2, 9).standard_normal((40, 3))
    rng = exploration_rng(7, 2, 9)
    steps = np.array([rng.standard_normal(3) for _ in range(40)])
    assert np.array_equal(block, steps)


def test_exploration_streams_differ_by_group_and_replication():
    a = exploration_rng(7, 0, 0).standard_normal(4)
    b = exploration_rng(7, 1, 0).standard_normal(4)
    c = exploration_rng(7, 0, 1).standard_normal(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_same_master_seed_reproduces_the_report():
    config = small_config()
    r1 = run_experiment(config)
    r2 = run_experiment(config)
    assert json.dumps(r1.rows, sort_keys=True) == json.dumps(r2.rows, sort_keys=True)
    assert json.dumps(r1.curves, sort_keys=True) == json.dumps(r2.curves, sort_keys=True)


def test_worker_count_does_not_change_results():
    base = small_config(replications=120, n=200)
    parallel = small_config(replications=120, n=200, jobs=3)
    r1 = run_experiment(base)
    r2 = run_experiment(parallel)
    assert json.dumps(r1.rows, sort_keys=True) == json.dumps(r2.rows, sort_keys=True)
    assert json.dumps(r1.curves, sort_keys=True) == json.dumps(r2.curves, sort_keys=True)


def test_tags_sharing_a_recursion_run_once_but_report_separately():
    config = ExperimentConfig(
        cells=(Cell("asgn", 1.0, 0.66), Cell("asgn-raw", 1.0, 0.66),
               Cell("sgd", 5.0, 0.66), Cell("asgd", 5.0, 0.66)),
        n=200, replications=5, init_radius=2.0, master_seed=1,
    )
    groups = _build_groups(config)
    assert len(groups) == 2
    assert {len(g["members"]) for g in groups} == {2}
    report = run_experiment(config)
    tags = [r["algorithm"] for r in report.rows]
    assert tags == ["asgn", "asgn-raw", "sgd", "asgd"]
    by_tag = {r["algorithm"]: r["mse"] for r in report.rows}
    # raw and averaged iterates of one recursion must differ
    assert by_tag["asgn"] != by_tag["asgn-raw"]


def test_pivot_values_match_direct_quadratic_form():
    config = ExperimentConfig(
        cells=(Cell("sgn"), Cell("asgn", 1.0, 0.66)),
        n=400, replications=6, init_radius=1.0, master_seed=3,
        collect_pivots=True,
    )
    report = run_normality(config)
    assert {p.algorithm for p in report.pivots} == {"sgn", "asgn"}
    sequential = run_replication_sequential(config, 0)
    theta_true = np.array(config.theta_true)
    for sample in report.pivots:
        state = sequential[sample.algorithm]
        iterate = state.theta_bar if sample.algorithm == "asgn" else state.theta
        s_n = np.linalg.inv(state.inverse.inv)
        expected = stats.pivot_cn(iterate, theta_true, s_n)
        assert sample.values[0] == pytest.approx(expected, rel=1e-8)
    for row in report.ks:
        assert set(row) >= {"algorithm", "ks", "ks_crit_99", "mean", "sample_size"}
        assert 0.0 <= row["ks"] <= 1.0


def test_failed_replications_are_flagged_and_excluded():
    # divergence-prone setup: large initialization, no projection, big steps
    config = ExperimentConfig(
        cells=(Cell("sgd", 5.0, 0.66),),
        n=400, replications=20, init_radius=60.0, master_seed=1,
        projection=False,
    )
    report = run_experiment(config)
    failure = report.failures[0]
    assert failure["failed"] > 0
    assert failure["flagged"] is True
    assert report.flagged_cells() == [failure]
    # the aggregate over surviving replications stays finite
    assert np.isfinite(report.rows[0]["mse"])


def test_benchmark_error_band_at_moderate_scale():
    config = ExperimentConfig(
        cells=(Cell("asgn", 1.0, 0.66),),
        n=3000, replications=40, init_radius=10.0, master_seed=0,
    )
    mse = run_table(config).rows[0]["mse"]
    assert 0.02 < mse < 0.12


def test_default_checkpoints_grid():
    grid = default_checkpoints(100_000)
    assert grid[0] == 100 and grid[-1] == 100_000
    assert len(grid) >= 25
    assert list(grid) == sorted(set(grid))
    assert default_checkpoints(50) == (50,)
    assert default_checkpoints(100) == (100,)


def test_explicit_checkpoints_are_normalized():
    config = small_config(checkpoints=(200, 100, 200, 50))
    assert config.checkpoints == (50, 100, 200, 300)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(cells=())
    with pytest.raises(ValueError):
        ExperimentConfig(cells=(Cell("rls"),))  # nonlinear default model
    with pytest.raises(ValueError):
        small_config(n=0)
    with pytest.raises(ValueError):
        small_config(replications=0)
    with pytest.raises(ValueError):
        small_config(jobs=0)
    with pytest.raises(ValueError):
        small_config(checkpoints=(0, 100))
    with pytest.raises(ValueError):
        small_config(checkpoints=(100, 500))
    with pytest.raises(ValueError):
        small_config(init_radius=-1.0)
    with pytest.raises(ValueError):
        small_config(sigma=0.0)
    with pytest.raises(ValueError):
        small_config(projection_radius=-2.0)
    with pytest.raises(ValueError):
        Cell("qn")
    with pytest.raises(ValueError):
        Cell("sgd", c_beta=0.1)
    with pytest.raises(ValueError):
        Cell("asgd", c_beta=0.1)


def test_prebuilt_study_configs():
    t1 = table1_config(reps=4, n=100)
    assert len(t1.cells) == 40
    assert {c.algorithm for c in t1.cells} == {"asgn", "asgn-raw"}
    t3 = table3_config(reps=4, n=100)
    assert len(t3.cells) == 60
    assert t3.init_radius == 5.0
    cv = curves_config(r0=12.0, reps=4, n=100)
    assert cv.init_radius == 12.0
    assert {c.algorithm for c in cv.cells} == {"sgn", "asgn-raw", "asgn", "sgd", "asgd"}
    nm = normality_config(reps=10, n=100)
    assert nm.collect_pivots is True


def test_curves_report_has_full_checkpoint_trajectories():
    config = small_config(n=500, checkpoints=tuple(range(50, 501, 50)))
    report = run_curves(config)
    for curve in report.curves:
        assert curve["checkpoints"] == list(range(50, 501, 50))
        assert len(curve["mse"]) == 10
        assert all(np.isfinite(v) for v in curve["mse"])
