import pytest

from core.bench import BenchShape, loglog_slope, run_benchmark, variant_counts
from core.errors import ConfigError


@pytest.fixture
def desk_report(desk_config):
    return run_benchmark(desk_config, [4, 8, 16, 32], timed=False)


def test_ttm_per_step_cost_is_flat_in_chunks(desk_report):
    slopes = desk_report["variants"]["ttm"]["slopes"]
    assert abs(slopes["per_step_activations"]) < 0.1
    assert slopes["total_activations"] == pytest.approx(1.0, abs=1e-9)


def test_transformer_scores_grow_quadratically(desk_report):
    slopes = desk_report["variants"]["transformer"]["slopes"]
    assert slopes["attention_scores"] >= 1.5
    assert slopes["attention_scores"] == pytest.approx(2.0, abs=1e-9)


def test_single_chunk_variants_are_within_a_factor_of_two(desk_report):
    single = desk_report["single_chunk_activations"]
    assert single == {"transformer": 26880, "cls": 41216, "perceiver": 23040, "ttm": 33216}
    assert desk_report["single_chunk_ratio"] < 2


def test_ttm_is_cheaper_than_the_transformer_at_long_clips(desk_report):
    assert desk_report["ttm_vs_transformer"]["chunks"] == 32
    assert desk_report["ttm_vs_transformer"]["activation_ratio"] < 1


def test_counts_by_hand(desk_config):
    shape = BenchShape.from_config(desk_config)
    counts = variant_counts("transformer", shape, 2)
    # 4 layers of 4*40*40 scores, 5*40*32 projections, 40*96 feed-forward
    assert counts["attention_scores"] == 4 * 4 * 40 * 40
    assert counts["total_activations"] == 4 * (4 * 40 * 40 + 5 * 40 * 32 + 40 * 96)
    with pytest.raises(ConfigError):
        variant_counts("lstm", shape, 2)


def test_loglog_slope():
    assert loglog_slope([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)


@pytest.mark.parametrize("t_list, repetitions", [([4, 8], 5), ([8, 4, 16], 5), ([0, 1, 2], 5), ([1, 2, 4], 4)])
def test_invalid_benchmark_settings_raise(desk_config, t_list, repetitions):
    with pytest.raises(ConfigError):
        run_benchmark(desk_config, t_list, repetitions=repetitions, timed=False)


def test_timed_run_reports_wall_clock(micro_config):
    report = run_benchmark(micro_config, [1, 2, 4], variants=["transformer", "ttm"])
    for result in report["variants"].values():
        assert all(row["wall_ms_median"] > 0 for row in result["rows"])
        assert "wall_ms_median" in result["slopes"]
    assert report["dtype"] == "float32"
    assert "wall_ratio" in report["ttm_vs_transformer"]
