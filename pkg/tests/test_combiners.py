import pytest
import torch

from core.errors import ConfigError, ShapeError
from core.message import CombinedLatents, TTMMemory
from services.service_c_combiner_hub import COMBINER_VARIANTS, build_combiner, mask_combiner_outputs
from services.service_c2_cls_combiner import CLSCombiner
from services.service_c3_perceiver_combiner import PerceiverCombiner
from services.service_c4_ttm_combiner import TTMCombiner
from utils.nn_substrate import seeded_generator

DESK = dict(dim=32, m=8, layers=2, heads=4, hidden=64,
            memory_size=16, read_size=32, process_layers=2, process_hidden=64, pool_hidden=32)


def make_combiner(variant, seed=0, **overrides):
    torch.manual_seed(seed)
    values = dict(DESK)
    values.update(overrides)
    return build_combiner(variant, **values).eval()


@pytest.mark.parametrize("variant", COMBINER_VARIANTS)
def test_output_shape(variant):
    combiner = make_combiner(variant)
    out = combiner(torch.randn(2, 4, 20, 32))
    assert isinstance(out, CombinedLatents)
    assert out.x.shape == (2, 4, 8, 32)
    assert out.chunks == 4 and out.m == 8


@pytest.mark.parametrize("chunks", [2, 4, 8])
@pytest.mark.parametrize("variant", COMBINER_VARIANTS)
def test_outputs_before_a_perturbed_chunk_are_bit_identical(variant, chunks):
    for seed in range(20):
        combiner = make_combiner(variant, seed=seed)
        generator = torch.Generator().manual_seed(seed)
        u = torch.randn(1, chunks, 20, 32, generator=generator)
        changed = int(torch.randint(1, chunks, (1,), generator=generator))
        perturbed = u.clone()
        perturbed[:, changed] += torch.randn(20, 32, generator=generator)
        base, out = combiner(u).x, combiner(perturbed).x
        assert torch.equal(out[:, :changed], base[:, :changed]), (variant, seed, changed)
        assert not torch.equal(out[:, changed], base[:, changed]), (variant, seed, changed)


@pytest.mark.parametrize("variant", ["transformer", "cls", "perceiver"])
def test_m_larger_than_features_per_chunk_is_rejected(variant):
    combiner = make_combiner(variant, m=21)
    with pytest.raises(ShapeError, match="m=21"):
        combiner(torch.randn(1, 2, 20, 32))


def test_input_must_be_chunked():
    with pytest.raises(ShapeError):
        make_combiner("transformer")(torch.randn(2, 20, 32))


def test_unknown_variant_raises():
    with pytest.raises(ConfigError, match="unknown combiner"):
        build_combiner("lstm", dim=8, m=2, layers=1, heads=2, hidden=16)


def test_transformer_keeps_the_last_m_positions_of_each_chunk():
    combiner = make_combiner("transformer")
    combiner.stack.zero_residual_branches()
    u = torch.randn(1, 3, 20, 32)
    out = combiner(u).x
    assert torch.equal(out, u[..., -8:, :])


def test_cls_with_one_token():
    torch.manual_seed(0)
    combiner = CLSCombiner(dim=8, m=1, layers=1, heads=2, hidden=16).eval()
    out = combiner(torch.randn(3, 2, 5, 8))
    assert out.x.shape == (3, 2, 1, 8)


def test_perceiver_first_step_is_cross_attention_pooling_of_the_first_chunk():
    torch.manual_seed(0)
    combiner = PerceiverCombiner(dim=8, m=3, layers=1, heads=2, hidden=16).eval()
    combiner.zero_residual_branches(keep_cross=True)
    u = torch.randn(1, 2, 5, 8)
    cross_attn = combiner.layers[0][0]
    latents = combiner.latents.unsqueeze(0)
    expected = latents + cross_attn(latents, context=torch.cat((u[:, 0], latents), dim=-2))
    assert torch.allclose(combiner(u).x[:, 0], expected, atol=1e-12)
    assert torch.allclose(combiner(u[:, :1]).x[:, 0], expected, atol=1e-12)


def test_ttm_memory_is_a_fixed_point_when_write_ignores_new_tokens():
    torch.manual_seed(0)
    ttm = TTMCombiner(dim=8, m=2, memory_size=4, read_size=4, process_layers=1,
                      process_hidden=16, heads=2, pool_hidden=8).eval()
    with torch.no_grad():
        row = torch.randn(8)
        ttm.memory_init.copy_(row.expand(4, -1))
        for layer in (ttm.write.score[0], ttm.write.score[2]):
            layer.weight.zero_()
            layer.bias.zero_()
        # only the memory group keeps finite logits
        ttm.write.group_bias.copy_(torch.tensor([[0.0], [-1e30], [-1e30]]).expand(3, 4))

    u_t = torch.randn(1, 6, 8)
    u = u_t.unsqueeze(1).expand(1, 5, 6, 8)
    combined, memories = ttm(u, return_memories=True)
    for memory in memories:
        assert torch.allclose(memory.features, row.expand(1, 4, 8), atol=1e-12)
    assert [memory.step for memory in memories] == [1, 2, 3, 4, 5, 6]
    for t in range(1, 5):
        assert torch.allclose(combined.x[:, t], combined.x[:, 0], atol=1e-12)


def test_ttm_step_matches_forward():
    ttm = make_combiner("ttm")
    u = torch.randn(2, 3, 20, 32)
    memory = ttm.initial_memory(2)
    steps = []
    for t in range(3):
        x_t, memory = ttm.step(u[:, t], memory)
        steps.append(x_t)
    assert torch.equal(torch.stack(steps, dim=1), ttm(u).x)


def test_ttm_output_is_recomputed_from_the_memory_snapshot_alone():
    ttm = make_combiner("ttm")
    u = torch.randn(2, 4, 20, 32)
    combined, memories = ttm(u, return_memories=True)
    assert len(memories) == 5
    for t in range(4):
        snapshot = TTMMemory(features=memories[t].features.clone(), step=memories[t].step)
        x_t, next_memory = ttm.step(u[:, t].clone(), snapshot)
        assert torch.equal(x_t, combined.x[:, t])
        assert torch.equal(next_memory.features, memories[t + 1].features)


def test_ttm_rejects_empty_memory():
    with pytest.raises(ShapeError):
        TTMCombiner(dim=8, m=2, memory_size=0)


def test_mask_ratio_zero_and_eval_mode_are_identity():
    x = CombinedLatents(torch.randn(2, 4, 8, 16))
    assert mask_combiner_outputs(x, 0.0).x is x.x
    assert torch.equal(mask_combiner_outputs(x, 0.75, training=False).x, x.x)


def test_mask_count_replays_the_seeded_draw():
    x = CombinedLatents(torch.randn(1, 16, 8, 4) + 10.0)      # T*m = 128 rows, none zero
    masked = mask_combiner_outputs(x, 0.75, generator=seeded_generator(5))
    zeroed = (masked.x == 0).all(dim=-1)
    draw = torch.rand((1, 16, 8), generator=seeded_generator(5), dtype=x.x.dtype)
    assert torch.equal(zeroed, draw < 0.75)
    assert 70 <= int(zeroed.sum()) <= 122
    kept = ~zeroed
    assert torch.equal(masked.x[kept], x.x[kept])


@pytest.mark.parametrize("ratio", [-0.1, 1.0])
def test_mask_ratio_out_of_range_raises(ratio):
    with pytest.raises(ConfigError):
        mask_combiner_outputs(CombinedLatents(torch.zeros(1, 1, 1, 1)), ratio)
