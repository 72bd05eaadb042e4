import math

import pytest
import torch

from core.errors import EmptyTargetError, ShapeError
from core.message import LatentStates, TokenSequence
from services.service_e_text_decoder import (
    TextDecoder,
    causal_token_mask,
    greedy_decode,
    text_ce_loss,
)

PAD, BOS, EOS = 0, 1, 2


def make_decoder(**overrides):
    values = dict(vocab_size=64, dim=32, layers=2, heads=4, hidden=64, max_len=8)
    values.update(overrides)
    torch.manual_seed(0)
    return TextDecoder(**values).eval()


def test_logits_shape():
    decoder = make_decoder()
    logits = decoder(torch.randint(0, 64, (3, 5)), torch.randn(3, 4, 8, 32))
    assert logits.shape == (3, 5, 64)


def test_later_tokens_do_not_change_earlier_logits():
    decoder = make_decoder()
    context = LatentStates(torch.randn(1, 4, 8, 32))
    ids = torch.tensor([[BOS, 10, 11, 12, 13]])
    base = decoder(ids, context)
    for position in range(1, 5):
        changed = ids.clone()
        changed[0, position] = 40
        out = decoder(changed, context)
        assert torch.equal(out[:, :position], base[:, :position])


def test_zero_cross_attention_equals_the_text_only_decoder():
    decoder = make_decoder()
    decoder.zero_cross_attention()
    ids = torch.tensor([[BOS, 5, 6]])
    with_states = decoder(ids, torch.randn(1, 4, 8, 32))
    assert torch.equal(with_states, decoder(ids, torch.randn(1, 32, 32)))
    assert torch.equal(with_states, decoder(ids, None))


def test_length_outside_positions_raises():
    decoder = make_decoder(max_len=4)
    with pytest.raises(ShapeError):
        decoder(torch.zeros(1, 5, dtype=torch.long))
    with pytest.raises(ShapeError):
        decoder(torch.zeros(1, 0, dtype=torch.long))


def test_uniform_logits_give_log_vocab_loss():
    logits = torch.zeros(2, 3, 64)
    targets = torch.tensor([[5, 6, EOS], [7, EOS, PAD]])
    assert text_ce_loss(logits, targets, PAD).item() == pytest.approx(math.log(64), abs=1e-12)


def test_cross_entropy_matches_oracle_and_ignores_pad():
    torch.manual_seed(1)
    logits = torch.randn(2, 3, 7)
    targets = torch.tensor([[3, 4, PAD], [5, PAD, PAD]])
    loss = text_ce_loss(logits, targets, PAD)

    terms = []
    for b in range(2):
        for l in range(3):
            target = int(targets[b, l])
            if target == PAD:
                continue
            row = logits[b, l].tolist()
            log_z = math.log(sum(math.exp(v) for v in row))
            terms.append(log_z - row[target])
    assert abs(loss.item() - sum(terms) / len(terms)) < 1e-12


def test_label_smoothing_raises_loss_of_a_confident_prediction():
    logits = torch.full((1, 1, 8), -10.0)
    logits[0, 0, 3] = 10.0
    targets = torch.tensor([[3]])
    assert text_ce_loss(logits, targets, PAD, label_smoothing=0.2) > text_ce_loss(logits, targets, PAD)


def test_all_pad_target_raises():
    with pytest.raises(EmptyTargetError):
        text_ce_loss(torch.zeros(1, 2, 5), torch.full((1, 2), PAD), PAD)


def test_loss_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        text_ce_loss(torch.zeros(1, 3, 5), torch.ones(1, 2, dtype=torch.long), PAD)


def test_causal_token_mask():
    assert causal_token_mask(3).tolist() == [[False, True, True], [False, False, True], [False, False, False]]


def argmax_oracle(decoder, prompt, context, max_len):
    """Step-by-step re-decoding from scratch with a plain python argmax."""
    ids = list(prompt)
    out = []
    for _ in range(max_len):
        row = decoder(torch.tensor([ids]), context)[0, -1].tolist()
        token = max(range(len(row)), key=lambda i: (row[i], -i))
        out.append(token)
        if token == EOS:
            break
        ids.append(token)
    return out


def test_greedy_decode_matches_argmax_oracle():
    decoder = make_decoder()
    context = torch.randn(3, 4, 8, 32)
    results = greedy_decode(decoder, TokenSequence([BOS], 64), context, max_len=7, eos_id=EOS)
    assert len(results) == 3
    for row, result in enumerate(results):
        assert result.ids == argmax_oracle(decoder, [BOS], context[row:row + 1], 7)
        assert 1 <= len(result) <= 7


def test_greedy_stops_at_eos():
    decoder = make_decoder()
    with torch.no_grad():
        decoder.head.weight.zero_()
        decoder.head.bias.zero_()
        decoder.head.bias[EOS] = 5.0
    result = greedy_decode(decoder, TokenSequence([BOS], 64), None, max_len=7, eos_id=EOS)
    assert [seq.ids for seq in result] == [[EOS]]


def test_greedy_ties_pick_the_lowest_id():
    decoder = make_decoder()
    with torch.no_grad():
        decoder.head.weight.zero_()
        decoder.head.bias.zero_()
    result = greedy_decode(decoder, TokenSequence([BOS], 64), None, max_len=3, eos_id=EOS)
    assert result[0].ids == [0, 0, 0]


def test_greedy_max_len_one_and_overflow():
    decoder = make_decoder()
    context = torch.randn(2, 4, 8, 32)
    result = greedy_decode(decoder, torch.tensor([[BOS], [BOS]]), context, max_len=1, eos_id=EOS)
    assert [len(seq) for seq in result] == [1, 1]
    with pytest.raises(ShapeError):
        greedy_decode(decoder, TokenSequence([BOS], 64), context, max_len=0, eos_id=EOS)
    with pytest.raises(ShapeError, match="exceeds"):
        greedy_decode(decoder, TokenSequence([BOS, 5], 64), context, max_len=8, eos_id=EOS)
