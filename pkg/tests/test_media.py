import numpy as np
import pytest
import torch

from core.errors import DatasetError, ShapeError, VocabError
from services.service_a_media import make_batch, partition_media, reassemble_frames
from services.service_d_latent_autoreg import downsample_video
from utils.dataset_io import generate_clips, load_dataset, read_manifest, write_dataset
from utils.spectrogram import LOG_FLOOR, make_spectrogram, mel_band_centers, mel_filterbank
from utils.synth_generator import SynthConfig, family_answers, synth_generate
from utils.vocab import Vocab, detokenize, tokenize


# -- spectrogram -------------------------------------------------------------------

def test_spectrogram_has_one_band_row_per_frame():
    audio = np.random.default_rng(0).normal(0, 0.1, size=8 * 256)
    spec = make_spectrogram(audio, fps=8, n_mel=16, sample_rate=2048, num_frames=8)
    assert spec.shape == (8, 16)
    assert np.isfinite(spec).all()


def test_silence_maps_to_the_log_floor():
    spec = make_spectrogram(np.zeros(4 * 256), fps=8, n_mel=16, sample_rate=2048, num_frames=4)
    assert np.all(spec == np.log(LOG_FLOOR))


def test_tone_at_band_center_dominates_that_band():
    band = 12
    center = mel_band_centers(16, 2048)[band]
    bank = mel_filterbank(16, 256, 2048)
    nearest_bin = int(round(center / (2048 / 256)))
    assert int(np.argmax(bank[:, nearest_bin])) == band

    t = np.arange(8 * 256) / 2048
    spec = make_spectrogram(0.5 * np.sin(2 * np.pi * center * t), fps=8, n_mel=16, sample_rate=2048, num_frames=8)
    assert np.all(spec.argmax(axis=1) == band)


def test_short_audio_is_rejected():
    with pytest.raises(ShapeError):
        make_spectrogram(np.zeros(100), fps=8, n_mel=16, sample_rate=2048, num_frames=8)


# -- synthetic clips ---------------------------------------------------------------

def test_which_chunk_answer_names_the_event_chunk(make_clip):
    for seed in range(6):
        clip = make_clip("which-chunk", seed)
        chunk = clip.events["event_chunks"][0]
        assert clip.text == f"chunk {chunk}"
        peaks = clip.frames.reshape(4, 8, -1).max(axis=(1, 2))
        assert [t + 1 for t in range(4) if peaks[t] > 0.5] == [chunk]


def test_order_answer_follows_event_order(make_clip):
    for seed in range(6):
        clip = make_clip("order", seed)
        first, second = clip.events["event_chunks"]
        assert first != second
        assert clip.text == ("first a" if first < second else "first b")
        assert clip.text in family_answers(SynthConfig(family="order"))


def test_audio_gated_answer_changes_with_tone_only(make_clip):
    with_tone = make_clip("audio-gated", 3, tone_mode="co-occur")
    without = make_clip("audio-gated", 3, tone_mode="absent")
    assert np.array_equal(with_tone.frames, without.frames)
    assert with_tone.text == "tone yes" and without.text == "tone no"


def test_generation_is_reproducible(make_clip):
    a, b = make_clip("order", 11), make_clip("order", 11)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.audio, b.audio)
    assert a.text == b.text


def test_indivisible_frames_are_rejected():
    with pytest.raises(ShapeError):
        synth_generate(SynthConfig(frames=30, chunks=4), 0)


# -- partitioning -------------------------------------------------------------------

def test_partition_splits_frames_in_order(make_clip):
    clip = make_clip(frames=8, chunks=2)
    chunked = partition_media(clip, 2)
    assert chunked.frames_per_chunk == 4
    assert np.array_equal(chunked.video_chunks[0], clip.frames[:4])
    assert np.array_equal(chunked.video_chunks[1], clip.frames[4:])
    assert np.array_equal(reassemble_frames(chunked), clip.frames)
    assert [a.shape for a in chunked.audio_chunks] == [(4, 16), (4, 16)]


def test_chunk_intervals_do_not_overlap(make_clip):
    chunked = partition_media(make_clip(), 4)
    for (_, end), (start, _) in zip(chunked.intervals, chunked.intervals[1:]):
        assert end <= start
    assert chunked.intervals[0][0] == 0.0


def test_single_chunk_is_the_whole_clip(make_clip):
    clip = make_clip()
    chunked = partition_media(clip, 1)
    assert np.array_equal(chunked.video_chunks[0], clip.frames)


def test_partition_rejects_indivisible_chunks(make_clip):
    with pytest.raises(ShapeError):
        partition_media(make_clip(), 5)


def test_downsample_checkerboard_averages_to_half():
    board = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
    video = torch.as_tensor(board).reshape(1, 1, 1, 16, 16, 1)
    target = downsample_video(video, 2)
    assert target.v_small.shape == (1, 1, 1, 8, 8, 1)
    assert torch.all(target.v_small == 0.5)
    with pytest.raises(ShapeError):
        downsample_video(video, 3)


def test_make_batch_shapes(make_clip, vocab):
    clips = [make_clip(seed=s) for s in range(3)]
    batch = make_batch(clips, chunks=4, vocab=vocab, max_text_len=8)
    assert batch.video.shape == (3, 4, 8, 16, 16, 1)
    assert batch.spectrogram.shape == (3, 4, 8, 16)
    assert batch.recon_target.v_small.shape == (3, 4, 8, 4, 4, 1)
    assert batch.tokens.shape == (3, 8)
    assert batch.video.dtype == torch.float64
    assert [vocab.decode(row) for row in batch.tokens.tolist()] == [c.text for c in clips]
    assert len(batch.subset([2, 0])) == 2


# -- vocabulary ----------------------------------------------------------------------

def test_tokenize_examples(vocab):
    seq = tokenize("chunk 3", vocab)
    assert seq.ids == [vocab.bos_id, vocab.index["chunk"], vocab.index["3"], vocab.eos_id]
    assert tokenize("", vocab).ids == [vocab.bos_id, vocab.eos_id]


def test_every_answer_round_trips(vocab):
    for family in ("which-chunk", "order", "audio-gated"):
        for answer in family_answers(SynthConfig(family=family, frames=32, chunks=8)):
            assert detokenize(tokenize(answer, vocab), vocab) == answer


def test_out_of_vocabulary_word_raises(vocab):
    with pytest.raises(VocabError, match="out-of-vocabulary"):
        tokenize("chunk banana", vocab)


def test_vocab_file_round_trip(tmp_path, vocab):
    vocab.save(tmp_path / "vocab.txt")
    assert Vocab.load(tmp_path / "vocab.txt").tokens == vocab.tokens
    assert len((tmp_path / "vocab.txt").read_text().splitlines()) == 64


# -- dataset files -------------------------------------------------------------------

def test_dataset_round_trip_and_byte_identical_regeneration(tmp_path):
    config = SynthConfig(family="order")
    for name in ("a", "b"):
        write_dataset(tmp_path / name, generate_clips(config, 5, root_seed=7), config, root_seed=7)

    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()

    clips, manifest = load_dataset(tmp_path / "a")
    assert len(manifest["clips"]) == 5
    expected = generate_clips(config, 5, root_seed=7)
    for got, want in zip(clips, expected):
        assert np.array_equal(got.frames, want.frames)
        assert np.array_equal(got.audio, want.audio)
        assert got.text == want.text and got.seed == want.seed


def test_missing_manifest_raises(tmp_path):
    with pytest.raises(DatasetError):
        read_manifest(tmp_path)
