"""Encoders, vocabulary, token embedding and positional encoding."""

import numpy as np
import pytest

from condsum.dataset import AnnotationTrack, VideoRecord, generate_synthetic
from condsum.encoding import (
    FrameFeatures,
    Vocabulary,
    embed_query,
    encode_video,
    load_features,
    save_features,
    sinusoidal_positional_encoding,
)
from condsum.errors import ValidationError


@pytest.fixture(scope="module")
def record():
    return generate_synthetic(1, 12, with_query=True, seed=2)[0]


class TestPositionalEncoding:
    def test_shape_and_range(self):
        pe = sinusoidal_positional_encoding(10, 16)
        assert pe.shape == (10, 16)
        assert np.all(np.abs(pe) <= 1.0)

    def test_rows_at_distinct_positions_differ(self):
        for dim in (2, 3, 8, 64):
            pe = sinusoidal_positional_encoding(50, dim)
            for i in range(50):
                for j in range(i + 1, 50):
                    assert not np.allclose(pe[i], pe[j]), (i, j, dim)


class TestVocabulary:
    def test_reserved_rows_and_lookup(self):
        vocab = Vocabulary.build(["dog park", "park bench"])
        assert vocab.tokens[0] == "<unk>" and vocab.tokens[1] == "<pad>"
        ids = vocab.encode("park dragon")
        assert ids[0] == vocab.index["park"]
        assert ids[1] == vocab.index["<unk>"]  # out of vocabulary

    def test_case_folding(self):
        vocab = Vocabulary.build(["Dog Park"])
        assert vocab.encode("DOG")[0] == vocab.index["dog"]


class TestEmbedQuery:
    def test_token_mode_shape(self):
        vocab = Vocabulary.build(["dog park"])
        tm = embed_query("dog park", vocab, 16)
        assert tm.T.shape == (2, 16)

    def test_repeated_word_rows_differ_through_positions(self):
        vocab = Vocabulary.build(["dog"])
        tm = embed_query("dog dog", vocab, 16)
        assert not np.allclose(tm.T[0], tm.T[1])

    def test_bow_mode_is_order_free(self):
        vocab = Vocabulary.build(["dog park bench"])
        a = embed_query("dog dog park", vocab, 16, mode="bow")
        b = embed_query("park dog dog", vocab, 16, mode="bow")
        assert a.T.shape == (1, 16)
        np.testing.assert_array_equal(a.T, b.T)
        np.testing.assert_allclose(a.T.sum(), 1.0)

    def test_token_mode_is_order_sensitive(self):
        vocab = Vocabulary.build(["dog park"])
        a = embed_query("dog park", vocab, 16)
        b = embed_query("park dog", vocab, 16)
        assert not np.allclose(a.T, b.T)

    def test_empty_query_rejected(self):
        vocab = Vocabulary.build(["x"])
        with pytest.raises(ValueError):
            embed_query("  ", vocab, 8)

    def test_deterministic_across_calls(self):
        vocab = Vocabulary.build(["dog park"])
        a = embed_query("dog park", vocab, 32, seed=4)
        b = embed_query("dog park", vocab, 32, seed=4)
        np.testing.assert_array_equal(a.T, b.T)


class TestEncoders:
    @pytest.mark.parametrize("encoder", ["toy", "per_frame_2d", "spatiotemporal"])
    def test_shape_determinism_finiteness(self, record, encoder):
        a = encode_video(record, encoder, visual_dim=32, seed=5)
        b = encode_video(record, encoder, visual_dim=32, seed=5)
        assert a.matrix.shape == (record.n_frames, 32)
        assert np.all(np.isfinite(a.matrix))
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_identical_frames_identical_rows_for_per_frame_encoders(self, record):
        frames = np.repeat(record.frames[:1], 4, axis=0)
        rec = VideoRecord(
            "dup", 1.0, [AnnotationTrack("a", np.zeros(4))], frames=frames, query=None
        )
        for encoder in ("toy", "per_frame_2d"):
            feats = encode_video(rec, encoder, 16, seed=0).matrix
            for i in range(1, 4):
                np.testing.assert_array_equal(feats[0], feats[i])

    def test_temporal_window_breaks_frame_identity(self, record):
        # two identical frames in different temporal contexts
        frames = record.frames[[0, 5, 0, 7]].copy()
        rec = VideoRecord(
            "ctx", 1.0, [AnnotationTrack("a", np.zeros(4))], frames=frames, query=None
        )
        feats = encode_video(rec, "spatiotemporal", 16, seed=0).matrix
        assert not np.allclose(feats[0], feats[2])

    def test_feature_passthrough_checks_width(self):
        rec = VideoRecord(
            "feat", 1.0, [AnnotationTrack("a", np.zeros(3))],
            features=np.ones((3, 16), dtype=np.float32),
        )
        out = encode_video(rec, "toy", visual_dim=16, seed=0)
        assert out.matrix.shape == (3, 16)
        with pytest.raises(ValidationError):
            encode_video(rec, "toy", visual_dim=64, seed=0)

    def test_unknown_encoder(self, record):
        with pytest.raises(ValueError):
            encode_video(record, "resnet50", 16, 0)

    def test_toy_encoder_separates_planted_block(self, record):
        feats = encode_video(record, "toy", 32, seed=1).matrix
        scores = record.annotations[0].frame_scores
        block = scores == 1.0
        gap = np.linalg.norm(feats[block].mean(0) - feats[~block].mean(0))
        spread = feats[~block].std()
        assert gap > spread  # the planted frames are linearly separable


def test_feature_cache_round_trip(tmp_path, record):
    feats = encode_video(record, "toy", 24, seed=9)
    path = tmp_path / "v.feat"
    save_features(feats, path, seed=9)
    back = load_features(path)
    assert back.encoder_id == feats.encoder_id
    np.testing.assert_allclose(back.matrix, feats.matrix, atol=1e-6)  # float32 storage
