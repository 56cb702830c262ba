import numpy as np
import pytest

from decaylab._rng import Rng
from decaylab.errors import ConfigError
from decaylab.geom import Box, Frame, iou
from decaylab.synthvid import (
    FastMotion,
    ScaleRamp,
    SequenceConfig,
    generate_sequence,
)
from decaylab.trackers import (
    MosseConfig,
    SCALES_FINE,
    SCALES_GLOBAL,
    SiameseConfig,
    global_search,
    global_stage1,
    hybrid_step,
    local_search,
    mosse_detect,
    mosse_init,
    mosse_step,
    ncc_similarity,
    run_tracker,
    siamese_init,
    template_update,
    top_local_maxima,
)


def brute_ncc(image, templ):
    th, tw = templ.shape
    oh, ow = image.shape[0] - th + 1, image.shape[1] - tw + 1
    tz = templ - templ.mean()
    tn = np.sqrt((tz * tz).sum())
    out = np.zeros((oh, ow))
    for r in range(oh):
        for c in range(ow):
            win = image[r:r + th, c:c + tw]
            wz = win - win.mean()
            wn = np.sqrt((wz * wz).sum())
            if wn * tn > 1e-9:
                out[r, c] = (wz * tz).sum() / (wn * tn)
    return out


class TestScaleConstants:
    def test_fine_scales(self):
        assert SCALES_FINE == (0.9509, 0.9751, 1.0, 1.0255, 1.0517)

    def test_global_scales(self):
        assert len(SCALES_GLOBAL) == 11
        assert SCALES_GLOBAL[5] == 1.0
        assert SCALES_GLOBAL[0] == pytest.approx(2.0 ** -0.4)
        assert SCALES_GLOBAL[-1] == pytest.approx(2.0 ** 0.4)
        ratios = np.diff(np.log2(SCALES_GLOBAL))
        assert np.allclose(ratios, 0.08, atol=1e-12)


class TestNccSimilarity:
    def test_exact_copy_peaks_at_one(self):
        rng = Rng(1)
        px = rng.uniform_array(30 * 30).reshape(30, 30)
        f = Frame(px)
        templ = px[10:18, 5:13].copy()
        m = ncc_similarity(templ, f, Box(0, 0, 30, 30))
        r, c = np.unravel_index(np.argmax(m.values), m.values.shape)
        assert (r, c) == (10, 5)
        assert m.values[r, c] == pytest.approx(1.0, abs=1e-9)

    def test_negation_scores_minus_one(self):
        rng = Rng(2)
        px = rng.uniform_array(20 * 20).reshape(20, 20)
        f = Frame(px)
        templ = 1.0 - px[4:10, 4:10]  # inverted copy
        m = ncc_similarity(templ, f, Box(0, 0, 20, 20))
        assert m.values[4, 4] == pytest.approx(-1.0, abs=1e-9)

    def test_matches_brute_force(self):
        rng = Rng(3)
        px = rng.uniform_array(64).reshape(8, 8)
        templ = rng.uniform_array(9).reshape(3, 3)
        m = ncc_similarity(templ, Frame(px), Box(0, 0, 8, 8))
        assert np.abs(m.values - brute_ncc(px, templ)).max() < 1e-10

    def test_region_too_small_rejected(self):
        f = Frame(np.zeros((10, 10)))
        with pytest.raises(ValueError, match="smaller"):
            ncc_similarity(np.ones((6, 6)), f, Box(0, 0, 4, 4))

    def test_scale_resizes_template(self):
        rng = Rng(4)
        px = rng.uniform_array(30 * 30).reshape(30, 30)
        m = ncc_similarity(px[:8, :8].copy(), Frame(px), Box(0, 0, 30, 30), scale=2.0)
        assert m.values.shape == (30 - 16 + 1, 30 - 16 + 1)
        assert m.scale == 2.0


class TestSiameseInit:
    def test_self_match_local_search(self, static_sequence):
        s = siamese_init(static_sequence.frames[0], static_sequence.truth[0])
        p = local_search(s, static_sequence.frames[0])
        assert iou(p.box, static_sequence.truth[0]) > 0.9

    def test_constant_frame_rejected(self):
        f = Frame(np.full((40, 40), 0.5))
        with pytest.raises(ValueError):
            siamese_init(f, Box(10, 10, 12, 12))

    def test_absent_box_rejected(self, static_sequence):
        with pytest.raises(ValueError):
            siamese_init(static_sequence.frames[0], Box.absent())

    def test_outside_box_rejected(self, static_sequence):
        with pytest.raises(ValueError):
            siamese_init(static_sequence.frames[0], Box(90, 90, 16, 16))

    def test_template_normalized(self, static_sequence):
        s = siamese_init(static_sequence.frames[0], static_sequence.truth[0])
        assert s.template.mean() == pytest.approx(0.0, abs=1e-12)
        assert np.linalg.norm(s.template) == pytest.approx(1.0, abs=1e-12)


class TestNoUpdateInvariant:
    def test_template_never_changes_over_100_frames(self, moving_sequence):
        from decaylab.synthvid import extend_long

        seq = extend_long(moving_sequence, 2)  # 157 frames
        s = siamese_init(seq.frames[0], seq.truth[0])
        before = s.template.copy()
        for i in range(1, len(seq)):
            hybrid_step(s, seq.frames[i])
        assert np.array_equal(s.template, before)


class TestLocalSearch:
    def test_static_scene_within_one_pixel(self, static_sequence):
        s = siamese_init(static_sequence.frames[0], static_sequence.truth[0])
        for i in range(1, len(static_sequence)):
            p = hybrid_step(s, static_sequence.frames[i])
            t = static_sequence.truth[i]
            assert abs(p.box.x - t.x) < 1.0 and abs(p.box.y - t.y) < 1.0
            assert abs(p.box.w - t.w) < 1.0

    def test_fast_burst_drops_score(self):
        base = dict(width=96, height=96, length=30, seed=21, target_size=16,
                    velocity=0.5, jitter_sd=0.1)
        calm = generate_sequence(SequenceConfig(**base))
        burst = generate_sequence(
            SequenceConfig(**base, events=(FastMotion(15, 16, 40.0),))
        )

        def scores(seq):
            s = siamese_init(seq.frames[0], seq.truth[0],
                             SiameseConfig(global_T=None))
            return [hybrid_step(s, seq.frames[i]).score for i in range(1, len(seq))]

        assert min(scores(burst)) < min(scores(calm))

    def test_scale_ramp_drifts_scale_up(self):
        cfg = SequenceConfig(width=96, height=96, length=14, seed=22, target_size=16,
                             velocity=0.0, jitter_sd=0.0, start_center=(48, 48),
                             events=(ScaleRamp(2, 12, 1.35),))
        seq = generate_sequence(cfg)
        s = siamese_init(seq.frames[0], seq.truth[0], SiameseConfig(global_T=None))
        widths = [s.last_box.w]
        for i in range(1, len(seq)):
            hybrid_step(s, seq.frames[i])
            widths.append(s.last_box.w)
        assert widths[-1] > widths[0] * 1.15

    def test_window_fully_outside_gives_sentinel(self, static_sequence):
        s = siamese_init(static_sequence.frames[0], static_sequence.truth[0])
        s.last_box = Box(500.0, 500.0, 16.0, 16.0)
        p = local_search(s, static_sequence.frames[0])
        assert not p.box.present
        assert p.score == float("-inf")


class TestTopLocalMaxima:
    def test_exactly_n_when_enough_maxima(self):
        rng = Rng(5)
        vals = rng.uniform_array(40 * 40).reshape(40, 40)
        picks = top_local_maxima(vals, 10, 2)
        assert len(picks) == 10

    def test_suppression_radius(self):
        vals = np.zeros((20, 20))
        vals[5, 5] = 1.0
        vals[5, 7] = 0.9  # inside radius 3 of the first peak
        vals[15, 15] = 0.8
        picks = top_local_maxima(vals, 3, 3)
        assert picks[0] == (5, 5)
        assert (5, 7) not in picks
        assert (15, 15) in picks

    def test_deterministic_on_ties(self):
        vals = np.zeros((10, 10))
        vals[3, 3] = 1.0
        vals[7, 7] = 1.0
        picks = top_local_maxima(vals, 2, 1)
        assert picks[0] == (3, 3)  # row-major order among equal scores


class TestGlobalSearch:
    def test_recovers_after_teleport(self, ov_sequence):
        hybrid = run_tracker("siamese-no-update", ov_sequence)
        local = run_tracker("siamese-local-only", ov_sequence)

        def best_after_reentry(run):
            vals = []
            for p, t in list(zip(run.boxes, run.truth))[25:]:
                vals.append(iou(p, t) if p.present and t.present else 0.0)
            return max(vals)

        assert best_after_reentry(hybrid) > 0.5
        assert best_after_reentry(local) <= 0.5

    def test_first_frame_self_search(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        p = global_search(s, moving_sequence.frames[0])
        assert iou(p.box, moving_sequence.truth[0]) > 0.9

    def test_stage1_returns_top_n(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        _, centres = global_stage1(s, moving_sequence.frames[5])
        assert len(centres) == s.config.top_n

    def test_stage1_gain_invariant_argmax(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        f = moving_sequence.frames[10]
        m1, _ = global_stage1(s, f)
        for gain in (0.3, 0.6, 0.95):
            m2, _ = global_stage1(s, Frame(f.pixels * gain))
            assert np.argmax(m1.values) == np.argmax(m2.values)

    def test_score_is_map_max(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        p = global_search(s, moving_sequence.frames[7])
        assert p.score == p.map_summary.values.max()

    def test_frame_smaller_than_coarse_template_rejected(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        tiny = Frame(np.zeros((8, 8)))
        with pytest.raises(ValueError, match="coarse"):
            global_search(s, tiny)


class TestHybridSchedule:
    def test_global_frames_at_multiples_of_T(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0],
                         SiameseConfig(global_T=15))
        kinds = {}
        for i in range(1, len(moving_sequence)):
            p = hybrid_step(s, moving_sequence.frames[i])
            kinds[i + 1] = p.search_kind  # frame numbering counts init as 1
        for fi, kind in kinds.items():
            assert kind == ("global" if fi % 15 == 0 else "local")

    def test_T_one_is_all_global(self, moving_sequence):
        run = run_tracker("siamese-global-only", moving_sequence)
        assert set(run.kinds[1:]) == {"global"}

    def test_T_none_matches_pure_local_trajectory(self, moving_sequence):
        inf_T = run_tracker(
            "siamese-no-update", moving_sequence,
            siamese_config=SiameseConfig(global_T=None),
        )
        local = run_tracker("siamese-local-only", moving_sequence)
        assert inf_T.boxes == local.boxes
        assert inf_T.scores == local.scores


class TestTemplateUpdate:
    def test_not_permitted_identical(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        p = local_search(s, moving_sequence.frames[1])
        s2 = template_update(s, moving_sequence.frames[1], p, 0.3, permitted=False)
        assert s2 is s

    def test_alpha_zero_unchanged_up_to_renormalization(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        p = local_search(s, moving_sequence.frames[1])
        s2 = template_update(s, moving_sequence.frames[1], p, 0.0, permitted=True)
        assert np.allclose(s2.template, s.template, atol=1e-12)

    def test_alpha_one_full_replacement(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        f = moving_sequence.frames[1]
        p = local_search(s, f)
        s2 = template_update(s, f, p, 1.0, permitted=True)
        from decaylab.geom import extract_patch
        patch = extract_patch(f, p.box, 64, 64).pixels
        z = patch - patch.mean()
        expected = z / np.linalg.norm(z)
        assert np.allclose(s2.template, expected, atol=1e-12)

    def test_absent_prediction_rejected(self, moving_sequence):
        s = siamese_init(moving_sequence.frames[0], moving_sequence.truth[0])
        from decaylab.trackers import Prediction
        bad = Prediction(Box.absent(), float("-inf"), "local", None)
        with pytest.raises(ValueError):
            template_update(s, moving_sequence.frames[1], bad, 0.5, permitted=True)


def direct_dft2(a):
    h, w = a.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for y in range(h):
                for x in range(w):
                    acc += a[y, x] * np.exp(-2j * np.pi * (u * y / h + v * x / w))
            out[u, v] = acc
    return out


def direct_idft2(A):
    h, w = A.shape
    out = np.zeros((h, w), dtype=complex)
    for y in range(h):
        for x in range(w):
            acc = 0j
            for u in range(h):
                for v in range(w):
                    acc += A[u, v] * np.exp(2j * np.pi * (u * y / h + v * x / w))
            out[y, x] = acc / (h * w)
    return out


class TestMosse:
    def test_static_scene_stays_on_target(self, static_sequence):
        run = run_tracker("mosse", static_sequence)
        for p, t in zip(run.boxes, run.truth):
            assert iou(p, t) > 0.9

    def test_init_response_peaks_at_center(self, static_sequence):
        st = mosse_init(static_sequence.frames[0], static_sequence.truth[0])
        resp = mosse_detect(st, static_sequence.frames[0])
        r, c = np.unravel_index(np.argmax(resp), resp.shape)
        assert (r, c) == (st.win_h // 2, st.win_w // 2)

    def test_detection_matches_direct_dft_oracle(self):
        # tiny 8x8 instance: the whole frequency pipeline via brute-force DFT
        rng = Rng(60)
        px = rng.uniform_array(64).reshape(8, 8)
        f = Frame(px)
        st = mosse_init(f, Box(2, 2, 4, 4), MosseConfig(window_factor=2.0))
        assert (st.win_h, st.win_w) == (8, 8)

        from decaylab.trackers import _int_window, _preprocess
        patch = _int_window(f.pixels, st.cx, st.cy, st.win_h, st.win_w)
        pre = _preprocess(patch, st.hann)
        g = np.real(direct_idft2(st.gauss_freq))
        G = direct_dft2(g)
        F = direct_dft2(pre)
        H = (G * np.conj(F)) / (F * np.conj(F) + st.config.lam)
        oracle = np.real(direct_idft2(H * direct_dft2(pre)))
        got = mosse_detect(st, f)
        assert np.abs(got - oracle).max() < 1e-8

    def test_beta_zero_freezes_accumulators(self, static_sequence):
        st = mosse_init(static_sequence.frames[0], static_sequence.truth[0],
                        MosseConfig(beta=0.0))
        num0, den0 = st.num.copy(), st.den.copy()
        for i in range(1, 6):
            mosse_step(st, static_sequence.frames[i])
        assert np.array_equal(st.num, num0)
        assert np.array_equal(st.den, den0)

    def test_beta_one_is_latest_frame_filter(self, moving_sequence):
        st = mosse_init(moving_sequence.frames[0], moving_sequence.truth[0],
                        MosseConfig(beta=1.0))
        mosse_step(st, moving_sequence.frames[1])
        from decaylab.trackers import _int_window, _preprocess
        patch = _int_window(moving_sequence.frames[1].pixels, st.cx, st.cy,
                            st.win_h, st.win_w)
        F = np.fft.fft2(_preprocess(patch, st.hann))
        assert np.allclose(st.num, st.gauss_freq * np.conj(F), atol=1e-12)
        assert np.allclose(st.den, F * np.conj(F), atol=1e-12)

    def test_degenerate_window_rejected(self):
        f = Frame(np.full((40, 40), 0.25))
        with pytest.raises(ValueError):
            mosse_init(f, Box(10, 10, 10, 10))


class TestRunTracker:
    def test_unknown_kind_rejected(self, static_sequence):
        with pytest.raises(ConfigError):
            run_tracker("tld", static_sequence)

    def test_gated_requires_gate(self, static_sequence):
        with pytest.raises(ConfigError):
            run_tracker("hybrid-gated", static_sequence)

    def test_prediction_stream_shapes(self, moving_sequence):
        run = run_tracker("siamese-no-update", moving_sequence)
        n = len(moving_sequence)
        assert len(run.boxes) == len(run.scores) == len(run.kinds) == n
        assert run.kinds[0] == "init"

    def test_keep_maps(self, moving_sequence):
        run = run_tracker("siamese-no-update", moving_sequence, keep_maps=True)
        assert run.maps32 is not None
        assert all(m.shape == (32, 32) for m in run.maps32)

    def test_blind_update_changes_template_every_frame(self, moving_sequence):
        blind = run_tracker("hybrid-blind-update", moving_sequence, alpha=0.2)
        frozen = run_tracker("siamese-no-update", moving_sequence)
        assert blind.boxes != frozen.boxes

    def test_gate_threshold_to_one_degenerates_to_no_update(self, moving_sequence):
        # gate scores are clipped below 1 - 1e-12, so this threshold never fires
        from decaylab.gate import init_classifier

        gated = run_tracker(
            "hybrid-gated", moving_sequence, gate=init_classifier(1),
            gate_threshold=1.0 - 1e-13, gate_update_global_only=False,
        )
        frozen = run_tracker("siamese-no-update", moving_sequence)
        assert gated.boxes == frozen.boxes
        assert gated.scores == frozen.scores
