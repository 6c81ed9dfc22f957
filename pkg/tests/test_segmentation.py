import numpy as np
import pytest

from specsaliency import segmentation
from specsaliency.audio import Spectrogram
from specsaliency.errors import DomainError, InfeasibleError
from specsaliency.segmentation import (
    SegmentationConfig,
    multiscale_segment,
    patch_count,
    read_segmentation,
    slic,
    write_segmentation,
)


def spec(frames):
    return Spectrogram(frames=np.asarray(frames, dtype=float))


def four_connected(labels, label):
    """Oracle: exhaustive flood fill over one label's cells."""
    cells = set(zip(*np.nonzero(labels == label)))
    if not cells:
        return False
    start = next(iter(cells))
    seen = {start}
    stack = [start]
    while stack:
        t, c = stack.pop()
        for dt, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = (t + dt, c + dc)
            if nxt in cells and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen == cells


class TestPatchCount:
    def test_asr_table(self):
        # long-audio patch counts for the 7.5 s threshold
        assert [patch_count(10.0, 7.5, phi) for phi in (400, 500, 600)] == [
            3000, 3750, 4500,
        ]

    def test_st_table(self):
        assert [patch_count(6.0, 5.0, phi) for phi in (400, 500, 600)] == [
            2000, 2500, 3000,
        ]

    def test_below_threshold_linear(self):
        assert patch_count(2.0, 7.5, 400) == 800

    def test_minimum_two(self):
        assert patch_count(0.001, 7.5, 400) == 2

    def test_monotone_in_duration(self):
        values = [patch_count(d, 7.5, 400) for d in np.linspace(0.1, 12, 60)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_constant_past_threshold(self):
        assert patch_count(7.5, 7.5, 500) == patch_count(30.0, 7.5, 500)

    def test_domain_errors(self):
        for args in [(-1, 7.5, 400), (5, 0, 400), (5, 7.5, 0)]:
            with pytest.raises(DomainError):
                patch_count(*args)


class TestSlic:
    def test_constant_grid_quadrants(self):
        s = spec(np.ones((20, 20)))
        seg = slic(s, 4, SegmentationConfig())
        assert seg.n_patches == 4
        counts = np.bincount(seg.labels.ravel())
        assert np.all(counts == 100)
        for lab in range(4):
            assert four_connected(seg.labels, lab)

    def test_two_band_separation(self):
        frames = np.zeros((30, 20))
        frames[:15] = 0.0
        frames[15:] = 5.0
        seg = slic(spec(frames), 2, SegmentationConfig())
        assert seg.n_patches == 2
        assert len(np.unique(seg.labels[:15])) == 1
        assert len(np.unique(seg.labels[15:])) == 1
        assert seg.labels[0, 0] != seg.labels[-1, 0]

    def test_random_connectivity_oracle(self):
        rng = np.random.default_rng(11)
        seg = slic(spec(rng.normal(size=(50, 80))), 100, SegmentationConfig())
        assert seg.n_patches <= 100
        labels = np.unique(seg.labels)
        assert labels.min() == 0 and labels.max() == seg.n_patches - 1
        for lab in labels:
            assert four_connected(seg.labels, lab)

    def test_full_coverage_and_dense_ids(self):
        rng = np.random.default_rng(5)
        for trial in range(3):
            frames = rng.normal(size=(40, 30))
            seg = slic(spec(frames), 30, SegmentationConfig())
            assert seg.labels.shape == frames.shape
            assert np.array_equal(
                np.unique(seg.labels), np.arange(seg.n_patches)
            )

    def test_phi_monotone_patch_count(self):
        rng = np.random.default_rng(7)
        s = spec(rng.normal(size=(100, 80)))
        cfg = SegmentationConfig()
        counts = []
        for phi in (400, 500, 600):
            k = patch_count(s.duration_s, cfg.tau_s, phi)
            counts.append(slic(s, k, cfg).n_patches)
        assert counts[0] <= counts[1] <= counts[2]

    def test_infeasible_k(self):
        with pytest.raises(InfeasibleError):
            slic(spec(np.ones((4, 4))), 17, SegmentationConfig())

    def test_k_below_two(self):
        with pytest.raises(DomainError):
            slic(spec(np.ones((4, 4))), 1, SegmentationConfig())

    def test_high_sigma_is_grid_like(self):
        # heavy smoothing erases structure, so patches hug their bounding box
        rng = np.random.default_rng(13)
        frames = rng.normal(size=(60, 60))

        def mean_fill_ratio(seg):
            ratios = []
            for lab in range(seg.n_patches):
                ts, cs = np.nonzero(seg.labels == lab)
                area = (ts.max() - ts.min() + 1) * (cs.max() - cs.min() + 1)
                ratios.append(len(ts) / area)
            return float(np.mean(ratios))

        smooth = slic(spec(frames), 36, SegmentationConfig(sigma=10.0))
        assert mean_fill_ratio(smooth) > 0.9

    def test_determinism(self):
        rng = np.random.default_rng(17)
        frames = rng.normal(size=(40, 40))
        a = slic(spec(frames), 25, SegmentationConfig())
        b = slic(spec(frames), 25, SegmentationConfig())
        assert np.array_equal(a.labels, b.labels)


class TestMultiscale:
    def test_st_five_seconds(self):
        cfg = SegmentationConfig(tau_s=5.0)
        ks = [patch_count(5.0, cfg.tau_s, phi) for phi in cfg.phis]
        assert ks == [2000, 2500, 3000]

    def test_asr_ten_seconds(self):
        cfg = SegmentationConfig(tau_s=7.5)
        ks = [patch_count(10.0, cfg.tau_s, phi) for phi in cfg.phis]
        assert ks == [3000, 3750, 4500]

    def test_one_second_linear(self):
        cfg = SegmentationConfig(tau_s=7.5)
        ks = [patch_count(1.0, cfg.tau_s, phi) for phi in cfg.phis]
        assert ks == [400, 500, 600]

    def test_three_maps(self):
        rng = np.random.default_rng(3)
        s = spec(rng.normal(size=(100, 80)))
        maps = multiscale_segment(s, SegmentationConfig())
        assert len(maps) == 3
        assert [m.scale_phi for m in maps] == [400.0, 500.0, 600.0]
        for m in maps:
            assert m.labels.shape == s.frames.shape


class TestSegmentationFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(23)
        seg = slic(spec(rng.normal(size=(30, 20))), 12, SegmentationConfig())
        seg.scale_phi = 500.0
        path = tmp_path / "m.seg"
        write_segmentation(path, seg, 12)
        back = read_segmentation(path)
        assert np.array_equal(back.labels, seg.labels)
        assert back.n_patches == seg.n_patches
        assert back.scale_phi == 500.0

    def test_config_validation(self):
        with pytest.raises(DomainError):
            SegmentationConfig(phis=(400.0, -1.0))
        with pytest.raises(DomainError):
            SegmentationConfig(tau_s=0.0)
