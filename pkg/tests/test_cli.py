import json
from pathlib import Path

import numpy as np
import pytest

from specsaliency import cli, engine, toydata
from specsaliency.audio import read_spectrogram
from specsaliency.oracle import ToyOracle


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = toydata.make_corpus(root, n_utts=3, seed=5, min_segments=2,
                                   max_segments=3)
    return manifest


def run(args):
    return cli.main([str(a) for a in args])


def explain_args(corpus, out_dir, **overrides):
    args = [
        "explain", "--manifest", corpus, "--out-dir", out_dir,
        "--oracle", "toy", "--n-spec-iters", "60", "--n-tok-iters", "30",
        "--seed", "3",
    ]
    for key, val in overrides.items():
        flag = "--" + key.replace("_", "-")
        if val is True:
            args.append(flag)
        else:
            args += [flag, val]
    return args


class TestToyData:
    def test_expected_decode_matches_model(self, corpus):
        entries = json.loads(Path(corpus).read_text())
        orc = ToyOracle()
        from specsaliency.audio import cmvn, log_mel, read_wav

        for entry in entries:
            x = cmvn(log_mel(read_wav(corpus.parent / entry["wav_path"])))
            got = orc.decode(x).words()
            assert got == entry["reference"].split()

    def test_alignments_cover_tone_words(self, corpus):
        entries = json.loads(Path(corpus).read_text())
        for entry in entries:
            aligns = json.loads((corpus.parent / entry["alignment_path"]).read_text())
            words = [a["word"] for a in aligns]
            refs = entry["reference"].split()
            assert words == [w for w in refs if w != "MARK"]

    def test_no_trailing_c(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            letters = toydata.random_tone_sequence(rng)
            assert letters[-1] != "C"


class TestFeaturizeSegment:
    def test_featurize_then_segment(self, corpus, tmp_path):
        entries = json.loads(Path(corpus).read_text())
        wav = corpus.parent / entries[0]["wav_path"]
        spec_path = tmp_path / "utt.spec"
        assert run(["featurize", "--wav", wav, "--out", spec_path]) == 0
        spec = read_spectrogram(spec_path)
        assert spec.cmvn_applied and spec.n_mels == 80

        seg_dir = tmp_path / "segs"
        assert run(["segment", "--spec", spec_path, "--out-dir", seg_dir]) == 0
        files = sorted(p.name for p in seg_dir.glob("*.seg"))
        assert files == ["phi400.seg", "phi500.seg", "phi600.seg"]


class TestExplain:
    def test_bundles_written(self, corpus, tmp_path):
        out = tmp_path / "out"
        assert run(explain_args(corpus, out)) == 0
        entries = json.loads(Path(corpus).read_text())
        for entry in entries:
            bundle = engine.read_bundle(out / f"{entry['id']}.bundle")
            assert bundle.meta["method"] == "spes"
            assert bundle.meta["config"]["n_spec_iters"] == 60
        run_log = json.loads((out / "run.json").read_text())
        assert run_log["seed"] == 3
        assert not run_log["failures"]
        assert run_log["config"]["p_spec"] == 0.5

    def test_method_defaults_feature_wise(self, corpus, tmp_path):
        out = tmp_path / "fw"
        assert run(explain_args(corpus, out, method="feature-wise")) == 0
        run_log = json.loads((out / "run.json").read_text())
        assert run_log["config"]["p_spec"] == 0.7
        assert run_log["config"]["p_tok"] == 0.1

    def test_bubble_method_tagged(self, corpus, tmp_path):
        out = tmp_path / "bub"
        assert run(explain_args(corpus, out, method="bubble")) == 0
        entries = json.loads(Path(corpus).read_text())
        bundle = engine.read_bundle(out / f"{entries[0]['id']}.bundle")
        assert bundle.meta["method"] == "bubble"

    def test_ablation_flags(self, corpus, tmp_path):
        out = tmp_path / "abl"
        assert run(
            explain_args(corpus, out, no_multiscale=True, impact="prob-diff")
        ) == 0
        run_log = json.loads((out / "run.json").read_text())
        assert run_log["config"]["phis"] == [500.0]
        assert run_log["impact"] == "prob-diff"

    def test_config_file_and_override(self, corpus, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"p_spec": 0.3, "rng_seed": 9}))
        out = tmp_path / "cfgout"
        args = explain_args(corpus, out, config=cfg_path)
        args += ["--p-spec", "0.45"]
        assert run(args) == 0
        run_log = json.loads((out / "run.json").read_text())
        assert run_log["config"]["p_spec"] == 0.45  # flag beats file
        assert run_log["seed"] == 3  # flag from explain_args

    def test_bad_config_is_exit_2(self, corpus, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"bogus_key": 1}))
        out = tmp_path / "never"
        assert run(explain_args(corpus, out, config=cfg_path)) == 2

    def test_unreachable_remote_is_partial_failure(self, corpus, tmp_path):
        out = tmp_path / "remote"
        args = [
            "explain", "--manifest", corpus, "--out-dir", out,
            "--oracle", "remote:http://127.0.0.1:1", "--n-spec-iters", "5",
            "--n-tok-iters", "5",
        ]
        assert run(args) == 1
        run_log = json.loads((out / "run.json").read_text())
        assert len(run_log["failures"]) == 3


class TestDeterminism:
    def test_worker_counts_byte_identical(self, corpus, tmp_path):
        out1 = tmp_path / "w1"
        out4 = tmp_path / "w4"
        assert run(explain_args(corpus, out1) + ["--workers", "1"]) == 0
        assert run(explain_args(corpus, out4) + ["--workers", "4"]) == 0
        entries = json.loads(Path(corpus).read_text())
        for entry in entries:
            a = (out1 / f"{entry['id']}.bundle").read_bytes()
            b = (out4 / f"{entry['id']}.bundle").read_bytes()
            assert a == b


@pytest.fixture(scope="module")
def explained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundles")
    assert run(explain_args(corpus, out)) == 0
    return out


class TestEvaluate:
    def test_size_runs_without_oracle(self, corpus, explained, tmp_path):
        out = tmp_path / "size"
        assert run([
            "evaluate", "--manifest", corpus, "--bundles-dir", explained,
            "--metric", "size", "--out-dir", out,
        ]) == 0
        data = json.loads((out / "size.json").read_text())
        assert data["metric"] == "size"
        assert len(data["points"]) == 21

    def test_deletion_21_points(self, corpus, explained, tmp_path):
        out = tmp_path / "del"
        assert run([
            "evaluate", "--manifest", corpus, "--bundles-dir", explained,
            "--metric", "deletion", "--oracle", "toy", "--out-dir", out,
        ]) == 0
        csv = (out / "deletion-wer.csv").read_text().strip().splitlines()
        assert csv[0] == "x,y"
        assert len(csv) == 22
        data = json.loads((out / "deletion-wer.json").read_text())
        assert data["points"][0] == [0.0, 0.0]  # gold matches the toy decode

    def test_missing_bundle_is_config_error(self, corpus, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run([
            "evaluate", "--manifest", corpus, "--bundles-dir", empty,
            "--metric", "size",
        ]) == 2

    def test_deletion_needs_oracle(self, corpus, explained):
        assert run([
            "evaluate", "--manifest", corpus, "--bundles-dir", explained,
            "--metric", "deletion",
        ]) == 2


class TestAnalyze:
    def test_positions_report(self, corpus, explained, tmp_path):
        out = tmp_path / "pos"
        assert run([
            "analyze", "--manifest", corpus, "--bundles-dir", explained,
            "--report", "positions", "--out-dir", out,
        ]) == 0
        rows = (out / "positions.csv").read_text().splitlines()
        assert rows[0] == "group,count,mean"
        assert len(rows) == 4

    def test_frequency_report(self, corpus, explained, tmp_path):
        out = tmp_path / "freq"
        entries = json.loads(Path(corpus).read_text())
        word = entries[0]["reference"].split()[0]
        assert run([
            "analyze", "--manifest", corpus, "--bundles-dir", explained,
            "--report", "frequency", "--word", word, "--out-dir", out,
        ]) == 0
        rows = (out / f"frequency_{word}.csv").read_text().splitlines()
        assert len(rows) == 81  # header + 80 channels

    def test_time_report(self, corpus, explained, tmp_path):
        out = tmp_path / "time"
        assert run([
            "analyze", "--manifest", corpus, "--bundles-dir", explained,
            "--report", "time", "--out-dir", out,
        ]) == 0
        rows = (out / "time.csv").read_text().splitlines()
        assert rows[0].startswith("mean_in,mean_out,t_stat,p_value")

    def test_intermediate_and_kurtosis(self, corpus, explained, tmp_path):
        out = tmp_path / "more"
        assert run([
            "analyze", "--manifest", corpus, "--bundles-dir", explained,
            "--report", "kurtosis", "--min-count", "1", "--out-dir", out,
        ]) == 0
        assert (out / "kurtosis.csv").exists()
        assert run([
            "analyze", "--manifest", corpus, "--bundles-dir", explained,
            "--report", "intermediate", "--min-count", "1", "--out-dir", out,
        ]) == 0
        assert (out / "intermediate.csv").exists()

    def test_frequency_without_word_is_error(self, corpus, explained):
        assert run([
            "analyze", "--manifest", corpus, "--bundles-dir", explained,
            "--report", "frequency",
        ]) == 2


class TestRender:
    def test_sentence_and_overlay_same_size(self, corpus, explained, tmp_path):
        entries = json.loads(Path(corpus).read_text())
        bundle_path = explained / f"{entries[0]['id']}.bundle"
        wav = corpus.parent / entries[0]["wav_path"]
        spec_path = tmp_path / "u.spec"
        assert run(["featurize", "--wav", wav, "--out", spec_path]) == 0

        plain = tmp_path / "plain.png"
        overlay = tmp_path / "overlay.png"
        assert run(["render", "--bundle", bundle_path, "--out", plain]) == 0
        assert run([
            "render", "--bundle", bundle_path, "--out", overlay,
            "--overlay", "--spec", spec_path,
        ]) == 0
        import matplotlib.image as mimage

        a = mimage.imread(plain)
        b = mimage.imread(overlay)
        assert a.shape == b.shape

    def test_token_map_render(self, corpus, explained, tmp_path):
        entries = json.loads(Path(corpus).read_text())
        bundle_path = explained / f"{entries[0]['id']}.bundle"
        out = tmp_path / "tok.png"
        assert run([
            "render", "--bundle", bundle_path, "--out", out, "--token", "1",
        ]) == 0
        assert out.exists()

    def test_all_zero_map_uniform_image(self, tmp_path):
        from specsaliency.render import render_map

        out = tmp_path / "zero.png"
        render_map(np.zeros((12, 8)), out, scale=2)
        import matplotlib.image as mimage

        img = mimage.imread(out)
        assert img.shape[0] == 16 and img.shape[1] == 24
        flat = img.reshape(-1, img.shape[-1])
        assert np.all(flat == flat[0])

    def test_corrupt_bundle_is_error(self, tmp_path):
        bad = tmp_path / "bad.bundle"
        bad.write_bytes(b'{"format": "nope"}\n')
        out = tmp_path / "x.png"
        assert run(["render", "--bundle", bad, "--out", out]) == 2
