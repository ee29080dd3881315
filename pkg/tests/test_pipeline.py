import json

import numpy as np
import pytest

from core.errors import ConfigurationError, DataError, StageError, exit_code_for
from core.phantom import phantom
from core.pipeline import PipelineConfig, build_config, run_pipeline
from core.series_io import export_image, read_hsr, write_label_png
from core.stochastic import Strategy
from core.workers import WorkerOrchestrator


@pytest.fixture(scope="module")
def series(tmp_path_factory):
    root = tmp_path_factory.mktemp("series")
    scene = phantom(seed=0, width=32, height=32, channels=40)
    path = export_image(root, "series", scene.image)
    mask = write_label_png(root / "truth.png", scene.training_mask())
    return path, mask


class TestConfig:
    def test_file_then_flags(self, tmp_path):
        conf = tmp_path / "pipeline.conf"
        conf.write_text('regions=7\nclassifier=kmeans\ncdf=false\ngerms="N=5,M=2"\n')
        config = build_config(conf, input="in.hsr", regions=9, strategy="ball_union")
        assert config.regions == 9
        assert config.classifier == "kmeans"
        assert config.cdf is False
        assert (config.germs.n, config.germs.m, config.germs.rmax) == (5, 2, 30)
        assert config.germs.strategy is Strategy.BALL_UNION
        assert str(config.input) == "in.hsr"

    def test_none_flags_keep_file_values(self, tmp_path):
        conf = tmp_path / "pipeline.conf"
        conf.write_text("seed=12\n")
        assert build_config(conf, seed=None).seed == 12

    def test_bad_settings(self, tmp_path):
        with pytest.raises(ConfigurationError):
            build_config(colour="red")
        with pytest.raises(ConfigurationError):
            build_config(tmp_path / "missing.conf")
        with pytest.raises(ConfigurationError):
            build_config(cdf="maybe")
        with pytest.raises(ConfigurationError):
            build_config(regions="many")
        with pytest.raises(ConfigurationError):
            build_config(strategy="scatter")
        with pytest.raises(ConfigurationError):
            build_config(germs="N=0")

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            PipelineConfig().validate()
        with pytest.raises(ConfigurationError):
            build_config(input="in.hsr").validate()
        with pytest.raises(ConfigurationError):
            build_config(input="in.hsr", cdf=False).validate()
        build_config(input="in.hsr", stage="fit").validate()
        build_config(input="in.hsr", cdf=False, classifier="kmeans").validate()
        with pytest.raises(ConfigurationError):
            build_config(input="in.hsr", stage="report").validate()
        with pytest.raises(ConfigurationError):
            build_config(input="in.hsr", stage="fit", relief="ridge").validate()

    def test_summary_has_no_paths(self):
        summary = build_config(input="in.hsr", reference="ref.hsr").summary()
        assert "input" not in summary
        assert summary["germs"]["strategy"] == "ball_union_connected"
        json.dumps(summary)


class TestRun:
    def test_stops_after_denoise(self, series, tmp_path):
        path, _ = series
        config = build_config(input=path, output=tmp_path, stage="denoise")
        state = run_pipeline(config, WorkerOrchestrator(1))
        assert set(state.artifacts) == {"denoised", "residues", "snr"}
        assert state.maps is None
        denoised = read_hsr(tmp_path / "denoised.hsr")
        assert denoised.cube.shape == (32, 32, 40)
        snr = json.loads((tmp_path / "snr.json").read_text())
        assert len(snr["first_pass"]["snr"]) >= 1
        assert not (tmp_path / "parameters.hsr").exists()

    def test_unreadable_input_is_a_stage_error(self, tmp_path):
        broken = tmp_path / "broken.hsr"
        broken.write_bytes(b"nothing here")
        config = build_config(input=broken, output=tmp_path / "out", stage="denoise")
        with pytest.raises(StageError) as caught:
            run_pipeline(config, WorkerOrchestrator(1))
        assert caught.value.stage == "denoise"
        assert isinstance(caught.value.cause, DataError)
        assert exit_code_for(caught.value) == 3

    def test_reference_channel_mismatch_exits_2(self, series, tmp_path):
        path, mask = series
        reference = export_image(tmp_path, "short", phantom(seed=1, width=32, height=32, channels=36).image)
        config = build_config(input=path, output=tmp_path / "out", reference=reference,
                              training_mask=mask, stage="classify")
        with pytest.raises(StageError) as caught:
            run_pipeline(config, WorkerOrchestrator(1))
        assert caught.value.stage == "classify"
        assert exit_code_for(caught.value) == 2

    def test_kmeans_chain_end_to_end(self, series, tmp_path):
        path, _ = series
        config = build_config(input=path, output=tmp_path, classifier="kmeans", k=4, cdf=False,
                              germs="N=10,M=2,S=2,Rmax=5,sigma=1.0", regions=1, threads=1)
        state = run_pipeline(config, WorkerOrchestrator(1))
        report = json.loads((tmp_path / "report.json").read_text())
        assert len(report["regions"]) == 1
        assert report["regions"][0]["area"] == 32 * 32
        assert report["config"]["classifier"] == "kmeans"
        assert state.classification.num_classes == 4
        for name in ("parameters.hsr", "classification.png", "mpdf.hsr", "segmentation.png",
                     "risk_beta_a.png", "detection.png"):
            assert (tmp_path / name).exists()

    def test_probabilistic_gradient_relief(self, series, tmp_path):
        path, _ = series
        config = build_config(input=path, output=tmp_path, classifier="kmeans", k=3, cdf=False, stage="segment",
                              germs="N=10,M=2,S=2,Rmax=5,sigma=1.0", regions=1, relief="probabilistic_gradient")
        state = run_pipeline(config, WorkerOrchestrator(1))
        assert "probabilistic_gradient" in state.artifacts
        relief = read_hsr(tmp_path / "probabilistic_gradient.hsr").cube[:, :, 0]
        assert relief.max() == pytest.approx(1.0)
        assert relief.min() >= 0
        assert np.all(state.segmentation.labels == 0)

        plain = build_config(input=path, output=tmp_path / "plain", classifier="kmeans", k=3, cdf=False,
                             stage="segment", germs="N=10,M=2,S=2,Rmax=5,sigma=1.0", regions=1)
        assert "probabilistic_gradient" not in run_pipeline(plain, WorkerOrchestrator(1)).artifacts

    @pytest.mark.slow
    def test_lda_chain_is_reproducible(self, series, tmp_path):
        path, mask = series
        runs = []
        for name, threads in (("one", 1), ("two", 2)):
            config = build_config(input=path, output=tmp_path / name, reference=path, training_mask=mask,
                                  germs="N=20,M=4,S=2,Rmax=5,sigma=1.0", regions=2, seed=5)
            state = run_pipeline(config, WorkerOrchestrator(threads))
            runs.append(state)
        assert np.array_equal(runs[0].segmentation.labels, runs[1].segmentation.labels)
        assert runs[0].report["detected"] == runs[1].report["detected"]
        assert runs[0].classification.num_classes == 4
