import os

import numpy as np
import pytest

from segattack.attacks import AttackConfig
from segattack.configfile import (ConfigFileError, parse_config, read_config,
                                  take_keys, write_config)
from segattack.data import DatasetSpec, generate, save_dataset
from segattack.harness import (bench, config_label, evaluate_clean,
                               load_experiment_inputs, measure_comparison,
                               run_experiment, sha256_file)
from segattack.model import ModelConfig, SegModel, save_checkpoint, train
from segattack.netpbm import read_ppm


@pytest.fixture(scope="module")
def rig(tmp_path_factory):
    """Dataset on disk + trained checkpoint, shared by harness tests."""
    root = tmp_path_factory.mktemp("rig")
    ds = generate(DatasetSpec(height=16, width=16, train_size=16, val_size=4,
                              seed=31))
    manifest = save_dataset(ds, str(root / "data"))
    model = SegModel(ModelConfig(num_classes=4, hidden=(8, 8)), ds.mean,
                     ds.scale, init_seed=2)
    train(model, ds.train, epochs=10, batch_size=4, seed=2)
    ckpt = str(root / "model.ckpt")
    save_checkpoint(ckpt, model)
    return ckpt, manifest


def strip_timing(csv_path):
    """CSV text minus any seconds column, for determinism comparisons."""
    out = []
    drop = None
    for line in open(csv_path):
        line = line.rstrip("\n")
        if line.startswith("#"):
            out.append(line)
            continue
        cells = line.split(",")
        if drop is None:
            drop = [i for i, name in enumerate(cells)
                    if "seconds" in name]
        out.append(",".join(c for i, c in enumerate(cells)
                            if i not in drop))
    return "\n".join(out)


class TestConfigFile:
    def test_parse_basics(self):
        cfg = parse_config("a=1\n# note\n b = two \n\nc=3#tail\n")
        assert cfg == {"a": "1", "b": "two", "c": "3"}

    def test_parse_errors(self):
        with pytest.raises(ConfigFileError, match="2: expected key=value"):
            parse_config("a=1\nbogus line\n")
        with pytest.raises(ConfigFileError, match="duplicate key 'a'"):
            parse_config("a=1\na=2\n")
        with pytest.raises(ConfigFileError, match="empty key"):
            parse_config("=1\n")

    def test_file_round_trip(self, tmp_path):
        path = str(tmp_path / "c.cfg")
        write_config(path, {"family": "fgsm", "eps": "8.0"}, header="note")
        assert read_config(path) == {"family": "fgsm", "eps": "8.0"}

    def test_take_keys(self):
        take_keys({"a": "1"}, ("a", "b"))
        with pytest.raises(ConfigFileError, match=r"unknown keys \['c'\]"):
            take_keys({"c": "1"}, ("a", "b"), "test config")


class TestInputs:
    def test_load_experiment_inputs(self, rig):
        ckpt, manifest = rig
        model, images, man = load_experiment_inputs(ckpt, manifest)
        assert model.num_classes == 4
        assert len(images) == 4
        assert man.num_classes == 4

    def test_class_count_mismatch_fails_fast(self, rig, tmp_path):
        ckpt, manifest = rig
        other = SegModel(ModelConfig(num_classes=6), np.zeros(3), np.ones(3))
        bad = str(tmp_path / "six.ckpt")
        save_checkpoint(bad, other)
        with pytest.raises(ValueError, match="6 classes but manifest"):
            load_experiment_inputs(bad, manifest)


class TestRunExperiment:
    CFG = AttackConfig(family="ifgsm", eps=4.0, iterations=3)

    def test_report_files_and_consistency(self, rig, tmp_path):
        ckpt, manifest = rig
        model, images, _ = load_experiment_inputs(ckpt, manifest)
        out = str(tmp_path / "exp")
        report = run_experiment(model, images, [self.CFG], out, overlays=2,
                                provenance={"checkpoint_sha256":
                                            sha256_file(ckpt)})
        assert len(report.rows) == 4
        s = report.summaries[0]
        assert s.n_images == 4
        assert s.mean_adv_apsr == pytest.approx(
            np.mean([r.adv_apsr for r in report.rows]))
        assert s.delta_miou == pytest.approx(s.clean_miou - s.adv_miou)
        assert s.delta_miou <= s.clean_miou + 1e-12
        for name in ("per_image.csv", "summary.csv"):
            text = open(os.path.join(out, name)).read()
            assert "checkpoint_sha256=" in text
            assert "family=ifgsm" in text
        label = config_label(self.CFG, 0)
        overlay = os.path.join(out, f"{label}_{images[0].id}_clean.ppm")
        assert read_ppm(overlay).shape == (3, 16, 16)
        assert os.path.exists(os.path.join(
            out, f"{label}_{images[1].id}_pert.ppm"))
        assert not os.path.exists(os.path.join(
            out, f"{label}_{images[2].id}_clean.ppm"))

    def test_deterministic_modulo_timing(self, rig, tmp_path):
        ckpt, manifest = rig
        model, images, _ = load_experiment_inputs(ckpt, manifest)
        outs = []
        for tag in ("a", "b"):
            out = str(tmp_path / tag)
            run_experiment(model, images, [self.CFG], out, overlays=1)
            outs.append(out)
        for name in ("per_image.csv", "summary.csv"):
            assert strip_timing(os.path.join(outs[0], name)) \
                == strip_timing(os.path.join(outs[1], name))
        label = config_label(self.CFG, 0)
        ppm = f"{label}_{images[0].id}_adv.ppm"
        assert open(os.path.join(outs[0], ppm), "rb").read() \
            == open(os.path.join(outs[1], ppm), "rb").read()

    def test_jobs_match_serial(self, rig, tmp_path):
        ckpt, manifest = rig
        model, images, _ = load_experiment_inputs(ckpt, manifest)
        serial = run_experiment(model, images, [self.CFG],
                                str(tmp_path / "s"), overlays=0)
        threaded = run_experiment(model, images, [self.CFG],
                                  str(tmp_path / "t"), overlays=0, jobs=3)
        assert [r.adv_apsr for r in serial.rows] \
            == [r.adv_apsr for r in threaded.rows]
        assert serial.summaries[0].adv_miou == threaded.summaries[0].adv_miou

    def test_empty_inputs_rejected(self, rig, tmp_path):
        ckpt, manifest = rig
        model, images, _ = load_experiment_inputs(ckpt, manifest)
        with pytest.raises(ValueError, match="no images"):
            run_experiment(model, [], [self.CFG], str(tmp_path / "x"))
        with pytest.raises(ValueError, match="no attack configs"):
            run_experiment(model, images, [], str(tmp_path / "y"))


class TestOtherReports:
    def test_evaluate_clean(self, rig, tmp_path):
        ckpt, manifest = rig
        model, images, _ = load_experiment_inputs(ckpt, manifest)
        out = str(tmp_path / "eval")
        summary = evaluate_clean(model, images, out)
        assert summary["pixel_accuracy"] + summary["clean_apsr"] \
            == pytest.approx(1.0)
        assert 0.0 <= summary["miou"] <= 1.0
        assert os.path.exists(os.path.join(out, "clean_summary.csv"))

    def test_measure_comparison_rows(self, rig, tmp_path):
        ckpt, manifest = rig
        model, images, _ = load_experiment_inputs(ckpt, manifest)
        out = str(tmp_path / "cmp")
        report = measure_comparison(
            model, images, AttackConfig(family="ifgsm", eps=4.0,
                                        iterations=2), out)
        schemes = [s.config.loss_scheme for s in report.summaries]
        assert schemes == ["plain", "margin_weighted", "maxmin_weighted",
                           "meanmargin_weighted", "entropy_weighted"]
        text = open(os.path.join(out, "measures.csv")).read()
        assert text.count("\n# config ") >= 4
        assert "soft_check entropy_apsr_ge_margin_apsr=" in text
        assert len([ln for ln in text.splitlines()
                    if ln and not ln.startswith("#")]) == 6  # header + 5

    def test_bench_ratios(self, rig, tmp_path):
        ckpt, manifest = rig
        model, images, _ = load_experiment_inputs(ckpt, manifest)
        out = str(tmp_path / "bench")
        seconds = bench(model, images,
                        AttackConfig(family="ifgsm", eps=4.0, iterations=2),
                        out)
        assert set(seconds) == {"plain", "entropy_weighted", "zero_out"}
        assert all(v > 0 for v in seconds.values())
        lines = [ln for ln in open(os.path.join(out, "bench.csv"))
                 if not ln.startswith("#")]
        assert lines[0].startswith("scheme,mean_seconds,ratio_to_plain")
        assert len(lines) == 4
