import os

import numpy as np
import pytest

from partvote.cli import cli_main
from partvote.config import desk_config
from partvote.data import synth_dataset
from partvote.partgraph import load_part_graph
from partvote.pipeline import (PROVENANCE_NOTE, MetricsReport, evaluate,
                               load_checkpoint, make_datasets, train)


def tiny_config(tmp_path, **overrides):
    base = dict(
        classes="sphere,box",
        n_train_per_class=4,
        n_test_per_class=2,
        n_points=128,
        epochs=2,
        max_parts=8,
        points_per_part=16,
        encoder_widths="16,32",
        conv_layers=2,
        conv_width=32,
        batch_objects=4,
        num_clusters=3,
        out_dir=str(tmp_path / "run"),
    )
    base.update(overrides)
    return desk_config(**base)


class TestTrain:
    def test_deterministic_loss_curve(self, tmp_path):
        a = train(tiny_config(tmp_path / "a"))
        b = train(tiny_config(tmp_path / "b"))
        assert a.loss_history == b.loss_history  # bitwise reproducible
        assert len(a.loss_history) == 2

    def test_maxpool_leaves_vote_head_untouched(self, tmp_path):
        cfg = tiny_config(tmp_path, pooling="maxpool", epochs=1)
        result = train(cfg)
        store = result.net.store
        fresh = type(result.net)(cfg, result.net.num_classes,
                                 np.random.default_rng([cfg.seed, 7]))
        for name in store.params:
            trained = store.params[name].data
            initial = fresh.store.params[name].data
            if name.startswith("vote."):
                assert np.array_equal(trained, initial), name
            elif name.startswith("cls.") or name.startswith("conv0."):
                assert not np.array_equal(trained, initial), name

    def test_checkpoint_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path)
        result = train(cfg)
        net, class_names = load_checkpoint(result.checkpoint_path)
        assert class_names == ["sphere", "box"]
        _, test_objects, _ = make_datasets(cfg)
        r1 = evaluate(result.net, test_objects, "none", cfg, class_names)
        r2 = evaluate(net, test_objects, "none", cfg, class_names)
        assert np.array_equal(r1.confusion, r2.confusion)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("trained"))
    return cfg, train(cfg)


class TestEvaluate:
    def test_confusion_row_sums(self, trained):
        cfg, result = trained
        _, test_objects, class_names = make_datasets(cfg)
        report = evaluate(result.net, test_objects, "none", cfg, class_names)
        assert report.confusion.shape == (2, 2)
        assert report.confusion.sum() + report.num_skipped == len(test_objects)
        for label in (0, 1):
            expected = sum(1 for o in test_objects if o.label == label)
            assert report.confusion[label].sum() <= expected

    def test_empty_set_raises(self, trained):
        cfg, result = trained
        with pytest.raises(ValueError):
            evaluate(result.net, [], "none", cfg)

    def test_out_of_range_label_raises(self, trained):
        cfg, result = trained
        rng = np.random.default_rng(0)
        objs = synth_dataset(["sphere", "box", "torus"], 1, 64, 0.0, rng)
        with pytest.raises(ValueError):
            evaluate(result.net, objs, "none", cfg)

    def test_unknown_variant_raises(self, trained):
        cfg, result = trained
        _, test_objects, _ = make_datasets(cfg)
        with pytest.raises(ValueError):
            evaluate(result.net, test_objects, "t99", cfg)

    def test_deterministic(self, trained):
        cfg, result = trained
        _, test_objects, _ = make_datasets(cfg)
        r1 = evaluate(result.net, test_objects, "background", cfg)
        r2 = evaluate(result.net, test_objects, "background", cfg)
        assert np.array_equal(r1.confusion, r2.confusion)


class TestMetricsReport:
    def make_report(self):
        return MetricsReport(
            variant="none",
            confusion=np.array([[3, 1], [0, 4]]),
            num_skipped=1,
            wall_clock=1.0,
            config_text="epochs=2\n",
            class_names=["a", "b"],
        )

    def test_accuracy_math(self):
        report = self.make_report()
        assert np.isclose(report.accuracy, 7 / 8)
        assert np.isclose(report.class_accuracy, (3 / 4 + 1.0) / 2)

    def test_table_includes_provenance_note(self):
        assert PROVENANCE_NOTE in self.make_report().format_table()
        assert "52.7" in PROVENANCE_NOTE and "NOT asserted" in PROVENANCE_NOTE

    def test_write_embeds_config(self, tmp_path):
        prefix = str(tmp_path / "metrics")
        self.make_report().write(prefix)
        text = open(prefix + ".txt").read()
        assert "epochs=2" in text and PROVENANCE_NOTE in text
        tsv = open(prefix + ".tsv").read()
        assert "accuracy\tnone\t0.875000" in tsv

    def test_empty_report_raises(self):
        report = MetricsReport("none", np.zeros((2, 2), int), 0, 0.0, "")
        with pytest.raises(ValueError):
            report.accuracy


class TestCli:
    def test_eval_requires_checkpoint(self):
        assert cli_main(["eval"]) == 1

    def test_unknown_command(self):
        assert cli_main(["frobnicate"]) == 1

    def test_bad_override_key(self, tmp_path):
        assert cli_main(["synth", "--out", str(tmp_path), "--nope=1"]) == 2

    def test_synth_and_graph_happy_path(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        assert cli_main(["synth", "--out", str(corpus),
                         "--classes=sphere,box", "--n_train_per_class=1",
                         "--n_points=200"]) == 0
        sample = str(corpus / "sphere" / "sphere_0000.xyz")
        assert os.path.exists(sample)
        out = str(tmp_path / "graph.pg")
        assert cli_main(["graph", "--in", sample, "--out", out,
                         "--max_parts=8", "--points_per_part=16"]) == 0
        graph = load_part_graph(out)
        assert len(graph.parts) >= 2

    def test_graph_missing_file(self, tmp_path):
        assert cli_main(["graph", "--in", str(tmp_path / "nope.xyz"),
                         "--out", str(tmp_path / "g.pg")]) == 2

    def test_check_subcommand(self, capsys):
        assert cli_main(["check", "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_train_and_eval_commands(self, tmp_path, capsys):
        run = tmp_path / "run"
        overrides = [
            "--classes=sphere,box", "--n_train_per_class=3",
            "--n_test_per_class=2", "--n_points=128", "--epochs=1",
            "--max_parts=8", "--points_per_part=16", "--encoder_widths=16,32",
            "--conv_layers=1", "--conv_width=32", f"--out_dir={run}",
        ]
        assert cli_main(["train", *overrides]) == 0
        ckpt = str(run / "checkpoint.npz")
        assert os.path.exists(ckpt)
        assert cli_main(["eval", "--checkpoint", ckpt, "--variant", "t25",
                         *overrides]) == 0
        out = capsys.readouterr().out
        assert "variant: t25" in out
        assert PROVENANCE_NOTE in out
