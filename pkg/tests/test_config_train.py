"""Config parsing/validation and training-loop contracts."""

import numpy as np
import pytest

from trigait.config import RunConfig, load_config, parse_config_text
from trigait.data import read_dataset
from trigait.train import LOG_HEADER, Trainer, load_training_checkpoint

from test_synth_data import make_tiny_dataset


def fast_config(**kw):
    base = dict(
        miniature=True,
        iterations=3,
        batch_subjects=3,
        batch_sequences=2,
        log_every=1,
        checkpoint_every=1000,
        seed=7,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "d"
    make_tiny_dataset(root, n_subjects=4, views=(0, 90), seqs_per_view=2, T=32)
    return read_dataset(root)


class TestConfig:
    def test_text_roundtrip(self):
        cfg = RunConfig(iterations=123, sil_channels=(4, 8, 16, 16), miniature=True)
        back = parse_config_text(cfg.to_text())
        assert back == cfg

    def test_file_with_comments_and_overrides(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# training setup\n"
            "iterations = 500   # short run\n"
            "margin = 0.3\n"
            "\n"
            "partition_mode = uniform\n"
        )
        cfg = load_config(p)
        assert cfg.iterations == 500 and cfg.margin == 0.3
        assert cfg.partition_mode == "uniform"

    def test_unknown_keys_collected(self):
        with pytest.raises(ValueError) as ei:
            parse_config_text("nope = 1\nmargin = 0.2\nalso_bad = x\n")
        msg = str(ei.value)
        assert "nope" in msg and "also_bad" in msg

    def test_validation_collects_all_errors(self):
        cfg = RunConfig(lr=-1, margin=0, iterations=0, partition_mode="banana")
        problems = cfg.validate()
        assert len(problems) >= 4

    def test_miniature_resolution(self):
        r = RunConfig(miniature=True).resolved()
        assert r.input_size == 16 and r.embed_dim == 64
        assert RunConfig().resolved().input_size == 64

    def test_hash_changes_with_values(self):
        assert RunConfig().hash_hex() != RunConfig(margin=0.25).hash_hex()

    def test_paper_defaults(self):
        cfg = RunConfig()
        assert cfg.sil_channels == (32, 64, 128, 128)
        assert cfg.ske_channels == (64, 64, 128, 256)
        assert cfg.sil_parts == 8 and cfg.sil_reduction == 16
        assert cfg.ske_heads == 8 and cfg.margin == 0.2
        assert cfg.lr == 1e-4 and cfg.lr_after_drop == 1e-5
        assert cfg.lr_drop_iteration == 30000 and cfg.iterations == 60000
        assert (cfg.batch_subjects, cfg.batch_sequences, cfg.batch_frames) == (8, 16, 30)


class TestTrainer:
    def test_smoke_losses_finite_and_logged(self, dataset, tmp_path):
        trainer = Trainer(dataset, fast_config(), tmp_path / "run")
        path = trainer.run()
        assert path.exists()
        lines = (tmp_path / "run" / "train_log.tsv").read_text().splitlines()
        assert lines[0] == LOG_HEADER
        assert len(lines) == 4  # header + 3 logged iterations
        for line in lines[1:]:
            fields = line.split("\t")
            assert len(fields) == 6
            assert np.isfinite(float(fields[4]))

    def test_lr_schedule_drop(self, dataset, tmp_path):
        cfg = fast_config(iterations=4, lr_drop_iteration=2)
        trainer = Trainer(dataset, cfg, tmp_path / "run")
        seen = {}
        while trainer.iteration < 4:
            s = trainer.step()
            seen[s["iteration"]] = s["lr"]
        assert seen[0] == cfg.lr and seen[1] == cfg.lr
        assert seen[2] == cfg.lr_after_drop and seen[3] == cfg.lr_after_drop

    def test_deterministic_checkpoints(self, dataset, tmp_path):
        p1 = Trainer(dataset, fast_config(), tmp_path / "a").run()
        p2 = Trainer(dataset, fast_config(), tmp_path / "b").run()
        assert p1.read_bytes() == p2.read_bytes()

    def test_resume_continues_counter_and_matches_straight_run(self, dataset, tmp_path):
        straight = Trainer(dataset, fast_config(iterations=4), tmp_path / "s").run()
        half = Trainer(dataset, fast_config(iterations=2), tmp_path / "h")
        half_ck = half.run()
        resumed = Trainer(
            dataset, fast_config(iterations=4), tmp_path / "r", resume=half_ck
        )
        assert resumed.iteration == 2
        final = resumed.run()
        assert final.read_bytes() == straight.read_bytes()

    def test_config_mismatch_rejected_with_both_hashes(self, dataset, tmp_path):
        ck = Trainer(dataset, fast_config(), tmp_path / "run").run()
        other = fast_config(margin=0.4)
        with pytest.raises(ValueError) as ei:
            load_training_checkpoint(ck, expect_config=other)
        msg = str(ei.value)
        assert fast_config().hash_hex() in msg and other.hash_hex() in msg

    def test_checkpoint_roundtrip_restores_net(self, dataset, tmp_path):
        trainer = Trainer(dataset, fast_config(), tmp_path / "run")
        path = trainer.run()
        loaded = load_training_checkpoint(path)
        assert loaded.iteration == 3
        for (n1, p1), (n2, p2) in zip(
            trainer.net.named_parameters(), loaded.net.named_parameters()
        ):
            assert n1 == n2
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_invalid_config_message_lists_problems(self, dataset, tmp_path):
        with pytest.raises(ValueError) as ei:
            Trainer(dataset, fast_config(lr=-1, margin=0), tmp_path / "x")
        assert "lr" in str(ei.value) and "margin" in str(ei.value)

    def test_overfit_four_subjects_reduces_triplet_loss(self, dataset, tmp_path):
        cfg = fast_config(iterations=25, lr=3e-3, batch_subjects=4, batch_sequences=4)
        trainer = Trainer(dataset, cfg, tmp_path / "overfit")
        first = trainer.step()["l_tri"]
        last = None
        while trainer.iteration < 25:
            last = trainer.step()["l_tri"]
        assert last < first
