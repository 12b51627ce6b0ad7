"""Pair construction, BCE loss, the training loop, and resource accounting."""

import logging
import math

import numpy as np
import pytest

from reranklab.model import CrossEncoderConfig, Vocab, init_params
from reranklab.tensor import Tensor
from reranklab.train import (
    NonFiniteLossError,
    ParseError,
    TrainConfig,
    TrainPair,
    Triplet,
    bce_loss,
    efficiency_gain,
    format_loss_log,
    load_triplets,
    run_training,
    triplets_to_pairs,
)
from reranklab.synth import SynthConfig, generate

from conftest import max_rel_err


class TestTripletsToPairs:
    def test_single_triplet(self):
        pairs = triplets_to_pairs([Triplet("q", "p", "n")])
        assert pairs == [TrainPair("q", "p", 1), TrainPair("q", "n", 0)]

    def test_empty_list(self):
        assert triplets_to_pairs([]) == []

    def test_counts_and_balance(self):
        triplets = [Triplet(f"q{i}", f"p{i}", f"n{i}") for i in range(1000)]
        pairs = triplets_to_pairs(triplets)
        assert len(pairs) == 2000
        labels = [p.label for p in pairs]
        assert labels.count(1) == labels.count(0) == 1000

    def test_malformed_skipped_with_warning(self, caplog):
        triplets = [Triplet("q", "p", "n"), Triplet("", "p", "n"), Triplet("q", "  ", "n")]
        with caplog.at_level(logging.WARNING):
            pairs = triplets_to_pairs(triplets)
        assert len(pairs) == 2
        assert "skipped 2" in caplog.text

    def test_order_is_stable(self):
        triplets = [Triplet("a", "b", "c"), Triplet("d", "e", "f")]
        pairs = triplets_to_pairs(triplets)
        assert [p.passage for p in pairs] == ["b", "c", "e", "f"]


class TestLoadTriplets:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "triplets.tsv"
        path.write_text("q one\tpos text\tneg text\nq two\tp\tn\n", encoding="utf-8")
        triplets = load_triplets(path)
        assert triplets[0] == Triplet("q one", "pos text", "neg text")
        assert len(triplets) == 2

    def test_bad_column_count_reports_lines(self, tmp_path):
        path = tmp_path / "triplets.tsv"
        path.write_text("q\tp\tn\nq only\nq\tp\tn\tx\n", encoding="utf-8")
        with pytest.raises(ParseError, match=r"\[2, 3\]"):
            load_triplets(path)


class TestBCELoss:
    def test_half_prediction_is_ln2(self):
        assert abs(bce_loss(0.5, 1).item() - math.log(2)) < 1e-12

    def test_perfect_prediction_tends_to_zero(self):
        assert bce_loss(1.0 - 1e-13, 1).item() < 1e-10
        assert bce_loss(1e-13, 0).item() < 1e-10

    def test_label_symmetry(self, rng):
        for p in rng.uniform(0.01, 0.99, size=20):
            assert abs(bce_loss(p, 1).item() - bce_loss(1.0 - p, 0).item()) < 1e-12

    def test_finite_at_extremes(self):
        assert math.isfinite(bce_loss(0.0, 1).item())
        assert math.isfinite(bce_loss(1.0, 0).item())

    def test_invalid_label(self):
        with pytest.raises(ValueError):
            bce_loss(0.5, 2)

    def test_gradient_formula(self, rng):
        from reranklab.tensor import Tape, finite_diff_grad

        for y in (0, 1):
            for p in rng.uniform(0.1, 0.9, size=5):
                y_hat = Tensor([p], requires_grad=True)
                with Tape() as tape:
                    loss = bce_loss(y_hat, y)
                tape.backward(loss)
                analytic = (p - y) / (p * (1.0 - p))
                assert max_rel_err(y_hat.grad, [analytic]) < 1e-6
                fd = finite_diff_grad(lambda t: bce_loss(t, y).item(), y_hat)
                assert max_rel_err(y_hat.grad, fd.data) < 1e-6


def _tiny_setup(n_triplets=24, d_model=16, seed=12):
    data = generate(SynthConfig(seed=seed, n_triplets=n_triplets, n_eval_queries=1, n_candidates=2, n_relevant=1))
    pairs = triplets_to_pairs(data.triplets)
    texts = [t.query for t in data.triplets] + [t.positive for t in data.triplets] + [
        t.negative for t in data.triplets
    ]
    vocab = Vocab.build(texts)
    config = CrossEncoderConfig(
        vocab_size=vocab.size, d_model=d_model, n_layers=1, n_heads=2, d_ff=2 * d_model, max_len=16, seed=seed
    )
    return init_params(config), vocab, pairs


class TestRunTraining:
    def test_step_count_uses_ceil(self):
        model, vocab, pairs = _tiny_setup(n_triplets=5)  # 10 pairs
        result = run_training(model, vocab, pairs, TrainConfig(batch_size=64, epochs=3, seed=12))
        assert result.stats.n_steps == 3  # one step per epoch
        assert [r.epoch for r in result.loss_log] == [1, 2, 3]

    def test_bit_identical_loss_logs(self):
        logs = []
        for _ in range(2):
            model, vocab, pairs = _tiny_setup()
            result = run_training(model, vocab, pairs, TrainConfig(batch_size=8, epochs=2, seed=12))
            logs.append(format_loss_log(result.loss_log))
        assert logs[0] == logs[1]

    def test_bit_identical_parameters_after_training(self):
        states = []
        for _ in range(2):
            model, vocab, pairs = _tiny_setup()
            run_training(model, vocab, pairs, TrainConfig(batch_size=8, epochs=2, seed=12))
            states.append({name: p.data.copy() for name, p in model.parameters()})
        for name in states[0]:
            np.testing.assert_array_equal(states[0][name], states[1][name])

    def test_seed_changes_shuffle(self):
        logs = []
        for seed in (12, 13):
            model, vocab, pairs = _tiny_setup()
            result = run_training(model, vocab, pairs, TrainConfig(batch_size=8, epochs=1, seed=seed))
            logs.append([r.loss for r in result.loss_log])
        assert logs[0] != logs[1]

    @pytest.mark.parametrize("optimizer", ["lion", "adamw"])
    def test_separable_data_loss_decreases(self, optimizer):
        model, vocab, pairs = _tiny_setup(n_triplets=64, d_model=32)
        config = TrainConfig(batch_size=32, epochs=3, seed=12, optimizer=optimizer, base_lr=2e-4)
        result = run_training(model, vocab, pairs, config)
        by_epoch = {}
        for r in result.loss_log:
            by_epoch.setdefault(r.epoch, []).append(r.loss)
        means = {e: float(np.mean(v)) for e, v in by_epoch.items()}
        assert means[3] < means[1]

    def test_checkpoint_per_epoch_with_naming(self):
        model, vocab, pairs = _tiny_setup()
        result = run_training(
            model, vocab, pairs, TrainConfig(batch_size=16, epochs=3, seed=12), run_name="toy"
        )
        assert [name for name, _ in result.checkpoints] == [
            "toy-lion-epoch1",
            "toy-lion-epoch2",
            "toy-lion-epoch3",
        ]

    def test_empty_pairs_rejected(self):
        model, vocab, _ = _tiny_setup()
        with pytest.raises(ValueError, match="non-empty"):
            run_training(model, vocab, [], TrainConfig())

    def test_non_finite_loss_aborts_with_step(self):
        model, vocab, pairs = _tiny_setup()
        model.params["head.weight"].data[0, 0] = np.nan
        with pytest.raises(NonFiniteLossError) as err:
            run_training(model, vocab, pairs, TrainConfig(batch_size=8, epochs=1, seed=12))
        assert err.value.step == 0

    def test_resource_stats_populated(self):
        model, vocab, pairs = _tiny_setup()
        result = run_training(model, vocab, pairs, TrainConfig(batch_size=8, epochs=1, seed=12))
        stats = result.stats
        assert stats.n_steps == len(result.loss_log) >= 1
        assert stats.peak_step_ms >= stats.mean_step_ms >= 0.0
        assert stats.std_step_ms >= 0.0
        assert stats.optimizer_state_bytes == 8 * model.parameter_count()

    def test_schedule_total_steps_drives_cosine(self):
        model, vocab, pairs = _tiny_setup(n_triplets=8)  # 16 pairs
        config = TrainConfig(batch_size=8, epochs=2, seed=12, schedule="cosine", warmup_ratio=0.0)
        result = run_training(model, vocab, pairs, config)
        # 4 total steps; lr follows cosine from base_lr toward (not reaching) 0
        lrs = [r.lr for r in result.loss_log]
        assert lrs[0] == config.base_lr
        assert lrs == sorted(lrs, reverse=True)
        assert lrs[-1] > 0.0


class TestEfficiencyGain:
    def test_identity_is_zero(self):
        assert efficiency_gain(5.0, 5.0) == 0.0

    def test_gte_row(self):
        assert abs(efficiency_gain(73.04, 65.50) - 10.3231) < 0.01

    def test_modernbert_row(self):
        assert abs(efficiency_gain(77.04, 74.35) - 3.4917) < 0.01

    def test_minilm_row(self):
        assert abs(efficiency_gain(33.09, 32.21) - 2.6594) < 0.01

    def test_nonpositive_baseline_rejected(self):
        with pytest.raises(ValueError):
            efficiency_gain(0.0, 1.0)

    def test_state_bytes_gain_is_about_half(self):
        model, _, _ = _tiny_setup()
        from reranklab.optim import AdamW, Lion

        gain = efficiency_gain(AdamW(model.params).state_bytes(), Lion(model.params).state_bytes())
        assert 49.0 <= gain <= 51.0


class TestLossLogFormat:
    def test_tab_separated_ten_significant_digits(self):
        from reranklab.train import LossRecord

        text = format_loss_log([LossRecord(step=3, epoch=1, lr=1 / 3, loss=2 / 3)])
        assert text == "3\t1\t0.3333333333\t0.6666666667\n"

    def test_empty_log(self):
        assert format_loss_log([]) == ""


class TestShuffleOff:
    def test_unshuffled_order_deterministic_and_distinct(self):
        logs = []
        for shuffle in (False, False, True):
            model, vocab, pairs = _tiny_setup()
            config = TrainConfig(batch_size=8, epochs=1, seed=12, shuffle=shuffle)
            result = run_training(model, vocab, pairs, config)
            logs.append([r.loss for r in result.loss_log])
        assert logs[0] == logs[1]
        assert logs[0] != logs[2]
