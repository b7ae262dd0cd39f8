import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imumixer.data import normalize_all, stack_windows, synth_generate
from imumixer.errors import LabelError, NonFiniteError, ProtocolError
from imumixer.model import MixerConfig, MixerModel, resolve_variant
from imumixer.optim import (
    AdamWState,
    EarlyStopping,
    TrainSchedule,
    adamw_step,
    lr_at,
    train,
    write_loss_csv,
)
from imumixer.tensor import Tensor


def scalar_param(v):
    return Tensor(np.array([v]), requires_grad=True)


class TestAdamW:
    def test_zero_gradient_no_decay_leaves_params(self):
        p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        state = AdamWState(weight_decay=0.0)
        adamw_step(state, [p], [np.zeros(2)], lr=0.1)
        np.testing.assert_array_equal(p.data, [1.5, -2.0])
        assert state.step == 1

    def test_single_step_oracle(self):
        # t=1: m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
        p = scalar_param(1.0)
        adamw_step(AdamWState(weight_decay=0.0), [p], [np.array([1.0])], lr=0.0005)
        assert abs(p.data[0] - (1.0 - 0.0005 / (1.0 + 1e-8))) < 1e-12

    def test_single_step_with_decay_oracle(self):
        p = scalar_param(2.0)
        adamw_step(AdamWState(weight_decay=0.01), [p], [np.array([-0.5])], lr=1e-3)
        expected = 2.0 - 1e-3 * (-0.5 / (0.5 + 1e-8) + 0.01 * 2.0)
        assert abs(p.data[0] - expected) < 1e-12

    def test_two_step_oracle(self):
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
        g1, g2 = 0.3, -0.7
        m = (1 - b1) * g1
        v = (1 - b2) * g1**2
        x = 1.0 - lr * ((m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps))
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2**2
        x = x - lr * ((m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps))
        p = scalar_param(1.0)
        state = AdamWState(weight_decay=0.0)
        adamw_step(state, [p], [np.array([g1])], lr)
        adamw_step(state, [p], [np.array([g2])], lr)
        assert abs(p.data[0] - x) < 1e-12

    def test_constant_positive_gradient_decreases_monotonically(self):
        p = scalar_param(1.0)
        state = AdamWState()
        values = [1.0]
        for _ in range(2):
            adamw_step(state, [p], [np.array([0.4])], lr=0.0005)
            values.append(p.data[0])
        assert values[0] > values[1] > values[2]

    def test_non_finite_gradient(self):
        p = scalar_param(1.0)
        state = AdamWState()
        with pytest.raises(NonFiniteError) as info:
            adamw_step(state, [p], [np.array([np.inf])], lr=0.1, names=["head.bias"])
        assert info.value.name == "head.bias" and info.value.step == 1
        assert p.data[0] == 1.0 and state.step == 0


class TestSchedule:
    @pytest.mark.parametrize("epoch,lr", [(0, 0.0005), (39, 0.0005), (40, 0.00025), (120, 0.0000625)])
    def test_staircase_values(self, epoch, lr):
        assert lr_at(TrainSchedule(), epoch) == lr

    def test_staircase_exact_for_all_epochs(self):
        s = TrainSchedule()
        for e in range(400):
            assert lr_at(s, e) == 0.0005 * 0.5 ** (e // 40)

    def test_non_increasing_with_breaks_at_multiples_of_40(self):
        s = TrainSchedule()
        lrs = [lr_at(s, e) for e in range(401)]
        for e in range(1, 401):
            assert lrs[e] <= lrs[e - 1]
            assert (lrs[e] != lrs[e - 1]) == (e % 40 == 0)

    def test_defaults(self):
        s = TrainSchedule()
        assert (s.initial_lr, s.decay_factor, s.decay_every, s.max_epochs, s.patience) == (0.0005, 0.5, 40, 400, 40)
        assert (s.beta1, s.beta2) == (0.9, 0.999)


class TestEarlyStopping:
    def test_plateau_stops_exactly_patience_after_best(self):
        stop = EarlyStopping(patience=40)
        losses = [5.0, 4.0, 3.0] + [3.0] * 100
        for epoch, loss in enumerate(losses):
            if stop.update(loss):
                break
        assert stop.best_epoch == 2
        assert epoch == 2 + 40

    def test_small_improvements_do_not_count(self):
        stop = EarlyStopping(patience=3, min_delta=1e-6)
        fired = [stop.update(v) for v in (1.0, 1.0 - 5e-7, 1.0 - 9e-7, 1.0 - 1e-6)]
        assert fired == [False, False, False, True]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=120), st.integers(1, 50))
    def test_never_fires_before_patience_since_best(self, losses, patience):
        stop = EarlyStopping(patience=patience)
        for loss in losses:
            if stop.update(loss):
                assert stop.epoch - stop.best_epoch == patience
                break
            assert stop.epoch - stop.best_epoch < patience


def separable_set(n=32, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    windows = rng.normal(0, 0.3, size=(n, 128, 6))
    windows += np.where(labels == 0, 1.0, -1.0)[:, None, None]
    return windows, labels


class TestTrain:
    def test_overfits_tiny_separable_set(self):
        windows, labels = separable_set()
        cfg = MixerConfig(clip_len=32, hidden_dim=128, num_layers=2, num_classes=2)
        model = MixerModel(cfg, rng=0)
        result = train(model, windows, labels, TrainSchedule(max_epochs=50), seed=0)
        assert len(result.history) <= 50
        assert np.mean(model.predict(windows) == labels) == 1.0

    def test_plateau_triggers_stop(self):
        windows, labels = separable_set(8)
        cfg = MixerConfig(clip_len=32, hidden_dim=8, num_layers=1, num_classes=2)
        result = train(MixerModel(cfg, rng=0), windows, labels,
                       TrainSchedule(initial_lr=0.0, max_epochs=400), seed=0)
        assert result.stopped_early
        assert result.best_epoch == 0
        assert len(result.history) == 41

    def test_fixed_seed_is_bitwise_reproducible(self):
        windows, labels = separable_set(40, seed=3)
        cfg = MixerConfig(clip_len=32, hidden_dim=16, num_layers=1, num_classes=2)
        runs = []
        for _ in range(2):
            model = MixerModel(cfg, rng=1)
            res = train(model, windows, labels, TrainSchedule(max_epochs=6, batch_size=16), seed=5)
            runs.append((res.losses, [p.data.copy() for p in model.parameters()]))
        assert runs[0][0] == runs[1][0]
        for a, b in zip(runs[0][1], runs[1][1]):
            np.testing.assert_array_equal(a, b)

    def test_single_minibatch_loss_non_increasing_after_warmup(self):
        segs = normalize_all(synth_generate(1, 2, seed=4))
        windows, labels = stack_windows(segs[:64])
        model = MixerModel(resolve_variant("mixer/es/32"), rng=2)
        res = train(model, windows, labels, TrainSchedule(max_epochs=40), seed=0)
        tail = res.losses[5:]
        assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_reports_epoch_and_batch(self):
        windows, labels = separable_set(8)
        windows[3, 0, 0] = np.inf
        cfg = MixerConfig(clip_len=32, hidden_dim=8, num_layers=1, num_classes=2)
        with pytest.raises(NonFiniteError) as info:
            train(MixerModel(cfg, rng=0), windows, labels, TrainSchedule(max_epochs=2), seed=0)
        assert info.value.epoch == 0 and info.value.batch == 0

    def test_rejects_bad_inputs(self):
        cfg = MixerConfig(clip_len=32, hidden_dim=8, num_layers=1, num_classes=2)
        with pytest.raises(ProtocolError):
            train(MixerModel(cfg), np.zeros((0, 128, 6)), np.zeros(0, dtype=int))
        with pytest.raises(LabelError):
            train(MixerModel(cfg), np.zeros((2, 128, 6)), np.array([0, 2]))

    def test_loss_csv(self, tmp_path):
        write_loss_csv([(0, 0.0005, 2.5), (1, 0.0005, 2.0)], tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines == ["epoch,lr,mean_loss", "0,0.0005,2.5", "1,0.0005,2.0"]
