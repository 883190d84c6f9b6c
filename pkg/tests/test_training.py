import math

import numpy as np
import pytest

from feather_ts import model as fm, training as tr
from feather_ts.errors import ConfigError, DataError, NumericError, ShapeError
from oracles import adamw_scalar, central_difference, rel_err

FAST = fm.ModelConfig(lookback=24, horizon=12, channels=2, period=12, latent_width=2)


def sinusoid(T=480, period=12):
    w = 2 * np.pi * np.arange(T) / period
    return np.stack([np.sin(w), 2 * np.sin(w + 0.7) + 1], axis=1)


# --- loading -----------------------------------------------------------------

def test_load_toy_csv(tmp_path):
    f = tmp_path / "toy.csv"
    f.write_text("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6\n")
    raw = tr.load_csv(f)
    assert raw.values.tolist() == [[1, 2], [3, 4], [5, 6]]
    assert raw.channel_names == ["a", "b"]
    assert raw.timestamps[0] == "2020-01-01"


def test_load_without_timestamp(tmp_path):
    f = tmp_path / "toy.csv"
    f.write_text("a,b\n1,2\n3,4\n")
    raw = tr.load_csv(f)
    assert raw.timestamps is None and raw.values.shape == (2, 2)


def test_bad_cell_names_row(tmp_path):
    lines = ["t,a"] + [f"{i},{i}" for i in range(5)] + ["5,oops"]   # file row 7
    f = tmp_path / "bad.csv"
    f.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="row 7"):
        tr.load_csv(f)


def test_ragged_rows(tmp_path):
    f = tmp_path / "ragged.csv"
    f.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataError, match="row 3"):
        tr.load_csv(f)


# --- split -------------------------------------------------------------------

def test_split_boundaries_and_stats():
    x = np.random.default_rng(0).normal(size=(100, 3)) * [1, 5, 9] + [2, -1, 4]
    s = tr.split_and_normalize(x)
    assert s.ranges == {"train": (0, 60), "val": (60, 80), "test": (80, 100)}
    train = s.values[:60]
    assert np.allclose(train.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(train.std(axis=0), 1, atol=1e-12)
    assert np.allclose(s.values * s.std + s.mean, x)


def test_split_stats_ignore_later_ranges():
    x = np.random.default_rng(1).normal(size=(100, 2))
    y = x.copy()
    y[60:] = 1e3
    a, b = tr.split_and_normalize(x), tr.split_and_normalize(y)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)


def test_zero_variance_channel_warns():
    x = np.ones((50, 2))
    x[:, 1] = np.arange(50)
    with pytest.warns(UserWarning, match="zero-variance"):
        s = tr.split_and_normalize(x)
    assert np.all(np.isfinite(s.values))


def test_split_needs_ten_steps():
    with pytest.raises(DataError):
        tr.split_and_normalize(np.zeros((9, 1)))


# --- windows -----------------------------------------------------------------

def test_val_window_count_with_borrowed_lookback():
    split = tr.SplitDataset(np.zeros((240, 1)), {"train": (0, 200), "val": (200, 220), "test": (220, 240)},
                            np.zeros(1), np.ones(1))
    starts = tr.window_starts(split, "val", 96, 8)
    oracle = [t for t in range(240) if 200 <= t and t + 8 <= 220 and t - 96 >= 0]
    assert len(starts) == 13 and starts.tolist() == oracle


def test_window_targets_inside_role():
    s = tr.split_and_normalize(sinusoid(300))
    L, H = 24, 12
    for role in tr.ROLES:
        lo, hi = s.ranges[role]
        for t in tr.window_starts(s, role, L, H):
            assert lo <= t and t + H <= hi and t - L >= 0


def test_window_iter_contents_and_order():
    s = tr.split_and_normalize(sinusoid(300))
    xb, yb = next(tr.window_iter(s, "val", 24, 12, batch_size=4))
    t0 = s.ranges["val"][0]
    assert np.array_equal(xb[0], s.values[t0 - 24:t0]) and np.array_equal(yb[0], s.values[t0:t0 + 12])
    a = [x for x, _ in tr.window_iter(s, "train", 24, 12, seed=5, epoch=2)]
    b = [x for x, _ in tr.window_iter(s, "train", 24, 12, seed=5, epoch=2)]
    c = [x for x, _ in tr.window_iter(s, "train", 24, 12, seed=5, epoch=3)]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not all(np.array_equal(u, v) for u, v in zip(a, c))


def test_short_range_is_an_error():
    s = tr.split_and_normalize(sinusoid(60))
    with pytest.raises(DataError):
        list(tr.window_iter(s, "test", 24, 24))


# --- loss / optimizer ----------------------------------------------------------

def test_mse_loss():
    y = np.random.default_rng(2).normal(size=(8, 3))
    assert tr.mse_loss(y, y)[0] == 0
    assert tr.mse_loss(y + 1, y)[0] == pytest.approx(1, abs=1e-12)
    p = y + np.random.default_rng(3).normal(size=y.shape)
    _, g = tr.mse_loss(p, y)
    # central differences are exact on a quadratic, so a large h only limits rounding
    assert rel_err(g, central_difference(lambda z: tr.mse_loss(z, y)[0], p, h=1e-3)) < 1e-8
    with pytest.raises(ShapeError):
        tr.mse_loss(y, y[:4])


def test_adamw_zero_gradients():
    p = fm.init_params(FAST, seed=1)
    ref = p.copy()
    st = tr.OptimizerState(p)
    tr.adamw_step(p, p.zeros_like(), st, lr=0.1, weight_decay=0.0)
    assert p.array_equal(ref)
    tr.adamw_step(p, p.zeros_like(), st, lr=0.1, weight_decay=0.01)
    assert p.allclose(ref.map(lambda a: a * (1 - 0.1 * 0.01)), atol=0)
    assert st.step == 2
    for (n, a), (_, m) in zip(p.items(), st.m.items()):
        assert a.shape == m.shape


def test_adamw_matches_scalar_reference():
    cfg = fm.ModelConfig(lookback=4, horizon=4, channels=1, branches=2, period=4, latent_width=1,
                         dtk_kernel=1, slide_kernel=1, gating_mode="uniform")
    p = fm.init_params(cfg)
    theta0 = float(p.dtk_kernel[0, 0])
    grads = [0.3, 0.3, -0.1, 0.7, 0.7, 0.0, 2.0, -0.5, 0.3, 0.3]
    st = tr.OptimizerState(p)
    traj = []
    for g in grads:
        gp = p.zeros_like()
        gp.dtk_kernel[0, 0] = g
        tr.adamw_step(p, gp, st, lr=0.05, weight_decay=0.1)
        traj.append(float(p.dtk_kernel[0, 0]))
    assert np.allclose(traj, adamw_scalar(theta0, grads, 0.05, 0.1), rtol=1e-13, atol=0)


def test_adamw_rejects_nonfinite_gradient():
    p = fm.init_params(FAST)
    g = p.zeros_like()
    g.spk_w[0, 0] = np.nan
    with pytest.raises(NumericError, match="spk_w"):
        tr.adamw_step(p, g, tr.OptimizerState(p), 0.01, 0.0)


def test_cosine_lr():
    assert tr.cosine_lr(0, 30, 0.01) == 0.01
    assert tr.cosine_lr(15, 30, 0.01) == pytest.approx(0.005, abs=1e-15)
    lrs = [tr.cosine_lr(e, 30, 0.01) for e in range(30)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        tr.cosine_lr(30, 30, 0.01)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        tr.TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        tr.TrainConfig(epochs=0)


# --- loop ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def short_run():
    split = tr.split_and_normalize(sinusoid())
    tc = tr.TrainConfig(epochs=8, seed=3)
    return split, tc, tr.train(FAST, tc, split)


def test_train_is_deterministic(short_run):
    split, tc, (p1, r1) = short_run
    p2, r2 = tr.train(FAST, tc, split)
    assert p1.array_equal(p2) and r1 == r2


def test_selected_epoch_is_minimum(short_run):
    _, _, (_, rep) = short_run
    assert rep.val_mse[rep.selected_epoch] == min(rep.val_mse)
    assert rep.selected_epoch == rep.val_mse.index(min(rep.val_mse))
    assert len(rep.train_loss) == len(rep.learning_rate) == 8


def test_returned_params_reproduce_selected_val(short_run):
    split, _, (p, rep) = short_run
    assert tr.validation_mse(p, FAST, split) == pytest.approx(rep.val_mse[rep.selected_epoch], rel=1e-12)


def test_loss_decreases_early(short_run):
    _, _, (_, rep) = short_run
    smooth = np.convolve(rep.train_loss, np.ones(3) / 3, mode="valid")
    assert np.all(np.diff(smooth) < 0)


def test_no_test_leakage(short_run):
    split, tc, (p1, r1) = short_run
    noisy = sinusoid()
    lo = math.floor(0.8 * len(noisy))
    noisy[lo:] = np.random.default_rng(9).normal(scale=50, size=noisy[lo:].shape)
    p2, r2 = tr.train(FAST, tc, tr.split_and_normalize(noisy))
    assert p1.array_equal(p2) and r1 == r2


def test_divergence_reports_coordinates():
    split = tr.split_and_normalize(sinusoid())
    with np.errstate(all="ignore"), pytest.raises(NumericError, match=r"epoch 0, batch \d+"):
        tr.train(FAST, tr.TrainConfig(learning_rate=1e300, epochs=2), split)


def test_patience_stops_early():
    split = tr.split_and_normalize(sinusoid())
    _, rep = tr.train(FAST, tr.TrainConfig(epochs=20, patience=1, learning_rate=0.5), split)
    assert len(rep.val_mse) <= 20
    if len(rep.val_mse) < 20:
        assert rep.val_mse[-1] >= min(rep.val_mse[:-1])


def test_report_csv(short_run, tmp_path):
    _, _, (_, rep) = short_run
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_mse,learning_rate,selected"
    assert len(lines) == 9
    assert sum(int(l.split(",")[-1]) for l in lines[1:]) == 1


def test_channel_mismatch_rejected():
    split = tr.split_and_normalize(sinusoid())
    with pytest.raises(ConfigError):
        tr.train(FAST.replace(channels=3), tr.TrainConfig(epochs=1), split)
