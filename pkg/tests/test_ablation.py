import csv
import io

import numpy as np
import pytest

from mdmlp_eia.ablation import (
    AblationSpec,
    SyntheticSignalSpec,
    alpha_star_oracle,
    eia_noninferiority_check,
    export_forecast,
    fit_and_score,
    noninferiority_configs,
    prepare_splits,
    run_ablation,
    synthetic_trend_seasonal,
)
from mdmlp_eia.model import ModelConfig, init_params
from mdmlp_eia.preprocess import DatasetError
from mdmlp_eia.tensor import ConfigError
from mdmlp_eia.training import TrainConfig

BASE = ModelConfig(lookback=16, horizon=8, channels=3, n_h=16)
FAST = TrainConfig(epochs=2, batch_size=32)


@pytest.fixture(scope="module")
def series():
    return synthetic_trend_seasonal(tlen=400, channels=3, seed=1)


def spec(series, **kw):
    base = dict(axis="eia_fusion", values=("ADD", "EIA"), horizons=(8,), repetitions=1, base=BASE, train_cfg=FAST)
    return AblationSpec(series, **{**base, **kw})


class TestRunAblation:
    def test_layout_and_summary(self, series):
        res = run_ablation(spec(series, horizons=(4, 8), repetitions=2))
        assert [(r.variant, r.horizon, r.seed) for r in res.rows] == [
            (v, h, s) for v in ("ADD", "EIA") for h in (4, 8) for s in (0, 1)
        ]
        rows = list(csv.DictReader(io.StringIO(res.to_csv())))
        assert list(rows[0])[:6] == ["axis", "variant", "horizon", "seed", "mse", "mae"]
        summary = {v: m for v, m, _, _ in res.summary()}
        assert summary["EIA"] == pytest.approx(np.mean([r.mse for r in res.rows if r.variant == "EIA"]))

    def test_repeatable(self, series):
        assert run_ablation(spec(series)).to_csv() == run_ablation(spec(series)).to_csv()

    def test_single_variant_matches_plain_run(self, series):
        res = run_ablation(spec(series, values=("EIA",), seed_base=3))
        cfg = BASE.replace(horizon=8, seed=3)
        _, report = fit_and_score(series, cfg, TrainConfig(epochs=2, batch_size=32, seed=3))
        assert res.rows[0].mse == report.mse and res.rows[0].mae == report.mae

    def test_dca_equivalent_fixed_capacity_is_identical(self, series):
        widths = BASE.widths()
        res = run_ablation(spec(series, axis="capacity", values=("DCA", "fixed:%d,%d,%d" % widths)))
        assert res.rows[0].mse == res.rows[1].mse

    def test_failed_cell_is_recorded(self, series):
        res = run_ablation(spec(series, horizons=(8, 500)))
        bad = [r for r in res.rows if r.horizon == 500]
        assert bad and all("DatasetError" in r.error for r in bad)
        assert all(not r.error for r in res.rows if r.horizon == 8)
        assert res.summary()[0][3] == 1

    def test_invalid_variant(self, series):
        with pytest.raises(ConfigError):
            spec(series, values=("EIA", "SOFTMAX"))
        with pytest.raises(ConfigError):
            spec(series, axis="capacity", values=("fixed:x",))
        with pytest.raises(ConfigError):
            spec(series, axis="depth")

    def test_write(self, series, tmp_path):
        a, b = run_ablation(spec(series)).write(tmp_path)
        assert a.read_text().startswith("axis,variant,horizon,seed,mse,mae")
        assert b.read_text().startswith("variant,avg_mse,avg_mae,missing")


class TestAlphaOracle:
    def test_noiseless_limit(self):
        r = alpha_star_oracle(SyntheticSignalSpec(tlen=5000, noise_var=0.0))
        assert r.alpha_hat == 1.0 and r.alpha_star == 1.0

    def test_no_weak_component(self):
        r = alpha_star_oracle(SyntheticSignalSpec(tlen=5000, var_s2=0.0))
        assert r.alpha_hat == 0.0 and r.alpha_star == 0.0

    def test_equal_variances(self):
        r = alpha_star_oracle(SyntheticSignalSpec(tlen=100_000))
        assert abs(r.alpha_hat - 0.5) <= 0.01
        assert r.mse[0] > r.mse.min()
        assert abs(r.reduction - 0.5) / 0.5 < 0.05

    def test_generated_variances(self):
        s1, s2, n = SyntheticSignalSpec(tlen=100_000, var_s1=4.0, var_s2=2.0, noise_var=0.5).generate()
        assert s1.var() == pytest.approx(4.0, rel=0.01)
        assert s2.var() == pytest.approx(2.0, rel=0.01)
        assert n.var() == pytest.approx(0.5, rel=0.03)

    def test_estimate_converges_with_samples(self):
        # a fine grid exposes the sampling error of the minimiser; 16x the data
        # should cut the mean absolute error roughly fourfold
        grid = np.linspace(0, 1, 1001)

        def mean_err(n):
            return np.mean(
                [abs(alpha_star_oracle(SyntheticSignalSpec(tlen=n, seed=s), grid).alpha_hat - 0.5) for s in range(16)]
            )

        assert mean_err(64_000) < 0.5 * mean_err(4_000)

    def test_grid_must_cover_unit_interval(self):
        with pytest.raises(ConfigError):
            alpha_star_oracle(SyntheticSignalSpec(tlen=100), np.linspace(0.1, 1, 10))

    def test_negative_variance(self):
        with pytest.raises(ConfigError):
            SyntheticSignalSpec(var_s2=-1)


class TestNoninferiority:
    def test_untrained_twins_are_identical(self):
        cfg, tcfg = noninferiority_configs(4)
        r = eia_noninferiority_check(0, tcfg=TrainConfig(**{**tcfg.__dict__, "base_lr": 0.0, "epochs": 1}))
        assert r.loss_eia == r.loss_add and r.passed

    def test_short_run(self):
        cfg, tcfg = noninferiority_configs(4)
        r = eia_noninferiority_check(0, tcfg=TrainConfig(**{**tcfg.__dict__, "epochs": 3}))
        assert np.isfinite(r.loss_eia) and np.isfinite(r.loss_add)
        assert len(r.history_eia) == len(r.history_add) == 3


class TestExport:
    def setup_method(self):
        self.series = synthetic_trend_seasonal(tlen=300, channels=2, seed=0)
        self.cfg = BASE.replace(channels=2)
        _, _, self.test, _ = prepare_splits(self.series, 16, 8)
        self.test.channel_names = ["a", "b"]
        self.params = init_params(self.cfg)

    def rows(self, path):
        lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
        return list(csv.DictReader(lines))

    def test_row_count_and_header(self, tmp_path):
        p = export_forecast(self.params, self.cfg, self.test, 3, tmp_path / "f.csv")
        rows = self.rows(p)
        assert len(rows) == 16 + 8
        assert "lookback 16 + horizon 8" in p.read_text().splitlines()[1]
        assert rows[0]["a_pred"] == "" and rows[16]["a_pred"] != ""

    def test_perfect_predictor(self, tmp_path):
        _, y = self.test.batch(np.array([2]))
        p = export_forecast(self.params, self.cfg, self.test, 2, tmp_path / "f.csv", forecaster=lambda x: y)
        for r in self.rows(p)[16:]:
            assert r["a_truth"] == r["a_pred"] and r["b_truth"] == r["b_pred"]

    def test_byte_identical_reexport(self, tmp_path):
        for name in ("1", "2"):
            export_forecast(self.params, self.cfg, self.test, 0, tmp_path / f"{name}.csv", tmp_path / f"{name}.svg")
        assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()
        assert (tmp_path / "1.svg").read_bytes() == (tmp_path / "2.svg").read_bytes()
        assert (tmp_path / "1.svg").read_text().startswith("<svg")

    def test_index_out_of_range(self, tmp_path):
        with pytest.raises(DatasetError):
            export_forecast(self.params, self.cfg, self.test, len(self.test), tmp_path / "f.csv")
