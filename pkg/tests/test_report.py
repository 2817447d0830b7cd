import csv

import numpy as np
import pytest

from powerlmm.data import LongitudinalDataset
from powerlmm.kernels import ChainConfig, ChainTrace
from powerlmm.models import SCALAR_NAMES, ModelSpec, PriorConfig, Structure
from powerlmm.report import (
    acf_band, fit_posterior, summarize_parameters, summarize_random_effects, write_acf_band,
    write_parameter_table, write_random_effects,
)

S = Structure


def synthetic_trace(structure, columns: dict, n=None):
    n = n or len(next(iter(columns.values())))
    theta = np.zeros((n, len(SCALAR_NAMES)))
    for k, v in columns.items():
        theta[:, SCALAR_NAMES.index(k)] = v
    return ChainTrace(ModelSpec(structure), np.zeros(n), theta)


def test_constant_trace():
    tr = synthetic_trace(S.S1_RANDINT, {"beta0": np.full(20, 2.5), "sigma": np.full(20, 1.0),
                                        "sigma0": np.full(20, 0.3)})
    tab = summarize_parameters(tr)
    assert set(tab) == {"beta0", "sigma", "sigma0"}
    assert tab["beta0"] == {"mean": 2.5, "sd": 0.0, "q0.025": 2.5, "q0.975": 2.5}


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        summarize_parameters(synthetic_trace(S.S1_FIXED, {"beta0": np.zeros(0)}, n=0))


def test_quantile_ordering_and_permutation_invariance():
    rng = np.random.default_rng(3)
    cols = {"beta0": rng.normal(size=501), "sigma": rng.gamma(2, size=501)}
    tab = summarize_parameters(synthetic_trace(S.S1_FIXED, cols))
    perm = rng.permutation(501)
    tab2 = summarize_parameters(synthetic_trace(S.S1_FIXED, {k: v[perm] for k, v in cols.items()}))
    for k in cols:
        assert tab[k]["q0.025"] <= tab[k]["mean"] <= tab[k]["q0.975"]
        for c in ("q0.025", "q0.975"):
            assert tab[k][c] == tab2[k][c]
        assert tab[k]["mean"] == pytest.approx(tab2[k]["mean"], abs=1e-12)
        assert tab[k]["sd"] == pytest.approx(tab2[k]["sd"], abs=1e-12)
    assert tab["beta0"]["q0.025"] == pytest.approx(np.quantile(cols["beta0"], 0.025))


def test_random_effects_require_ownership(toy):
    tr = fit_posterior(ModelSpec(S.S1_FIXED), toy, ChainConfig(50, 0, 1, 1))
    with pytest.raises(ValueError):
        summarize_random_effects(tr)
    tr = fit_posterior(ModelSpec(S.S1_RANDINT), toy, ChainConfig(50, 0, 1, 1))
    with pytest.raises(ValueError):
        summarize_random_effects(tr, ["b1"])
    assert set(summarize_random_effects(tr)) == set(toy.ids)


def test_exchangeable_individuals_agree():
    y = [1.2, 0.4, 2.0, 1.1]
    data = LongitudinalDataset.from_arrays(["a"] * 4 + ["b"] * 4 + ["c"] * 4, list(range(4)) * 3,
                                           y + y + [-1.0, -0.5, -1.5, -0.2])
    tr = fit_posterior(ModelSpec(S.S1_RANDBOTH), data, ChainConfig(40_000, 4000, 1, 5))
    eff = summarize_random_effects(tr)
    for e in ("b0", "b1"):
        draws = getattr(tr, e)
        diff = draws[:, 0] - draws[:, 1]
        from powerlmm.thermo import effective_sample_size
        se = diff.std() / np.sqrt(effective_sample_size(diff))
        assert abs(eff["a"][e] - eff["b"][e]) < 4 * se + 1e-12


def test_random_effect_shrinkage(toy):
    means = []
    for upper in (10.0, 0.05):
        spec = ModelSpec(S.S1_RANDINT, PriorConfig(10, 10, overrides={"sigma0": upper}))
        tr = fit_posterior(spec, toy, ChainConfig(20_000, 2000, 1, 2))
        means.append(np.abs(tr.b0.mean(axis=0)).max())
    assert means[1] < means[0]
    assert means[1] < 0.1


def test_acf_band_examples():
    tr = synthetic_trace(S.F_SLOPE_ARCOV, {"rho": np.full(30, 0.97)})
    band = acf_band(tr, 10)
    assert band[0] == {"lag": 0, "mean": 1.0, "q0.025": 1.0, "q0.975": 1.0}
    assert band[10]["mean"] == pytest.approx(0.97**10, abs=1e-12)
    assert band[10]["mean"] == pytest.approx(0.7374, abs=1e-4)
    assert band[10]["q0.975"] - band[10]["q0.025"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        acf_band(synthetic_trace(S.S1_RANDBOTH, {"beta0": np.zeros(3)}), 3)


def test_acf_band_is_mean_of_powers():
    rho = np.linspace(-0.9, 0.9, 1001)
    band = acf_band(synthetic_trace(S.F_SLOPE_LATENTW, {"rho": rho}), 4)
    assert band[2]["mean"] == pytest.approx(np.mean(rho**2), abs=1e-12)
    assert abs(band[2]["mean"] - np.mean(rho) ** 2) > 0.2


def test_fit_retention_and_determinism(toy):
    cfg = ChainConfig(100, 0, 1, 9)
    a = fit_posterior(ModelSpec(S.S1_RANDBOTH), toy, cfg)
    b = fit_posterior(ModelSpec(S.S1_RANDBOTH), toy, cfg)
    assert len(a) == 100
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.b1, b.b1)


def test_writers(tmp_path, toy):
    tr = fit_posterior(ModelSpec(S.F_SLOPE_ARCOV), toy, ChainConfig(200, 20, 1, 1))
    write_parameter_table(tmp_path / "p.csv", summarize_parameters(tr))
    write_random_effects(tmp_path / "r.csv", summarize_random_effects(tr))
    write_acf_band(tmp_path / "a.csv", acf_band(tr, 5))
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert [r["parameter"] for r in rows] == list(S.F_SLOPE_ARCOV.parameters)
    assert list(csv.DictReader(open(tmp_path / "r.csv")))[0].keys() == {"id", "mean_b1"}
    assert len(list(csv.DictReader(open(tmp_path / "a.csv")))) == 6
