import json

import numpy as np
import pytest

import extremo.subsampling as subsampling
from extremo import (
    DependenceModel,
    Family,
    SubsampleConfig,
    WeightKind,
    block_starts,
    build_domain,
    simulate_brown_resnick,
    square_sites,
    subsample_ci,
)
from extremo.errors import PartialFailureError, UndefinedEstimateError, ValidationError

THETA_I = {"C1": 0.8, "C2": 0.4, "alpha1": 1.5, "alpha2": 1.0}
MODEL = DependenceModel(Family.ISO_FRAC, THETA_I)
LAGS = [(0, 0, 1), (0, 0, 2), (1, 0, 0), (2, 0, 0), (1, 1, 1), (2, 1, 0), (1, 2, 0)]


def field(n, seed, side=4):
    dom = build_domain(square_sites(side, side), n, 1)
    return simulate_brown_resnick(MODEL, dom, np.random.default_rng(seed))


@pytest.fixture(scope="module")
def fld():
    return field(120, 3)


def run(fld, config, seed=0, **kw):
    kw.setdefault("weights_kind", WeightKind.IDENTITY)
    kw.setdefault("starts", 4)
    return subsample_ci(fld, LAGS, 0.9, family=Family.ISO_FRAC, config=config, rng=seed, **kw)


def test_block_starts():
    assert block_starts(10, 4, 3, 1) == [(0,), (3,), (6,)]
    assert block_starts(5, 3, 1, 2) == [(i, j) for i in range(3) for j in range(3)]


def test_default_config():
    cfg = SubsampleConfig.default(200)
    assert cfg.block_length == int(np.floor(200**0.7)) == 40
    assert cfg.stride == 13
    assert cfg.resolved_beta1(1, 3) == pytest.approx(5 / 72)


@pytest.mark.parametrize(
    "cfg",
    [
        SubsampleConfig(200, 1),
        SubsampleConfig(50, 5, level=1.0),
        SubsampleConfig(50, 5, beta1=0.05),
        SubsampleConfig(50, 5, beta1=1 / 6),
        SubsampleConfig(0, 5),
    ],
)
def test_config_validation(fld, cfg):
    with pytest.raises(ValidationError):
        run(fld, cfg)


def test_needs_ten_blocks(fld):
    with pytest.raises(ValidationError, match="10"):
        run(fld, SubsampleConfig(60, 10))  # 7 blocks


def test_single_block_is_degenerate(fld):
    ci = run(fld, SubsampleConfig(120, 1))
    assert ci.n_blocks == 1
    for k, v in ci.point_estimate.items():
        assert ci.lower[k] == v == ci.upper[k]


def test_interval_shape_and_determinism(fld, tmp_path):
    cfg = SubsampleConfig(60, 6)
    a = run(fld, cfg, seed=5)
    b = run(fld, cfg, seed=5)
    assert a.n_blocks + a.n_dropped == 11
    for k in a.point_estimate:
        assert a.lower[k] <= a.upper[k]
    assert a.to_json() == b.to_json()
    assert set(json.loads(a.to_json())) >= {"lower", "upper", "n_blocks", "config", "point_estimate"}
    a.write_csv(tmp_path / "ci.csv")
    assert (tmp_path / "ci.csv").read_text().splitlines()[0] == "parameter,estimate,lower,upper"


def test_reuse_threshold_flag(fld):
    cfg = SubsampleConfig(60, 6, reuse_threshold=True)
    ci = run(fld, cfg)
    assert ci.n_blocks == 11


def test_dropped_blocks(fld, monkeypatch):
    real = subsampling.fit_field
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] in (1, 5):
            raise UndefinedEstimateError("synthetic failure")
        return real(*args, **kwargs)

    monkeypatch.setattr(subsampling, "fit_field", flaky)
    with pytest.warns(RuntimeWarning, match="dropped"):
        ci = run(fld, SubsampleConfig(60, 6))
    assert ci.n_dropped == 2 and ci.n_blocks == 9

    def broken(*args, **kwargs):
        raise UndefinedEstimateError("synthetic failure")

    monkeypatch.setattr(subsampling, "fit_field", broken)
    with pytest.warns(RuntimeWarning), pytest.raises(PartialFailureError) as info:
        run(fld, SubsampleConfig(60, 6))
    assert info.value.n_failed == 11


def test_widths_shrink_with_n():
    # exponents fixed through the box so the widths of C1, C2 are not dominated by box-edge estimates
    box = {"alpha1": (1.5, 1.5), "alpha2": (1.0, 1.0)}
    widths = []
    for n in (100, 200, 400):
        per = []
        for r in range(6):
            f = field(n, 1000 + 10 * n + r, side=6)
            ci = run(f, SubsampleConfig(n // 2, n // 20), seed=r, starts=3, box=box)
            per.append([ci.upper[k] - ci.lower[k] for k in ("C1", "C2")])
        widths.append(np.median(per, axis=0))
    widths = np.array(widths)
    assert np.all(np.diff(widths, axis=0) < 0)
