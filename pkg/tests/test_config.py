import json

import numpy as np
import pandas as pd
import pytest

from mnlfa import (
    ConfigError,
    dataset_from_frame,
    estimates_frame,
    load_config,
    pack,
    packed_from_estimates,
    parse_config,
)

BUNDLED = [
    "configs/three_factor_model.json",
    "configs/correlation_curves.json",
]


def _minimal(**extra):
    cfg = {"items": 3, "factors": 1}
    cfg.update(extra)
    return cfg


def test_minimal_config_defaults():
    mc = parse_config(_minimal())
    assert mc.item_names == ["y1", "y2", "y3"]
    assert mc.factor_names == ["f1"]
    assert mc.covariate_names == []
    assert mc.spec.n_items == 3 and mc.spec.n_factors == 1
    assert np.isnan(mc.spec.loading_pattern).all()
    assert mc.pen_cfg.kind == "none"
    assert mc.fit_cfg.max_iter == 500
    assert mc.truth is None


def test_name_lists_count_or_names():
    mc = parse_config({"items": ["a", "b"], "factors": 1, "covariates": 2})
    assert mc.item_names == ["a", "b"]
    assert mc.covariate_names == ["x1", "x2"]
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config({"items": ["a", "a"], "factors": 1})
    with pytest.raises(ConfigError, match="missing required"):
        parse_config({"items": 3})
    with pytest.raises(ConfigError, match="integer count or a list"):
        parse_config({"items": 3.5, "factors": 1})


def test_loadings_pattern_parsing():
    cfg = _minimal(factors=2, loadings=[["free", 0], [1.0, None], [0, "FREE"]])
    pat = parse_config(cfg).spec.loading_pattern
    assert np.isnan(pat[0, 0]) and pat[0, 1] == 0.0
    assert pat[1, 0] == 1.0 and np.isnan(pat[1, 1])
    assert pat[2, 0] == 0.0 and np.isnan(pat[2, 1])
    with pytest.raises(ConfigError, match="list of 3 rows"):
        parse_config(_minimal(loadings=[["free"]]))
    with pytest.raises(ConfigError, match="must have 1 entries"):
        parse_config(_minimal(loadings=[["free", 0], ["free"], ["free"]]))
    with pytest.raises(ConfigError, match="number or \"free\""):
        parse_config(_minimal(loadings=[[True], ["free"], ["free"]]))


def test_moderation_family_list_and_dict_forms():
    cfg = {
        "items": ["a", "b", "c"], "factors": ["g"], "covariates": ["age", "site"],
        "moderation": {
            "intercepts": ["age"],
            "residual_variances": {"b": ["site"]},
            "loadings": {"c:g": ["age", "site"]},
        },
    }
    spec = parse_config(cfg).spec
    np.testing.assert_array_equal(spec.moderated["nu"][:, 0], True)
    np.testing.assert_array_equal(spec.moderated["nu"][:, 1], False)
    assert spec.moderated["theta"][1, 1] and not spec.moderated["theta"][0, 1]
    assert spec.moderated["lambda"][2, 0].all()


def test_moderation_errors():
    base = {"items": 2, "factors": 1, "covariates": 1}
    with pytest.raises(ConfigError, match="unknown moderation family"):
        parse_config({**base, "moderation": {"typo": ["x1"]}})
    with pytest.raises(ConfigError, match="unknown covariate"):
        parse_config({**base, "moderation": {"intercepts": ["x9"]}})
    with pytest.raises(ConfigError, match="unknown item"):
        parse_config({**base, "moderation": {"intercepts": {"nope": ["x1"]}}})
    with pytest.raises(ConfigError, match="item:factor"):
        parse_config({**base, "moderation": {"loadings": {"y1": ["x1"]}}})
    with pytest.raises(ConfigError, match="covariate list or an object"):
        parse_config({**base, "moderation": {"intercepts": 3}})
    two = {"items": 2, "factors": 2, "covariates": 1,
           "loadings": [["free", 0], [0, "free"]]}
    with pytest.raises(ConfigError, match="same factor twice"):
        parse_config({**two, "moderation": {"factor_correlations": {"f1:f1": ["x1"]}}})
    with pytest.raises(ConfigError, match="f1:f2"):
        parse_config({**two, "moderation": {"factor_correlations": {"f1": ["x1"]}}})


def test_identification_and_corr_param_errors():
    with pytest.raises(ConfigError, match="identification"):
        parse_config(_minimal(identification="nope"))
    with pytest.raises(ConfigError, match="corr_param"):
        parse_config(_minimal(correlation_parameterization="nope"))


def test_penalty_section():
    cfg = _minimal(covariates=1, moderation={"intercepts": ["x1"]},
                   penalty={"kind": "ridge", "w0": 0.25, "nu_scale": 2.0})
    pen = parse_config(cfg).pen_cfg
    assert pen.kind == "ridge" and pen.w0 == 0.25 and pen.nu_scale == 2.0
    assert len(pen.blocks) == 1 and pen.blocks[0].size == 3
    with pytest.raises(ConfigError, match="invalid penalty"):
        parse_config(_minimal(penalty={"kind": "ridge", "w0": 1.5}))
    with pytest.raises(ConfigError, match="invalid penalty"):
        parse_config(_minimal(penalty={"kind": "nope"}))
    single = parse_config({**cfg, "penalty": {"kind": "ridge", "blocks": "single"}})
    assert len(single.pen_cfg.blocks) == 1


def test_optimizer_section():
    fc = parse_config(_minimal(optimizer={"max_iter": 99, "seed": 7})).fit_cfg
    assert fc.max_iter == 99 and fc.seed == 7
    with pytest.raises(ConfigError, match="unknown optimizer options"):
        parse_config(_minimal(optimizer={"iterations": 10}))
    with pytest.raises(ConfigError, match="invalid optimizer"):
        parse_config(_minimal(optimizer={"max_iter": 0}))


def test_truth_parsing_and_validation():
    cfg = _minimal(truth={})
    truth = parse_config(cfg).truth
    np.testing.assert_array_equal(truth.nu0, 0.0)
    np.testing.assert_allclose(np.exp(truth.log_theta0), 0.5)
    np.testing.assert_allclose(truth.lambda0, 0.8)
    with pytest.raises(ConfigError, match="residual_variances must be positive"):
        parse_config(_minimal(truth={"residual_variances": [0.5, -1, 0.5]}))
    with pytest.raises(ConfigError, match="3 entries"):
        parse_config(_minimal(truth={"intercepts": [0.0]}))
    with pytest.raises(ConfigError, match="strictly inside"):
        parse_config({"items": 2, "factors": 2,
                      "loadings": [["free", 0], [0, "free"]],
                      "truth": {"factor_correlations": [1.0]}})
    with pytest.raises(ConfigError, match="conflicts with fixed"):
        parse_config(_minimal(loadings=[[1.0], ["free"], ["free"]],
                              truth={"loadings": [[0.5], [0.5], [0.5]]}))


def test_truth_deltas_extend_moderation_masks():
    cfg = {
        "items": 2, "factors": 1, "covariates": ["z"],
        "truth": {"deltas": {"intercepts": {"y2": {"z": 0.4}}}},
    }
    mc = parse_config(cfg)
    assert mc.spec.moderated["nu"][1, 0]
    assert not mc.spec.moderated["nu"][0, 0]
    assert mc.truth.delta_nu[1, 0] == 0.4
    with pytest.raises(ConfigError, match="must be a number"):
        parse_config({**cfg, "truth": {"deltas": {"intercepts": {"y2": {"z": "big"}}}}})
    with pytest.raises(ConfigError, match="unknown truth delta family"):
        parse_config({**cfg, "truth": {"deltas": {"typo": {}}}})


def test_unconstrained_truth_correlations():
    cfg = {"items": 2, "factors": 2, "loadings": [["free", 0], [0, "free"]],
           "truth": {"factor_correlations_unconstrained": [0.7]}}
    truth = parse_config(cfg).truth
    assert truth.gamma0[0] == 0.7
    with pytest.raises(ConfigError, match="1 entries"):
        parse_config({**cfg, "truth": {"factor_correlations_unconstrained": [0.7, 0.1]}})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(arr)


def test_bundled_configs_parse():
    for path in BUNDLED:
        mc = parse_config(load_config(path))
        assert mc.truth is not None
        assert mc.spec.n_factors == 3


def test_dataset_from_frame_validation():
    mc = parse_config({"items": ["a", "b"], "factors": 1, "covariates": ["z"]})
    df = pd.DataFrame({"a": [1.0, np.nan], "b": [0.5, 1.5], "z": [0.0, 1.0]})
    ds = dataset_from_frame(df, mc)
    assert ds.n_persons == 2 and ds.n_missing == 1
    lw = dataset_from_frame(df, mc, "listwise")
    assert lw.n_persons == 1
    with pytest.raises(ConfigError, match="missing required column 'z'"):
        dataset_from_frame(df.drop(columns=["z"]), mc)
    with pytest.raises(ConfigError, match="'z' has missing values"):
        dataset_from_frame(df.assign(z=[1.0, np.nan]), mc)
    with pytest.raises(ConfigError, match="non-numeric"):
        dataset_from_frame(df.assign(a=["1.0", "oops"]), mc)
    with pytest.raises(ConfigError, match="all items missing"):
        dataset_from_frame(df.assign(a=[np.nan, 1.0], b=[np.nan, 1.0]), mc)
    with pytest.raises(ConfigError, match="unknown missing-data mode"):
        dataset_from_frame(df, mc, "pairwise")


def test_estimates_frame_and_round_trip():
    mc = parse_config({
        "items": 3, "factors": 1, "covariates": 1,
        "moderation": {"intercepts": ["x1"]},
        "penalty": {"kind": "lasso", "w0": 0.2},
    })
    rng = np.random.default_rng(0)
    packed = rng.standard_normal(mc.spec.n_free)
    table = estimates_frame(packed, mc, std_errors=None, pen_cfg=mc.pen_cfg)
    assert list(table.columns) == ["parameter", "block", "estimate", "std_error", "penalized"]
    assert len(table) == mc.spec.n_free
    assert table["parameter"].is_unique
    assert table["std_error"].isna().all()
    np.testing.assert_array_equal(
        table["penalized"].to_numpy(),
        np.array([False] * (mc.spec.n_free - 3) + [True] * 3),
    )
    back = packed_from_estimates(table, mc)
    np.testing.assert_array_equal(back, packed)
    with pytest.raises(ConfigError, match="missing parameters"):
        packed_from_estimates(table.iloc[:-1], mc)
    with pytest.raises(ConfigError, match="'parameter' and 'estimate'"):
        packed_from_estimates(pd.DataFrame({"a": [1]}), mc)


def test_unpenalized_frame_marks_nothing_penalized():
    mc = parse_config({"items": 2, "factors": 1})
    table = estimates_frame(np.zeros(mc.spec.n_free), mc, pen_cfg=mc.pen_cfg)
    assert not table["penalized"].any()
