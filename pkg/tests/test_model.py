import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _models import base, build, config, spec_of
from mmstrat.errors import AssumptionViolation, ConfigError
from mmstrat.model.config import canonical_json, config_hash
from mmstrat.model.flow import OrderFlowSpec
from mmstrat.model.validate import assumption_c, validate

leaf = st.one_of(st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=5))
tree = st.recursive(leaf, lambda ch: st.one_of(st.lists(ch, max_size=3),
                                               st.dictionaries(st.text(max_size=4), ch, max_size=3)), max_leaves=12)


@given(st.dictionaries(st.text(max_size=6), tree, max_size=5))
@settings(max_examples=60, deadline=None)
def test_config_hash_stable_under_reserialisation(cfg):
    again = json.loads(canonical_json(cfg))
    assert config_hash(again) == config_hash(cfg)


def test_shipped_configs_build():
    for name in ("default", "good", "appA", "spread", "factor"):
        assert spec_of(name).n == 1


def test_bad_eta_names_b4():
    spec = build(config("bad-eta"), validate=False)
    rep = validate(spec)
    assert [c.assumption for c in rep.failures()] == ["B' (b4')"]
    with pytest.raises(AssumptionViolation, match="b4'"):
        build(config("bad-eta"))


def test_unknown_keys_and_forms_rejected():
    with pytest.raises(ConfigError, match="unknown coefficient keys"):
        build(base(price=3.0))
    with pytest.raises(ConfigError, match="unknown functional form"):
        build(base(M={"form": "spline"}))
    with pytest.raises(ConfigError, match="must exclude zero"):
        OrderFlowSpec.from_config({"support": [[-1.0, 1.0]], "rate": 1.0})


@given(st.floats(0.01, 0.9), st.floats(0.1, 3.0), st.sampled_from(["uniform", "power", "exponential"]),
       st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_marks_lie_in_support(a, hi, shape, seed):
    fl = OrderFlowSpec.from_config({"support": [[-hi - a, -a], [a, a + hi]], "shape": shape, "power": 1.5,
                                    "scale": 0.5, "rate": 1.0})
    rng = np.random.default_rng(seed)
    z = fl.sample_marks(rng.random(500), rng.random(500))
    inside = ((z >= -hi - a) & (z <= -a)) | ((z >= a) & (z <= a + hi))
    assert inside.all()


def test_assumption_c_for_penalty_config():
    c, c_tilde, lam_bar, M_bar, ok, msg = assumption_c(spec_of("appA"), 0.55)
    assert ok, msg
    assert c_tilde == pytest.approx(0.55 / 1.2)
    assert not assumption_c(spec_of("appA"), 2.0)[4]
