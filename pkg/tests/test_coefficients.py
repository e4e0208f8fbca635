import dataclasses

import numpy as np
import pytest

from nematicflow.coefficients import (
    CoefficientFunctions,
    LeslieCoefficients,
    preset,
    validate,
)

SPECIAL = preset("chl20-special")
THETAS = np.linspace(-2 * np.pi, 2 * np.pi, 997)


def test_special_preset_passes_with_expected_gammas():
    rep = validate(SPECIAL)
    assert rep.passed, rep.failed_names()
    assert SPECIAL.gamma1 == 2.0
    assert SPECIAL.gamma2 == 0.0


def test_special_preset_c_bar_is_one_half():
    # g = h = 1, gamma1 = 2: min(g - h^2/gamma1) = 1 - 1/2
    rep = validate(SPECIAL)
    assert rep.c_bar == pytest.approx(0.5, abs=1e-14)
    assert rep.c_star == pytest.approx(1.0, abs=1e-14)


def test_gamma1_violation_fails_on_that_relation():
    bad = dataclasses.replace(SPECIAL, alpha3=-1.0)  # gamma1 = 0
    rep = validate(bad)
    assert not rep.passed
    assert "gamma1-positive" in rep.failed_names()


def test_parodi_violation_fails_exactly_parodi():
    bad = dataclasses.replace(SPECIAL, alpha6=SPECIAL.alpha6 + 0.1)
    rep = validate(bad)
    assert rep.failed_names() == ["parodi"]


def test_nonfinite_input_rejected():
    bad = dataclasses.replace(SPECIAL, alpha1=np.nan)
    with pytest.raises(ValueError):
        validate(bad)
    with pytest.raises(ValueError):
        CoefficientFunctions(bad)


def test_special_g_h_are_exactly_one():
    fns = CoefficientFunctions(SPECIAL)
    assert np.all(fns.g(THETAS) == 1.0)
    assert np.all(fns.h(THETAS) == 1.0)
    assert np.all(fns.c2(THETAS) == 1.0)


def test_endpoint_values_of_h_and_c2():
    co = preset("soft-anisotropic")
    fns = CoefficientFunctions(co)
    assert fns.h(0.0) == pytest.approx(co.alpha3, abs=1e-15)
    assert fns.c2(0.0) == pytest.approx(co.k1, abs=1e-15)
    assert fns.h(np.pi / 2) == pytest.approx(-co.alpha2, abs=1e-14)
    assert fns.c2(np.pi / 2) == pytest.approx(co.k3, abs=1e-14)


def test_special_damping_b_is_one():
    fns = CoefficientFunctions(SPECIAL)
    assert np.all(fns.damping_b(THETAS) == 1.0)
    assert np.all(fns.char_b(THETAS) == -1.0)


@pytest.mark.parametrize("name", ["chl20-special", "special-anisotropic",
                                  "soft-anisotropic", "mbba-like"])
def test_presets_validate_and_damping_positive_on_dense_grid(name):
    co = preset(name)
    rep = validate(co)
    assert rep.passed, (name, rep.failed_names())
    fns = CoefficientFunctions(co)
    th = np.linspace(0.0, np.pi, 10_000)
    assert np.min(fns.damping_b(th)) > 0.0
    assert np.min(fns.g(th) - fns.h(th) ** 2 / co.gamma1) > 0.0


def test_pi_periodicity():
    fns = CoefficientFunctions(preset("mbba-like"))
    for f in (fns.g, fns.h, fns.c2, fns.damping_b):
        np.testing.assert_allclose(f(THETAS), f(THETAS + np.pi), rtol=0, atol=1e-12)


def test_closed_form_derivatives_match_central_differences():
    fns = CoefficientFunctions(preset("soft-anisotropic"))
    e = 1e-6
    for f, df in ((fns.g, fns.dg), (fns.h, fns.dh), (fns.c, fns.dc), (fns.c2, fns.dc2)):
        fd = (f(THETAS + e) - f(THETAS - e)) / (2 * e)
        np.testing.assert_allclose(df(THETAS), fd, rtol=0, atol=1e-8)


def test_c_bounded_below_by_sqrt_min_frank():
    co = preset("special-anisotropic")
    fns = CoefficientFunctions(co)
    cmin = np.sqrt(min(co.k1, co.k3))
    assert np.min(fns.c(THETAS)) >= cmin - 1e-14
    assert fns.c_min() == pytest.approx(cmin)


def test_parodi_implies_fourth_relation():
    # whenever gamma1 > 0 and gamma1*(2a4+a5+a6) > gamma2^2 hold, 2a4+a5+a6 > 0
    rng = np.random.default_rng(2024)
    found = 0
    for _ in range(500):
        a1, a2, a3, a4, a5 = rng.uniform(-2, 2, size=5)
        a6 = a2 + a3 + a5  # force Parodi
        co = LeslieCoefficients(a1, a2, a3, abs(a4) + 1e-3, a5, a6, k1=1.0, k3=1.3)
        if co.gamma1 > 0 and co.gamma1 * (2 * co.alpha4 + co.alpha5 + co.alpha6) > co.gamma2 ** 2:
            found += 1
            assert 2 * co.alpha4 + co.alpha5 + co.alpha6 > 0
    assert found > 50  # the sampled family actually exercises the implication


def test_validation_report_serializes():
    d = validate(SPECIAL).as_dict()
    assert d["passed"] is True
    assert {c["name"] for c in d["checks"]} >= {"parodi", "gamma1-positive"}


def test_unknown_preset_raises():
    with pytest.raises(KeyError):
        preset("no-such-preset")
