import numpy as np
import pytest

from affine_ldp import AffineModel, Constant, ergodic_quantities, lattice_span, load_model, validate
from affine_ldp.errors import DimensionMismatch, ModelFileError
from affine_ldp.transform import eta_derivatives

from conftest import fixture_path


def test_fixtures_validate(all_models):
    for name, model in all_models.items():
        assert validate(model).passed, name


def test_model_round_trip(lattice_model):
    again = AffineModel.from_dict(lattice_model.to_dict())
    assert again.to_dict() == lattice_model.to_dict()


def test_arrays_are_read_only(lattice_model):
    with pytest.raises(ValueError):
        lattice_model.b[0] = 1.0


def test_shape_errors(lattice_model):
    with pytest.raises(DimensionMismatch):
        lattice_model.replace(b=[1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        lattice_model.replace(marks=(Constant(1.0),))


def test_each_clause_is_reported(lattice_model):
    cases = {
        "II": lattice_model.replace(b=[0.0, 6.1, 6.2]),
        "I(4)": lattice_model.replace(beta=lattice_model.beta + np.array(
            [[0, 0.1, 0], [0, 0, 0], [0, 0, 0]])),
        "I(5)": lattice_model.replace(lam=[-1.0, 0.0, 0.0]),
        "I(6)": lattice_model.replace(gamma=-lattice_model.gamma),
        "III": lattice_model.replace(beta=0.1 * lattice_model.beta),
    }
    for clause, model in cases.items():
        report = validate(model)
        assert not report.passed
        assert clause in {c for c, _ in report.violations}, (clause, report.violations)


def test_malformed_file(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("d = 3\nalpha = [")
    with pytest.raises(ModelFileError):
        load_model(bad)
    missing = tmp_path / "missing.toml"
    missing.write_text("d = 1\n")
    with pytest.raises(ModelFileError):
        load_model(missing)


def test_poisson_ergodic_values(poisson_model):
    eq = ergodic_quantities(poisson_model)
    assert eq.r == pytest.approx(1.0)
    assert eq.sigma2 == pytest.approx(1.0)


def test_ergodic_quantities_against_transform(all_models):
    for model in all_models.values():
        eq = ergodic_quantities(model)
        e = eta_derivatives(model, 0.0, 2)
        assert e[1] == pytest.approx(eq.r, rel=1e-10)
        assert e[2] == pytest.approx(eq.sigma2, rel=1e-10)


def test_lattice_spans(all_models):
    assert lattice_span(all_models["lattice"]) == 1.0
    assert lattice_span(all_models["exponential"]) is None
