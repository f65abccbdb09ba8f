import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from quaffure.estimators import NeuralDrape, QuasiStaticDrape
from quaffure.errors import ValidationError
from quaffure.fixtures import demo_groom, hanging_strand
from quaffure.kinematics import PoseParams


def test_quasi_static_params_round_trip():
    est = QuasiStaticDrape(method="adam", max_iter=10, solver_options={"lr": 1e-3})
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict()


def test_quasi_static_hanging_strand():
    groom = hanging_strand()
    est = QuasiStaticDrape(max_iter=500, material={"k_cosserat": 0.0}).fit(groom)
    x = est.predict()
    assert x.shape == (1,) + groom.positions.shape
    assert est.metrics_[0].length_preservation < 5e-2
    assert est.results_[0].final_energy < est.results_[0].energies[0]


def test_quasi_static_posed_batch(body):
    groom = demo_groom(body, 3, n_vertices=8)
    est = QuasiStaticDrape(max_iter=50).fit(groom, body)
    poses = [PoseParams.zeros(body.n_joints), np.r_[0.0, 0.0, 0.0, 0.0, 0.0, 0.2, np.zeros(6)]]
    x = est.predict(poses, betas=[0.1, 0.0])
    assert x.shape == (2, 3, 8, 3)
    beta = np.array([0.1, 0.0])
    xp = est.posed(beta, PoseParams.from_vector(poses[1], body.n_joints))[0]
    assert np.array_equal(x[1, :, 0], xp[:, 0])
    with pytest.raises(ValidationError):
        est.predict(poses, betas=np.zeros((3, 2)))


def test_material_validation():
    with pytest.raises(ValidationError):
        QuasiStaticDrape(material="silk").fit(hanging_strand())


def test_neural_fit_predict_save_load(body, tmp_path):
    grooms = [demo_groom(body, 3, n_vertices=8, seed=0, name="a")]
    est = NeuralDrape(steps=5, hidden=(8,), latent_dim=2, output_mode="vertex", output_scale=0.05)
    assert clone(est).get_params() == est.get_params()
    est.fit(grooms, body)
    assert len(est.losses_) == 5
    items = [(0, None, None), (0, np.zeros(2), np.full(12, 0.05))]
    x = est.predict(items)
    assert x.shape == (2, 3, 8, 3)
    est.save(str(tmp_path / "m"))
    back = NeuralDrape.load(str(tmp_path / "m"), grooms, body)
    assert back.hidden == (8,) and back.latent_dim == 2
    assert np.array_equal(back.predict(items), x)
