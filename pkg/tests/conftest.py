import pytest

from helpers import bundled_data, trained


@pytest.fixture(scope="session")
def farm_a():
    return bundled_data("A")


@pytest.fixture(scope="session")
def farm_b():
    return bundled_data("B")


@pytest.fixture(scope="session")
def detectors(tmp_path_factory):
    """Trained 1-encoder detectors for both farms saved to disk with their sidecars."""
    from csfguard.modelio import save_model

    root = tmp_path_factory.mktemp("detectors")
    models, sidecars = {}, {}
    for farm in "AB":
        model, _, _ = trained(farm)
        models[farm] = root / f"{farm}.csfm"
        save_model(model, models[farm])
        sidecars[farm] = bundled_data(farm).save(root / f"fm{farm}")
    return models, sidecars
