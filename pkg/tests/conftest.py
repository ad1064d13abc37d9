import pytest

from nncondense.data import generate_synthetic, load_variable_specs, preprocess


@pytest.fixture(scope="session")
def small_cohort():
    specs = load_variable_specs()
    cohort = generate_synthetic(400, seed=11, specs=specs)
    return preprocess(cohort.episodes, specs, seed=0)
