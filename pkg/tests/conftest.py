import pytest

from cavitytwin import PhysicalParams
from cavitytwin.tables import build_tables


@pytest.fixture(scope="session")
def p_d10_m2():
    return PhysicalParams.reference_preset(delta_ap=10.0, m_empty=2.0)


@pytest.fixture(scope="session")
def tables_d10_m2(p_d10_m2):
    # shared production-fidelity tables (n_fock 25) with the build-time
    # truncation and interpolation guards active; ~10 s once per session
    return build_tables(p_d10_m2, n_grid=101)


@pytest.fixture(scope="session")
def p_d10_m15():
    return PhysicalParams.reference_preset(delta_ap=10.0, m_empty=1.5)


@pytest.fixture(scope="session")
def tables_d10_m15(p_d10_m15):
    return build_tables(p_d10_m15, n_grid=65)
