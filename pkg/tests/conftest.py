import pytest

import cli_cases


@pytest.fixture(scope="session")
def cli_workdir(tmp_path_factory):
    return cli_cases.prepare(tmp_path_factory.mktemp("cli"))
