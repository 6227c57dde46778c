"""The twelve acceptance criteria at their stated tolerances.

Criteria 6-12 share two runs of the default pipeline (several minutes).
"""
import pytest

from hcdefect import acceptance as acc

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return acc.PipelineRuns(tmp_path_factory.mktemp("acceptance"))


def _report(result, capsys):
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()


@pytest.mark.parametrize("crit", acc.CELL_CRITERIA, ids=lambda f: f.__name__)
def test_cell_criterion(crit, capsys):
    _report(acc._guard(crit), capsys)


@pytest.mark.parametrize("crit", acc.RUN_CRITERIA, ids=lambda f: f.__name__)
def test_pipeline_criterion(crit, runs, capsys):
    _report(acc._guard(crit, runs), capsys)
