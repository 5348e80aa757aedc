import pytest
from pyfakefs.fake_filesystem_unittest import Patcher


@pytest.fixture
def fs(request):
    # Python 3.10 pathlib: Path objects built at import time (e.g. RUN_DIR)
    # bypass pyfakefs unless the test module is re-imported under the patcher.
    with Patcher(modules_to_reload=[request.module]) as patcher:
        yield patcher.fs
