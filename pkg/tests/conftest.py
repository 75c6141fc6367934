import json
import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"
GOLDEN_JS = FIXTURES / "golden"

EXAMPLE_DIFF = """--- /path/to/original.js    timestamp
+++ /path/to/new.js    timestamp
@@ -4,1 +4,2 @@
+  var tmp = bar(i);
+  return tmp;
-  return bar(i);
"""

EXAMPLE_JS = (GOLDEN_JS / "foo.js").read_text(encoding="utf-8")


@pytest.fixture
def corpus(tmp_path):
    """A private copy of the offline corpus (the pipeline writes next to its config)."""
    dest = tmp_path / "corpus"
    shutil.copytree(CORPUS, dest, ignore=shutil.ignore_patterns("work", "golden"))
    return dest


@pytest.fixture(scope="session")
def shas():
    return json.loads((CORPUS / "shas.json").read_text())
