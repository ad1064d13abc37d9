import os
import tempfile
from pathlib import Path

from .errors import CondenseError


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename.

    Readers never observe a partially written file; on failure nothing is
    left at ``path``.
    """
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    except OSError as exc:
        raise CondenseError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        if isinstance(exc, OSError):
            raise CondenseError(f"cannot write {path}: {exc}") from exc
        raise
    return len(data)
