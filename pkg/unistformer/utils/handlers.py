from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

PathLike = Union[str, os.PathLike]


class FileHelper:
    """Whole-file atomic writes and JSON helpers shared by every artifact writer."""

    @staticmethod
    def write_atomic(path: PathLike, data: bytes) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp_fd, tmp_path = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        tmp = Path(tmp_path)
        try:
            with os.fdopen(tmp_fd, "wb") as handle:
                handle.write(data)
                handle.flush()
                os.fsync(handle.fileno())
            tmp.replace(path)
        except Exception:
            tmp.unlink(missing_ok=True)
            raise
        return path

    @staticmethod
    def write_text(path: PathLike, text: str) -> Path:
        return FileHelper.write_atomic(path, text.encode("utf-8"))

    @staticmethod
    def append_text(path: PathLike, text: str) -> None:
        with open(path, "a", encoding="utf-8", newline="") as handle:
            handle.write(text)

    @staticmethod
    def write_json(path: PathLike, obj: Any) -> Path:
        payload = json.dumps(obj, ensure_ascii=False, indent=2).encode("utf-8")
        return FileHelper.write_atomic(path, payload)
