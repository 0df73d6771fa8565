"""Run-directory outputs: digested CSV, JSON and NDJSON files plus a manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

DIGEST_LEN = 16
MANIFEST = "manifest.json"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def digest(obj) -> str:
    """Short SHA-256 of the canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:DIGEST_LEN]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence], config_digest: str) -> str:
    """CSV with a leading ``# config_digest=...`` line and a named header row.

    Floats are written with ``repr`` so the text is a bit-exact image of the data.
    """
    buf = io.StringIO()
    buf.write(f"# config_digest={config_digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_csv_digest(path: str) -> str:
    with open(path) as f:
        first = f.readline().strip()
    if not first.startswith("# config_digest="):
        raise ConfigError("CSV lacks a config_digest line", path)
    return first.split("=", 1)[1]


def read_csv(path: str):
    """(digest, header, rows as lists of strings)."""
    with open(path) as f:
        first = f.readline().strip()
        rows = list(csv.reader(f))
    if not first.startswith("# config_digest="):
        raise ConfigError("CSV lacks a config_digest line", path)
    return first.split("=", 1)[1], rows[0], rows[1:]


class RunDir:
    """Writes artifacts into one directory and keeps the manifest current."""

    def __init__(self, path: str, config_digest: str):
        self.path = path
        self.config_digest = config_digest
        os.makedirs(path, exist_ok=True)
        self.files: list = []
        mpath = os.path.join(path, MANIFEST)
        if os.path.exists(mpath):
            with open(mpath) as f:
                man = json.load(f)
            if man.get("config_digest") == config_digest:
                self.files = list(man.get("files", []))

    def _record(self, name, kind):
        entry = {"name": name, "kind": kind, "config_digest": self.config_digest}
        self.files = [e for e in self.files if e["name"] != name] + [entry]
        self.files.sort(key=lambda e: e["name"])
        with open(os.path.join(self.path, MANIFEST), "w") as f:
            json.dump({"config_digest": self.config_digest, "files": self.files}, f, indent=2, sort_keys=True)
            f.write("\n")
        return os.path.join(self.path, name)

    def write_csv(self, name: str, header, rows) -> str:
        with open(os.path.join(self.path, name), "w") as f:
            f.write(csv_text(header, rows, self.config_digest))
        return self._record(name, "csv")

    def write_json(self, name: str, obj: dict) -> str:
        d = dict(obj)
        d["config_digest"] = self.config_digest
        with open(os.path.join(self.path, name), "w") as f:
            json.dump(d, f, indent=2, sort_keys=True, default=_default)
            f.write("\n")
        return self._record(name, "json")

    def write_ndjson(self, name: str, records: Iterable[dict]) -> str:
        with open(os.path.join(self.path, name), "w") as f:
            for r in records:
                d = dict(r)
                d["config_digest"] = self.config_digest
                f.write(json.dumps(d, sort_keys=True, default=_default) + "\n")
        return self._record(name, "ndjson")


def file_digest(path: str) -> str:
    """The config digest embedded in any artifact written by ``RunDir``."""
    if path.endswith(".csv"):
        return read_csv_digest(path)
    with open(path) as f:
        if path.endswith(".ndjson"):
            digests = {json.loads(line).get("config_digest") for line in f if line.strip()}
            if len(digests) != 1:
                raise ConfigError("NDJSON records carry differing digests", path)
            return digests.pop()
        return json.load(f).get("config_digest")
