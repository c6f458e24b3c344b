"""Run manifests, line-based configuration files and the table cache."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import DomainError
from .renewal import build_gap_law, law_cache_name, law_to_csv, load_law_csv

__all__ = [
    "sha256_file",
    "sha256_text",
    "read_config_file",
    "write_manifest",
    "read_manifest",
    "kernel_table_csv",
    "TableCache",
]

INDEX = "checksums.json"


def sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment.

    A file whose content is a JSON object (such as a run manifest) is
    read through its ``params`` entry instead.
    """
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return dict(data.get("params", data))
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_manifest(out_dir, subcommand, params, outputs, version):
    """Write ``manifest.json`` echoing every resolved parameter and output checksum."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "tool": "pinchaos",
        "version": version,
        "subcommand": subcommand,
        "params": params,
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def kernel_table_csv(kernel, n_max):
    """``n,gamma`` table of a kernel at 17 significant digits."""
    n = np.arange(n_max + 1)
    g = kernel(n)
    return "n,gamma\n" + "".join(f"{i},{v:.17g}\n" for i, v in zip(n, g))


def _kernel_cache_name(kernel, n_max):
    return f"kernel_{kernel.label()}_H{kernel.H!r}_n{int(n_max)}.csv"


class TableCache:
    """Directory of law and kernel tables indexed by SHA-256 checksums."""

    def __init__(self, root):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._index_path = os.path.join(root, INDEX)
        self.index = {}
        if os.path.exists(self._index_path):
            with open(self._index_path) as fh:
                self.index = json.load(fh)

    def _save_index(self):
        with open(self._index_path, "w") as fh:
            json.dump(self.index, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _store(self, name, text, spec):
        with open(os.path.join(self.root, name), "w", newline="") as fh:
            fh.write(text)
        self.index[name] = {"sha256": sha256_text(text), **spec}
        self._save_index()

    def law(self, alpha, sv, n_max):
        name = law_cache_name(alpha, sv, n_max)
        path = os.path.join(self.root, name)
        if name in self.index and os.path.exists(path):
            return load_law_csv(path, alpha, sv)
        law = build_gap_law(alpha, sv, n_max=n_max)
        self._store(name, law_to_csv(law), {"type": "law", "alpha": float(alpha),
                                            "sv": sv.label(), "n_max": int(n_max)})
        return law

    def kernel_table(self, kernel, n_max):
        name = _kernel_cache_name(kernel, n_max)
        if name not in self.index:
            self._store(name, kernel_table_csv(kernel, n_max),
                        {"type": "kernel", "kind": kernel.kind.value, "H": kernel.H,
                         "n_max": int(n_max)})
        return os.path.join(self.root, name)

    def validate(self):
        """Compare every cached file with a fresh regeneration.

        Returns ``{name: ok}``; a file passes when both its stored checksum
        and the checksum of the regenerated table agree with the file.
        """
        from .environment import kernel_gamma
        from .renewal import SlowlyVaryingSpec

        out = {}
        for name, spec in sorted(self.index.items()):
            path = os.path.join(self.root, name)
            if not os.path.exists(path):
                out[name] = False
                continue
            on_disk = sha256_file(path)
            if spec["type"] == "law":
                sv = SlowlyVaryingSpec.parse(spec["sv"])
                fresh = law_to_csv(build_gap_law(spec["alpha"], sv, n_max=spec["n_max"]))
            else:
                fresh = kernel_table_csv(kernel_gamma(spec["kind"], spec["H"]), spec["n_max"])
            out[name] = on_disk == spec["sha256"] == sha256_text(fresh)
        return out
