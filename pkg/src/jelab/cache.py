"""Write-once, content-addressed store for kernel rules."""
from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from .kernel import KernelRule

log = logging.getLogger(__name__)

ENV_VAR = "JELAB_CACHE_DIR"


def default_dir():
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "jelab"


class RuleCache:
    """Kernel rules and truncation lengths keyed by a content hash.

    Entries are written to a temporary file and hard-linked into place, so
    when two writers race exactly one link succeeds and readers never see a
    partial file.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_dir()
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def path(self, key):
        return self.root / key[:2] / f"{key}.npz"

    def get(self, key):
        p = self.path(key)
        if not p.exists():
            self.misses += 1
            return None
        try:
            with np.load(p) as d:
                rule = KernelRule.from_arrays(d)
                L = float(d["L"])
        except Exception as exc:  # corrupt or truncated entry
            log.warning("corrupt cache entry %s (%s); recomputing", p.name, exc)
            self.misses += 1
            return None
        self.hits += 1
        return rule, L

    def put(self, key, rule: KernelRule, L, replace=False):
        """Store an entry; returns True if this call's data is the one on disk."""
        p = self.path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=p.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, L=np.array(float(L)), **rule.arrays())
            if replace:
                os.replace(tmp, p)
                return True
            try:
                os.link(tmp, p)
                return True
            except FileExistsError:
                return False
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def get_or_build(self, key, build):
        hit = self.get(key)
        if hit is not None:
            return hit
        corrupt = self.path(key).exists()
        rule, L = build()
        self.put(key, rule, L, replace=corrupt)
        return rule, L
