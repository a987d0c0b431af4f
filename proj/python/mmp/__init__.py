"""Python access to the mesh memory core."""

import json

from . import _mmp
from ._mmp import canonical_entry, canonical_frame, classify, cosine, derive_key, embed_text

Error = _mmp.Error
Error.message = property(lambda self: self.args[0])
Error.code = property(lambda self: self.args[1])
Error.detail = property(lambda self: self.args[2])

FIELDS = ("focus", "issue", "intent", "motivation", "commitment", "perspective", "mood")


class Store:
    """One node's memory. `path` persists it; omit for an in-memory store.

    `profile` takes the same object as the config file's "profile" key,
    e.g. {"preset": "compliance"} or {"alpha": {"mood": 4}}.
    """

    def __init__(self, node_id, path=None, profile=None, role="", beta=0.5):
        self._s = _mmp.Store(node_id, str(path or ""), json.dumps(profile) if profile else "", role, beta)

    def observe(self, fields, valence=0.0, arousal=0.0, body=None, now=None):
        text = self._s.observe(fields, valence, arousal, "" if body is None else json.dumps(body), now)
        return json.loads(text)

    def receive(self, frame, now=None):
        return json.loads(self._s.receive(frame, now))

    def recall(self, limit=10, query=None):
        return [json.loads(r) for r in self._s.recall(limit, query or {})]

    def fetch(self, key):
        return json.loads(self._s.fetch(key))

    def frame(self, key, now=None):
        """Wire line carrying the stored CMB, ready for another node's receive()."""
        return self._s.frame(key, now)

    def digest(self):
        return self._s.digest()

    @property
    def node_id(self):
        return self._s.node_id

    def __len__(self):
        return len(self._s)


def run_scenario(scenario):
    """Run a built-in scenario by name, or a scenario dict. Returns the list of trace steps."""
    arg = scenario if isinstance(scenario, str) else json.dumps(scenario)
    return json.loads(_mmp.run_scenario(arg))


__all__ = [
    "Error",
    "FIELDS",
    "Store",
    "canonical_entry",
    "canonical_frame",
    "classify",
    "cosine",
    "derive_key",
    "embed_text",
    "run_scenario",
]
