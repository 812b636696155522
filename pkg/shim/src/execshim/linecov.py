"""Built-in line-coverage collector: a settrace hook scoped to the SUT roots.

An alternative collector can be supplied as a Python file exposing
``collect(run, roots) -> set[(abs_file, line)]`` via --coverage-tool-path.
"""

from __future__ import annotations

import importlib.util
import os
import sys
from typing import Callable, Iterable


class LineCollector:
    def __init__(self, roots: Iterable[str]):
        self.roots = tuple(os.path.abspath(r) + os.sep for r in roots)
        self.lines: set[tuple[str, int]] = set()

    def _interesting(self, filename: str) -> bool:
        return filename.startswith(self.roots)

    def dispatch(self, frame, event, arg):
        if event == "call" and self._interesting(frame.f_code.co_filename):
            return self._local
        return None

    def _local(self, frame, event, arg):
        if event == "line":
            self.lines.add((frame.f_code.co_filename, frame.f_lineno))
        return self._local


def collect(run: Callable[[], None], roots: Iterable[str]) -> set[tuple[str, int]]:
    collector = LineCollector(roots)
    sys.settrace(collector.dispatch)
    try:
        run()
    finally:
        sys.settrace(None)
    return collector.lines


def load_collector(path: str | None) -> Callable:
    """The collect() callable: built-in by default, else loaded from `path`."""
    if path is None:
        return collect
    spec = importlib.util.spec_from_file_location("execshim_custom_collector", path)
    if spec is None or spec.loader is None:
        raise RuntimeError(f"cannot load coverage collector from {path}")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    if not hasattr(module, "collect"):
        raise RuntimeError(f"coverage collector {path} defines no collect()")
    return module.collect


def line_ids(lines: set[tuple[str, int]], roots: Iterable[str]) -> list[str]:
    """Render (abs_file, line) pairs as 'relative-path:line' identifiers,
    relative to the parent of the root that contains the file."""
    bases = [os.path.abspath(r) for r in roots]
    ids = []
    for filename, lineno in lines:
        absolute = os.path.abspath(filename)
        for base in bases:
            if absolute.startswith(base + os.sep) or absolute == base:
                rel = os.path.relpath(absolute, os.path.dirname(base))
                ids.append(f"{rel.replace(os.sep, '/')}:{lineno}")
                break
    return sorted(ids)
