"""Pure-Python pattern-matching kernel.

Mirrors the compiled kernel in _speedup.pyx exactly: both enumerate, in
lexicographic candidate order, every assignment of pattern variables to
graph node indices that satisfies the precomputed edge checks.
"""

from __future__ import annotations

BACKEND_NAME = "pure"


def find_matches(candidates, checks, edge_keys, n_rel, n_nodes):
    """Enumerate satisfying assignments.

    candidates: per-variable sorted lists of node indices.
    checks: per-variable list of (earlier_var, rel, direction) edge checks,
        direction 1 meaning earlier -> current, 0 meaning current -> earlier.
        A check with earlier_var == the variable's own index is a self-loop.
    edge_keys: set of encoded (src * n_rel + rel) * n_nodes + dst keys.
    """
    k = len(candidates)
    if k == 0 or any(not c for c in candidates):
        return []
    results = []
    assignment = [0] * k

    def extend(level):
        for node in candidates[level]:
            ok = True
            for earlier, rel, direction in checks[level]:
                other = node if earlier == level else assignment[earlier]
                if direction:
                    key = (other * n_rel + rel) * n_nodes + node
                else:
                    key = (node * n_rel + rel) * n_nodes + other
                if key not in edge_keys:
                    ok = False
                    break
            if not ok:
                continue
            assignment[level] = node
            if level + 1 == k:
                results.append(tuple(assignment))
            else:
                extend(level + 1)
        return None

    extend(0)
    return results
