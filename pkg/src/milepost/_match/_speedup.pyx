# cython: language_level=3
"""Compiled pattern-matching kernel; semantics identical to pure.py."""

from libc.stdlib cimport free, malloc

BACKEND_NAME = "cython"


cdef bint _has_key(long[::1] keys, long key) noexcept nogil:
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = keys.shape[0]
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) // 2
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo < keys.shape[0] and keys[lo] == key


def find_matches(candidates, checks, edge_keys, long n_rel, long n_nodes):
    """See milepost._match.pure.find_matches; edge_keys must be a sorted array."""
    import array

    cdef Py_ssize_t k = len(candidates)
    if k == 0:
        return []
    for cand in candidates:
        if not cand:
            return []

    sorted_keys = array.array("l", sorted(edge_keys))
    cdef long[::1] keys = sorted_keys

    cand_arrays = [array.array("l", c) for c in candidates]
    cdef long **cand_ptr = <long **> malloc(k * sizeof(long *))
    cdef Py_ssize_t *cand_len = <Py_ssize_t *> malloc(k * sizeof(Py_ssize_t))
    # flattened checks: (earlier, rel, direction) triples per level
    flat_checks = [array.array("l", [v for c in checks[i] for v in c]) for i in range(k)]
    cdef long **check_ptr = <long **> malloc(k * sizeof(long *))
    cdef Py_ssize_t *check_len = <Py_ssize_t *> malloc(k * sizeof(Py_ssize_t))
    cdef long *assignment = <long *> malloc(k * sizeof(long))
    cdef Py_ssize_t *cursor = <Py_ssize_t *> malloc(k * sizeof(Py_ssize_t))

    cdef long[::1] view
    mem_guards = []  # keep memoryviews alive
    cdef Py_ssize_t i
    for i in range(k):
        view = cand_arrays[i]
        mem_guards.append(view)
        cand_ptr[i] = &view[0] if view.shape[0] else NULL
        cand_len[i] = view.shape[0]
        if len(flat_checks[i]):
            view = flat_checks[i]
            mem_guards.append(view)
            check_ptr[i] = &view[0]
        else:
            check_ptr[i] = NULL
        check_len[i] = len(checks[i])

    results = []
    cdef Py_ssize_t level = 0
    cdef Py_ssize_t j
    cdef long node, other, rel, key
    cdef bint ok
    cursor[0] = 0
    try:
        while level >= 0:
            if cursor[level] >= cand_len[level]:
                level -= 1
                if level >= 0:
                    cursor[level] += 1
                continue
            node = cand_ptr[level][cursor[level]]
            ok = True
            for j in range(check_len[level]):
                other = check_ptr[level][3 * j]
                rel = check_ptr[level][3 * j + 1]
                if other == level:
                    other = node
                else:
                    other = assignment[other]
                if check_ptr[level][3 * j + 2]:
                    key = (other * n_rel + rel) * n_nodes + node
                else:
                    key = (node * n_rel + rel) * n_nodes + other
                if not _has_key(keys, key):
                    ok = False
                    break
            if not ok:
                cursor[level] += 1
                continue
            assignment[level] = node
            if level + 1 == k:
                results.append(tuple([assignment[i] for i in range(k)]))
                cursor[level] += 1
            else:
                level += 1
                cursor[level] = 0
    finally:
        free(cand_ptr)
        free(cand_len)
        free(check_ptr)
        free(check_len)
        free(assignment)
        free(cursor)
    return results
