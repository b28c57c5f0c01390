"""Loop-form kernel bodies shared by both backends.

`maxflow` is written in numba-compatible style: numba_impl compiles it with
@njit, numpy_impl runs it as-is (slow but exact on the small band graphs the
compositor builds in fallback mode).
"""

import numpy as np


def fnv1a64_py(data):
    h = 0xCBF29CE484222325
    for b in data:
        h ^= int(b)
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(h)


def maxflow(n_nodes, head, edge_next, edge_to, edge_cap, source, sink):
    """Dinic max-flow on a residual-edge-list graph (edge i^1 is the reverse).

    Returns (flow value, side) where side[v] = 1 if v is reachable from the
    source in the final residual graph (the min-cut source side).
    """
    cap = edge_cap.copy()
    level = np.empty(n_nodes, dtype=np.int64)
    cur = np.empty(n_nodes, dtype=np.int64)
    queue = np.empty(n_nodes, dtype=np.int64)
    stack_v = np.empty(n_nodes + 1, dtype=np.int64)
    stack_e = np.empty(n_nodes + 1, dtype=np.int64)
    flow = 0.0
    while True:
        for i in range(n_nodes):
            level[i] = -1
        level[source] = 0
        qh, qt = 0, 0
        queue[qt] = source
        qt += 1
        while qh < qt:
            v = queue[qh]
            qh += 1
            e = head[v]
            while e != -1:
                if cap[e] > 1e-12 and level[edge_to[e]] == -1:
                    level[edge_to[e]] = level[v] + 1
                    queue[qt] = edge_to[e]
                    qt += 1
                e = edge_next[e]
        if level[sink] == -1:
            break
        for i in range(n_nodes):
            cur[i] = head[i]
        while True:
            # iterative DFS for one augmenting path in the level graph
            top = 0
            stack_v[0] = source
            found = False
            while top >= 0:
                v = stack_v[top]
                if v == sink:
                    found = True
                    break
                e = cur[v]
                advanced = False
                while e != -1:
                    cur[v] = e
                    to = edge_to[e]
                    if cap[e] > 1e-12 and level[to] == level[v] + 1:
                        stack_e[top] = e
                        top += 1
                        stack_v[top] = to
                        advanced = True
                        break
                    e = edge_next[e]
                if not advanced:
                    cur[v] = -1
                    level[v] = -1  # dead end, prune
                    top -= 1
            if not found:
                break
            bottleneck = np.inf
            for k in range(top):
                if cap[stack_e[k]] < bottleneck:
                    bottleneck = cap[stack_e[k]]
            for k in range(top):
                e = stack_e[k]
                cap[e] -= bottleneck
                cap[e ^ 1] += bottleneck
            flow += bottleneck
    side = np.zeros(n_nodes, dtype=np.uint8)
    side[source] = 1
    qh, qt = 0, 0
    queue[qt] = source
    qt += 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        e = head[v]
        while e != -1:
            to = edge_to[e]
            if cap[e] > 1e-12 and side[to] == 0:
                side[to] = 1
                queue[qt] = to
                qt += 1
            e = edge_next[e]
    return flow, side
