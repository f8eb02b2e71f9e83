"""Generic digraph algorithms: SEMI-NCA dominator trees and Tarjan SCC.

Nodes are arbitrary hashable values; graphs are adjacency dicts.
"""
from __future__ import annotations


def semi_nca_idom(succs: dict, root) -> dict:
    """Immediate dominators via the SEMI-NCA algorithm.

    Returns {node: idom} for every node reachable from root (root maps to
    itself). Unreachable nodes are absent.
    """
    # DFS numbering (iterative, preorder)
    num: dict = {}
    vertex: list = []
    parent: list[int] = []
    stack = [(root, -1)]
    while stack:
        node, par = stack.pop()
        if node in num:
            continue
        num[node] = len(vertex)
        vertex.append(node)
        parent.append(par)
        for s in reversed(succs.get(node, ())):
            if s not in num:
                stack.append((s, num[node]))

    n = len(vertex)
    preds: list[list[int]] = [[] for _ in range(n)]
    for u, outs in succs.items():
        if u not in num:
            continue
        for v in outs:
            if v in num:
                preds[num[v]].append(num[u])

    semi = list(range(n))
    label = list(range(n))
    ancestor = [-1] * n

    def compress(v: int) -> None:
        # iterative path compression
        path = []
        while ancestor[ancestor[v]] != -1:
            path.append(v)
            v = ancestor[v]
        for u in reversed(path):
            if semi[label[ancestor[u]]] < semi[label[u]]:
                label[u] = label[ancestor[u]]
            ancestor[u] = ancestor[ancestor[u]]

    def eval_(v: int) -> int:
        if ancestor[v] == -1:
            return label[v]
        compress(v)
        return label[v]

    idom = parent[:]
    for w in range(n - 1, 0, -1):
        s = semi[w]
        for v in preds[w]:
            if v <= w:
                cand = v
            else:
                cand = semi[eval_(v)]
            if cand < s:
                s = cand
        semi[w] = s
        label[w] = s
        ancestor[w] = parent[w]

    # NCA pass: idom(w) = nca(parent(w), semi(w)) computed incrementally
    for w in range(1, n):
        anc = idom[w]
        while anc > semi[w]:
            anc = idom[anc]
        idom[w] = anc

    out = {root: root}
    for w in range(1, n):
        out[vertex[w]] = vertex[idom[w]]
    return out


def reverse(succs: dict, nodes=None) -> dict:
    rev: dict = {n: [] for n in (nodes if nodes is not None else succs)}
    for u, outs in succs.items():
        rev.setdefault(u, [])
        for v in outs:
            rev.setdefault(v, []).append(u)
    return rev


def tarjan_scc(succs: dict, nodes=None) -> list[list]:
    """Strongly connected components in reverse topological order (iterative)."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    out: list[list] = []
    counter = [0]
    all_nodes = list(nodes) if nodes is not None else list(succs)

    for start in all_nodes:
        if start in index:
            continue
        work = [(start, iter(succs.get(start, ())))]
        index[start] = low[start] = counter[0]
        counter[0] += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            node, it = work[-1]
            advanced = False
            for s in it:
                if s not in index:
                    index[s] = low[s] = counter[0]
                    counter[0] += 1
                    stack.append(s)
                    on_stack.add(s)
                    work.append((s, iter(succs.get(s, ()))))
                    advanced = True
                    break
                elif s in on_stack:
                    if index[s] < low[node]:
                        low[node] = index[s]
            if advanced:
                continue
            work.pop()
            if work:
                pnode = work[-1][0]
                if low[node] < low[pnode]:
                    low[pnode] = low[node]
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                out.append(comp)
    return out


def reachable(succs: dict, start) -> set:
    seen = {start}
    work = [start]
    while work:
        n = work.pop()
        for s in succs.get(n, ()):
            if s not in seen:
                seen.add(s)
                work.append(s)
    return seen
