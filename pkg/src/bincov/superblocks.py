"""Dominator trees, the superblock dominator graph, and probe-set policies.

The dominator graph (DG) is the edge union of the pre- and post-dominator
trees; its SCCs are superblocks (sets of blocks with identical coverage).
Probing policies pick SB-DG leaves (leaf-node) or leaves plus critical
superblocks (any-node). Coverage reconstruction walks SB-DG ancestors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .cfg.build import EN, EX, ControlFlowGraph
from .errors import UnknownSuperblockId
from .graphs import reachable, reverse, semi_nca_idom, tarjan_scc

log = logging.getLogger(__name__)

POLICY_LEAF = "leaf-node"
POLICY_ANY = "any-node"


@dataclass
class DominatorTree:
    direction: str              # "pre" | "post"
    parent: dict                # node -> immediate dominator
    root: object

    def dominates(self, a, b) -> bool:
        """a dominates b in this tree (reflexive)."""
        n = b
        seen = set()
        while n not in seen:
            if n == a:
                return True
            seen.add(n)
            p = self.parent.get(n)
            if p is None or p == n:
                return False
            n = p
        return False


def dominator_tree(cfg: ControlFlowGraph, direction: str) -> DominatorTree:
    """SEMI-NCA immediate dominators; post direction runs on the reverse CFG."""
    if direction == "pre":
        idom = semi_nca_idom(cfg.succs, EN)
        return DominatorTree("pre", idom, EN)
    if direction == "post":
        rev = reverse(cfg.succs, nodes=cfg.succs.keys())
        idom = semi_nca_idom(rev, EX)
        return DominatorTree("post", idom, EX)
    raise ValueError(direction)


@dataclass
class SuperblockDominatorGraph:
    superblocks: list[frozenset]          # node sets, virtual nodes included
    sb_of: dict                           # node -> superblock index
    succs: dict[int, set[int]] = field(default_factory=dict)
    preds: dict[int, set[int]] = field(default_factory=dict)
    leaf: dict[int, bool] = field(default_factory=dict)
    critical: dict[int, bool] = field(default_factory=dict)

    def blocks_of(self, sb: int) -> set:
        """Real block addresses of a superblock (virtual nodes filtered)."""
        return {n for n in self.superblocks[sb] if isinstance(n, int)}

    def probe_eligible(self) -> list[int]:
        return [i for i in range(len(self.superblocks)) if self.blocks_of(i)]

    def ancestors(self, sb: int) -> set[int]:
        out: set[int] = set()
        work = [sb]
        while work:
            n = work.pop()
            for p in self.preds.get(n, ()):
                if p not in out:
                    out.add(p)
                    work.append(p)
        return out


def superblock_graph(cfg: ControlFlowGraph, t_pre: DominatorTree,
                     t_post: DominatorTree) -> SuperblockDominatorGraph:
    """DG = T_pre union T_post (edges dominator -> dominated); SB-DG is its
    SCC condensation with deduplicated edges."""
    dg: dict = {n: [] for n in cfg.nodes}
    for tree in (t_pre, t_post):
        for node, par in tree.parent.items():
            if par == node:
                continue
            dg.setdefault(par, []).append(node)
            dg.setdefault(node, [])

    comps = tarjan_scc(dg, nodes=list(dg))
    comps = [frozenset(c) for c in comps]
    # deterministic order: by minimum real block address, virtual-only last
    def sb_key(c: frozenset):
        real = [n for n in c if isinstance(n, int)]
        return (0, min(real)) if real else (1, 0)
    comps.sort(key=sb_key)

    sbdg = SuperblockDominatorGraph(superblocks=comps, sb_of={})
    for i, c in enumerate(comps):
        for n in c:
            sbdg.sb_of[n] = i
        sbdg.succs[i] = set()
        sbdg.preds[i] = set()
    for u, outs in dg.items():
        su = sbdg.sb_of[u]
        for v in outs:
            sv = sbdg.sb_of[v]
            if su != sv:
                sbdg.succs[su].add(sv)
                sbdg.preds[sv].add(su)
    for i in range(len(comps)):
        sbdg.leaf[i] = not sbdg.succs[i]
        sbdg.critical[i] = False
    for i in sbdg.probe_eligible():
        sbdg.critical[i] = is_critical(i, sbdg, cfg)
    return sbdg


def is_critical(sb: int, sbdg: SuperblockDominatorGraph,
                cfg: ControlFlowGraph) -> bool:
    """True iff some EN->EX path visits this superblock while avoiding every
    block of all its SB-DG children (node-deletion reachability)."""
    children = sbdg.succs.get(sb, ())
    avoid: set = set()
    for c in children:
        avoid |= sbdg.blocks_of(c)
    mine = sbdg.blocks_of(sb)
    if not mine:
        return False

    allowed = {n for n in cfg.succs if n not in avoid}
    fwd_succs = {n: [s for s in cfg.succs.get(n, ()) if s in allowed]
                 for n in allowed}
    if EN not in allowed or EX not in allowed:
        return False
    fwd = reachable(fwd_succs, EN)
    rev_adj = reverse(fwd_succs, nodes=allowed)
    bwd = reachable(rev_adj, EX)
    return any(b in fwd and b in bwd for b in mine)


@dataclass
class ProbeSet:
    policy: str
    superblocks: set[int]


def probe_set(sbdg: SuperblockDominatorGraph, policy: str) -> ProbeSet:
    leaves = {i for i in sbdg.probe_eligible() if sbdg.leaf[i]}
    if policy == POLICY_LEAF:
        return ProbeSet(POLICY_LEAF, leaves)
    if policy == POLICY_ANY:
        crit = {i for i in sbdg.probe_eligible() if sbdg.critical[i]}
        return ProbeSet(POLICY_ANY, leaves | crit)
    raise ValueError(f"unknown policy {policy!r}")


def reconstruct_coverage(sbdg: SuperblockDominatorGraph, hit: set[int]) -> set[int]:
    """Covered block addresses implied by the hit superblocks: the hit sets
    plus every SB-DG ancestor."""
    covered: set[int] = set()
    n = len(sbdg.superblocks)
    for sb in hit:
        if not (0 <= sb < n):
            raise UnknownSuperblockId(f"superblock {sb} out of range")
        covered |= sbdg.blocks_of(sb)
        for anc in sbdg.ancestors(sb):
            covered |= sbdg.blocks_of(anc)
    return covered
