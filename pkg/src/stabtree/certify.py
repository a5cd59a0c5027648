"""Runtime monitors: legality, configuration classes, potential functions.

Everything here reads a configuration (or a trace) with full global
knowledge; nothing feeds back into the protocol.  The class ladder

    error-free  >  tokens-cleared  >  clean  >  legal

is tracked through four readings:

  Phi            count of "obvious error" nodes; 0 defines error-free
  Psi            remaining propagation mass of tokens that descend from
                 tokens present when the trace entered the error-free
                 class; 0 within n steps, absence defines tokens-cleared
  varrho_tenths  residual-error potential (fixed-point tenths, so the
                 fractional phase credits stay exact); 0 defines clean
  Xi_tenths      join potential of the remaining reset nodes; 0 together
                 with clean is equivalent to legal

The fractional phase credits in the token-latency countdown are 0.3/0.6,
hence the tenths scaling: all monotonicity checks are integer compares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .engine import Configuration, Trace
from .protocol import (
    BIT_TOP, DEFAULT_VARIANT, NodeState, RANK_BOT, TOK_FALSE, TOK_TRUE,
    TOK_WAIT, Variant, eval_predicates,
)
from .topology import DistanceOracle, Network, RComponents, bfs_oracle, \
    r_components, shortest_paths

INF = math.inf


class CertContext:
    """Per-network caches shared by the monitors."""

    def __init__(self, net: Network):
        self.net = net
        self.oracle: DistanceOracle = bfs_oracle(net)
        self.rcomp: RComponents = r_components(net)
        self._paths: dict[int, list[tuple[int, ...]]] = {}

    def paths(self, v: int) -> list[tuple[int, ...]]:
        if v not in self._paths:
            self._paths[v] = shortest_paths(self.net, self.oracle, v)
        return self._paths[v]

    def path_nodes(self, v: int) -> frozenset[int]:
        return frozenset(u for p in self.paths(v) for u in p)


def node_view(net: Network, cfg: Configuration, v: int):
    return tuple((p, cfg.states[u]) for p, u in net.adjacency[v])


# -- legality ---------------------------------------------------------------

def legal_d(oracle: DistanceOracle, cfg: Configuration) -> tuple[bool, ...]:
    """Rank equals hop distance mod 3 (vacuously true at the root)."""
    return tuple(s.rank == oracle.dist[v] % 3
                 for v, s in enumerate(cfg.states))


def _words(cfg: Configuration, path: tuple[int, ...]):
    b_word = tuple(cfg.states[u].bit for u in path)
    t_word = tuple(1 if cfg.states[u].token == TOK_TRUE else 0 for u in path)
    return b_word, t_word


def legal_pi(ctx: CertContext, cfg: Configuration) -> tuple[bool, ...]:
    """All shortest root-to-v paths agree on their bit- and token-words.

    A TOP bit anywhere on a relevant path makes the words non-binary and
    scores the node not-legal outright.
    """
    out = []
    for v in range(ctx.net.node_count):
        if v == ctx.net.root:
            out.append(True)
            continue
        if any(cfg.states[u].bit == BIT_TOP for u in ctx.path_nodes(v)):
            out.append(False)
            continue
        paths = ctx.paths(v)
        first = _words(cfg, paths[0])
        out.append(all(_words(cfg, p) == first for p in paths[1:]))
    return tuple(out)


def legal_vector(ctx: CertContext, cfg: Configuration) -> tuple[bool, ...]:
    ld = legal_d(ctx.oracle, cfg)
    lp = legal_pi(ctx, cfg)
    return tuple(True if v == ctx.net.root else (ld[v] and lp[v])
                 for v in range(ctx.net.node_count))


def is_legal(ctx: CertContext, cfg: Configuration) -> bool:
    return all(legal_vector(ctx, cfg))


def is_stable_legal(ctx: CertContext, cfg: Configuration,
                    variant: Variant = DEFAULT_VARIANT) -> bool:
    """Legal, and no node has anything but a token-circulation move.

    The printed legality predicate constrains ranks and path words but not
    token placement, so e.g. a chain with a spurious token is "legal" for
    one step and then collapses.  Rank freeze and closure hold from the
    moment the configuration is legal AND only the take/release/ready
    rules are enabled, which is the stabilized regime proper.
    """
    from .protocol import Rule, select_rule
    if not is_legal(ctx, cfg):
        return False
    net = ctx.net
    allowed = (Rule.TOK, Rule.ADD, Rule.READY, None)
    for v in range(net.node_count):
        if v == net.root:
            continue
        rule, _ = select_rule(cfg.states[v], node_view(net, cfg, v), variant)
        if rule not in allowed:
            return False
    return True


# -- obvious errors (Phi) ---------------------------------------------------

def phi_node(net: Network, cfg: Configuration, v: int,
             variant: Variant = DEFAULT_VARIANT, effective: bool = True) -> int:
    """Obvious-error indicator for one node.

    `effective=False` is the literal predicate trio.  The effective form
    masks one systematic artifact: the root's constant token makes it an
    eternal "child holding a token" for any misranked neighbor two ranks
    below, so the literal child-token check flags such nodes one step
    after every send window even though the configuration entered the
    error-free class.  The node-level rule still fires on the real
    predicate (that is how those misranks get corrected); only the class
    boundary ignores the root's contribution.
    """
    if v == net.root:
        return 0
    pv = eval_predicates(cfg.states[v], node_view(net, cfg, v), variant)
    err_tp = pv.err_token_parent
    if effective and err_tp:
        k, t, b = cfg.states[v]
        non_root_children = [
            cfg.states[u] for _, u in net.adjacency[v]
            if u != net.root and cfg.states[u].rank != RANK_BOT
            and cfg.states[u].rank == (k + 1) % 3
        ]
        err_tp = (bool(non_root_children)
                  and any(s.token == TOK_TRUE for s in non_root_children)
                  and not (t == TOK_WAIT and b == 0))
    return int(pv.err_reset_vars or err_tp or pv.err_neighborhood)


def obvious_error_potential(net: Network, cfg: Configuration,
                            variant: Variant = DEFAULT_VARIANT,
                            effective: bool = True) -> int:
    return sum(phi_node(net, cfg, v, variant, effective)
               for v in range(net.node_count))


# -- token sets and spanning structures --------------------------------------

def token_sets(cfg: Configuration):
    """(T, T0, T1): all holders, holders with bit 0, holders with bit 1."""
    t_all = frozenset(v for v, s in enumerate(cfg.states) if s.token == TOK_TRUE)
    t0 = frozenset(v for v in t_all if cfg.states[v].bit == 0)
    t1 = frozenset(v for v in t_all if cfg.states[v].bit == 1)
    return t_all, t0, t1


def _is_member(s: NodeState) -> bool:
    return s.token != TOK_TRUE and s.bit == 1


def _child_nodes(net: Network, cfg: Configuration, v: int) -> list[int]:
    k = cfg.states[v].rank
    if k == RANK_BOT:
        return []
    return [u for _, u in net.adjacency[v]
            if cfg.states[u].rank == (k + 1) % 3]


def ss1(net: Network, cfg: Configuration, v: int) -> frozenset[int]:
    """Spanning structure of the token at v: the non-root descendants,
    through child links, that are token-free with bit 1 all the way down."""
    members: set[int] = set()
    frontier = [u for u in _child_nodes(net, cfg, v)
                if u != net.root and _is_member(cfg.states[u])]
    while frontier:
        nxt = []
        for u in frontier:
            if u in members:
                continue
            members.add(u)
            for w in _child_nodes(net, cfg, u):
                if w != net.root and w not in members and _is_member(cfg.states[w]):
                    nxt.append(w)
        frontier = nxt
    return frozenset(members)


def ss1_structures(net: Network, cfg: Configuration) -> dict[int, frozenset[int]]:
    """SS structures for every bit-1 token holder (root included)."""
    _, _, t1 = token_sets(cfg)
    return {v: ss1(net, cfg, v) for v in t1}


def initial_token_potential(net: Network, cfg: Configuration,
                            tagged: frozenset[int] | None = None) -> int:
    """Psi: total structure size over the tagged bit-1 holders.

    `tagged` marks which current holders carry descendants of tokens that
    existed at the anchor configuration; by default every non-root holder
    of this configuration is treated as an anchor token (the isolated-call
    convention: the configuration is its own anchor).
    """
    _, _, t1 = token_sets(cfg)
    if tagged is None:
        tagged = frozenset(v for v in t1 if v != net.root)
    return sum(len(ss1(net, cfg, v))
               for v in t1 if v != net.root and v in tagged)


def advance_tags(net: Network, prev: Configuration, cur: Configuration,
                 tags: frozenset[int]) -> frozenset[int]:
    """Propagate initial-token tags across one step.

    A tag lives on a token holder.  It moves to every node that acquires
    a token from at least one tagged offering neighbor; it dies with the
    token (release, error, or reset).
    """
    new: set[int] = set()
    for v in range(net.node_count):
        if v == net.root or cur.states[v].token != TOK_TRUE:
            continue
        if prev.states[v].token == TOK_TRUE:
            if v in tags:
                new.add(v)  # held across the step (possible only in mutants)
            continue
        for _, u in net.adjacency[v]:
            s = prev.states[u]
            if (u in tags and s.token == TOK_TRUE and s.bit == 1):
                new.add(v)
                break
    return frozenset(new)


# -- token latency arithmetic -------------------------------------------------

def latency_R(d: int) -> int:
    """Steps between token receipts at hop distance d from an empty counter."""
    if d < 1:
        raise ValueError("latency is defined for distance >= 1")
    return (2 ** (d - 1) - 1) * 3 + d - 1


@dataclass(frozen=True)
class PathWords:
    """Counter words along the shortest paths to one node."""

    node: int
    distance: int
    paths: tuple[tuple[int, ...], ...]
    b_words: tuple[tuple[int, ...], ...]
    t_words: tuple[tuple[int, ...], ...]
    numeric: tuple[bool, ...]          # False where a TOP bit poisons the word
    b10: tuple[int | None, ...]        # counter value per path
    best_index: int | None             # the path with the nearest token
    best_b10: int | None
    rc: int | None                     # latency_R(d) - best_b10

    @property
    def b2(self) -> str | None:
        """Binary rendering of the best counter value."""
        return format(self.best_b10, "b") if self.best_b10 is not None else None


def path_words(ctx: CertContext, cfg: Configuration, v: int) -> PathWords:
    """Bit/token words and counter values over all shortest paths to v.

    The counter value of a path adds the bit number and the token number,
    weighting positions by distance from the root (the root's own constant
    variables carry no weight).
    """
    if v == ctx.net.root:
        raise ValueError("counter words are defined for non-root nodes")
    paths = tuple(ctx.paths(v))
    b_words, t_words, numeric, b10s = [], [], [], []
    for p in paths:
        b_word, t_word = _words(cfg, p)
        b_words.append(b_word)
        t_words.append(t_word)
        ok = all(b in (0, 1) for b in b_word)
        numeric.append(ok)
        if ok:
            val = sum(b << i for i, b in enumerate(b_word[1:]))
            val += sum(t << i for i, t in enumerate(t_word[1:]))
            b10s.append(val)
        else:
            b10s.append(None)
    best_index = best = None
    for i, val in enumerate(b10s):
        if val is not None and (best is None or val > best):
            best, best_index = val, i
    d = ctx.oracle.dist[v]
    return PathWords(
        node=v, distance=d, paths=paths,
        b_words=tuple(b_words), t_words=tuple(t_words),
        numeric=tuple(numeric), b10=tuple(b10s),
        best_index=best_index, best_b10=best,
        rc=(latency_R(d) - best) if best is not None else None,
    )


# -- cleaner wave -------------------------------------------------------------

@dataclass(frozen=True)
class CleanerWave:
    err_nodes: frozenset[int]        # bit TOP
    rank_err: frozenset[int]         # ranked, rank wrong
    path_err: frozenset[int]         # ranked, path words inconsistent
    cleaners: tuple[frozenset[int], ...]   # reachable error nodes, per node
    distance: tuple[float, ...]      # wave distance per node (inf if none)


def cleaner_wave(ctx: CertContext, cfg: Configuration,
                 variant: Variant = DEFAULT_VARIANT) -> CleanerWave:
    """Error set, illegal-rank/path sets, and per-node wave distances.

    The wave spreads only through ranked, non-error, non-root nodes (reset
    nodes never catch the propagated error), so reachability and distance
    are measured over paths whose interior satisfies exactly that.  Nodes
    about to flag themselves this step count as sources one step further
    out: the wave they spawn is already committed, and pricing it now is
    what keeps the residual potential falling when errors materialize away
    from any existing error node.
    """
    from .protocol import Rule, select_rule
    net = ctx.net
    err = frozenset(v for v, s in enumerate(cfg.states) if s.bit == BIT_TOP)
    pending = frozenset(
        v for v in range(net.node_count)
        if v != net.root and v not in err
        and select_rule(cfg.states[v], node_view(net, cfg, v), variant)[0]
        in (Rule.ERR, Rule.ERR_RANK))
    ld = legal_d(ctx.oracle, cfg)
    lp = legal_pi(ctx, cfg)
    rank_err = frozenset(v for v in range(net.node_count)
                         if v != net.root and cfg.states[v].rank != RANK_BOT
                         and not ld[v])
    path_err = frozenset(v for v in range(net.node_count)
                         if v != net.root and cfg.states[v].rank != RANK_BOT
                         and not lp[v])

    cleaners: list[frozenset[int]] = []
    dist: list[float] = []
    for v in range(net.node_count):
        if v == net.root:
            cleaners.append(frozenset())
            dist.append(INF)
            continue
        found: set[int] = set()
        best = INF
        depth = {v: 0}
        frontier = [v]
        while frontier:
            nxt = []
            for w in frontier:
                for u in net.neighbors(w):
                    if u in depth or u == net.root:
                        continue
                    depth[u] = depth[w] + 1
                    if u in err:
                        found.add(u)
                        best = min(best, depth[u])
                        continue  # error nodes terminate the path
                    if u in pending:
                        found.add(u)
                        best = min(best, depth[u] + 1)
                    if cfg.states[u].rank != RANK_BOT:
                        nxt.append(u)  # valid interior, keep walking
            frontier = nxt
        cleaners.append(frozenset(found))
        dist.append(best)
    return CleanerWave(err_nodes=err, rank_err=rank_err, path_err=path_err,
                       cleaners=tuple(cleaners), distance=tuple(dist))


# -- token-arrival countdown (beta) ------------------------------------------

_PHASE_OFFSET = {TOK_TRUE: 0, TOK_WAIT: 3, TOK_FALSE: 6}


def _phase_offset_tenths(ctx: CertContext, cfg: Configuration, v: int) -> int:
    """Tenths credit from the token phase of v's component's root neighbors."""
    comp = ctx.rcomp.assignment.get(v)
    phases = {cfg.states[u].token
              for u in ctx.net.neighbors(ctx.net.root)
              if ctx.rcomp.assignment.get(u) == comp
              and cfg.states[u].rank != RANK_BOT
              and cfg.states[u].bit != BIT_TOP}
    if len(phases) == 1:
        return _PHASE_OFFSET[phases.pop()]
    return 6 if not phases else 0


def beta_tenths(ctx: CertContext, cfg: Configuration, v: int,
                structures: dict[int, frozenset[int]] | None = None) -> float:
    """Steps (tenths) until a token is next offered to v, plus one unit.

    Three sources, best wins:
    - the root sits next to v: the offer is permanent, the latency is v's
      own token phase;
    - a bit-1 holder whose spanning structure reaches v's neighborhood:
      the token descends one level per step;
    - otherwise the distributed counter: latency_R minus the best counter
      word, refined by the root-neighbor phase (0 / -0.3 / -0.6).
    """
    net = ctx.net
    if structures is None:
        structures = ss1_structures(net, cfg)
    best = INF
    if net.root in net.neighbors(v):
        delay = {TOK_FALSE: 0, TOK_WAIT: 1, TOK_TRUE: 2}[cfg.states[v].token]
        best = 10 * (1 + delay)
    neigh = set(net.neighbors(v))
    for holder, members in structures.items():
        if holder == net.root:
            # The root is a permanent offer, not a traveling token; its
            # stream is the counter countdown below.
            continue
        if holder in neigh:
            best = min(best, 10.0)
            continue
        if members & neigh:
            depth = {holder: 0}
            frontier = [holder]
            while frontier:
                nxt = []
                for w in frontier:
                    for u in _child_nodes(net, cfg, w):
                        if u in members and u not in depth:
                            depth[u] = depth[w] + 1
                            nxt.append(u)
                frontier = nxt
            reach = min((depth[u] for u in members & neigh if u in depth),
                        default=None)
            if reach is not None:
                best = min(best, 10.0 * (reach + 1))
    if best is not INF:
        return best
    words = path_words(ctx, cfg, v)
    if words.rc is None:
        return INF
    return max(0, 10 * words.rc - _phase_offset_tenths(ctx, cfg, v)) + 10


# -- residual and join potentials ---------------------------------------------

def residual_potential(ctx: CertContext, cfg: Configuration,
                       variant: Variant = DEFAULT_VARIANT,
                       wave: CleanerWave | None = None) -> float:
    """varrho in tenths: remaining cleaning work before only legal or reset
    nodes remain.

    Per node, first match wins: an error node counts one unit (it wipes
    next step); a node with an illegal rank or inconsistent paths counts
    the nearer of the cleaner wave and the next token offer, times n; a
    node about to flag itself counts two units; a ranked bystander on a
    wave's path counts the wave distance times n.  Reset nodes are
    invisible to the wave and carry nothing further.
    """
    from .protocol import Rule, select_rule
    net = ctx.net
    wave = wave or cleaner_wave(ctx, cfg, variant)
    structures = ss1_structures(net, cfg)
    n = net.node_count
    total = 0.0
    for v in range(net.node_count):
        if v == net.root:
            continue
        if v in wave.err_nodes:
            total += 10
        elif v in wave.rank_err or v in wave.path_err:
            e = wave.distance[v] * 10
            b = beta_tenths(ctx, cfg, v, structures)
            total += min(e, b) * n
        else:
            rule, _ = select_rule(cfg.states[v], node_view(net, cfg, v), variant)
            if rule in (Rule.ERR, Rule.ERR_RANK):
                total += 20
            elif cfg.states[v].rank != RANK_BOT and wave.cleaners[v]:
                total += wave.distance[v] * 10 * n
    return total


def join_potential(ctx: CertContext, cfg: Configuration) -> float:
    """Xi in tenths: per reset node, its token-offer countdown plus one unit."""
    net = ctx.net
    structures = ss1_structures(net, cfg)
    total = 0.0
    for v in range(net.node_count):
        if v == net.root:
            continue
        s = cfg.states[v]
        if s.rank == RANK_BOT and s.token == TOK_FALSE and s.bit == 0:
            total += beta_tenths(ctx, cfg, v, structures) + 10
    return total


# -- classification -----------------------------------------------------------

@dataclass(frozen=True)
class CertReport:
    """Class flags and potential readings for one configuration."""

    phi: int
    phi_strict: int
    psi: int | None
    varrho_tenths: float | None
    xi_tenths: float | None
    error_free: bool
    tokens_cleared: bool | None
    clean: bool | None
    legal: bool
    stable: bool
    containment_ok: bool

    def readings(self) -> dict:
        """Flat form for trace records."""
        return {
            "Phi": self.phi, "Phi_strict": self.phi_strict, "Psi": self.psi,
            "varrho_tenths": _tenths_repr(self.varrho_tenths),
            "Xi_tenths": _tenths_repr(self.xi_tenths),
            "error_free": self.error_free,
            "tokens_cleared": self.tokens_cleared,
            "clean": self.clean, "legal": self.legal,
            "stable": self.stable,
            "containment_ok": self.containment_ok,
        }


def _tenths_repr(x):
    if x is None:
        return None
    if x == INF:
        return INF
    return int(round(x))


def classify(ctx: CertContext, cfg: Configuration,
             variant: Variant = DEFAULT_VARIANT,
             tagged: frozenset[int] | None = None,
             anchored: bool = True) -> CertReport:
    """Bundle the four readings with the class ladder.

    Finer readings are computed only once their class precondition holds
    (None otherwise).  In isolated calls the configuration is its own
    anchor: every non-root token is treated as initial.  `anchored=False`
    marks a trace position before the error-free class was entered.
    """
    net = ctx.net
    phi = obvious_error_potential(net, cfg, variant, effective=True)
    phi_strict = obvious_error_potential(net, cfg, variant, effective=False)
    legal = is_legal(ctx, cfg)
    stable = legal and is_stable_legal(ctx, cfg, variant)
    error_free = phi == 0

    psi = None
    tokens_cleared: bool | None = None
    if error_free and anchored:
        t_all, _, _ = token_sets(cfg)
        if tagged is None:
            tagged = frozenset(v for v in t_all if v != net.root)
        psi = initial_token_potential(net, cfg, tagged)
        tokens_cleared = not (tagged & t_all)
    varrho = None
    clean: bool | None = None
    if tokens_cleared:
        varrho = residual_potential(ctx, cfg, variant)
        clean = varrho == 0
    xi = None
    if clean:
        xi = join_potential(ctx, cfg)

    containment_ok = (not stable) or bool(clean)
    return CertReport(phi=phi, phi_strict=phi_strict, psi=psi,
                      varrho_tenths=varrho, xi_tenths=xi,
                      error_free=error_free, tokens_cleared=tokens_cleared,
                      clean=clean, legal=legal, stable=stable,
                      containment_ok=containment_ok)


class TraceCertifier:
    """Incremental monitor for engine runs.

    Tracks the anchor (first error-free configuration) and the tag set of
    initial tokens, and emits one `CertReport` row per configuration.
    Usable directly as the `monitor` callback of `engine.run`.
    """

    def __init__(self, net: Network, variant: Variant = DEFAULT_VARIANT,
                 ctx: CertContext | None = None):
        self.ctx = ctx or CertContext(net)
        self.variant = variant
        self.anchor_index: int | None = None
        self.tags: frozenset[int] | None = None
        self._prev: Configuration | None = None
        self.reports: list[CertReport] = []

    def __call__(self, trace: Trace, cfg: Configuration) -> dict:
        net = self.ctx.net
        if self.tags is not None and self._prev is not None:
            self.tags = advance_tags(net, self._prev, cfg, self.tags)
        if self.anchor_index is None:
            phi = obvious_error_potential(net, cfg, self.variant, effective=True)
            if phi == 0:
                self.anchor_index = len(trace.configurations) - 1
                t_all, _, _ = token_sets(cfg)
                self.tags = frozenset(v for v in t_all if v != net.root)
        report = classify(self.ctx, cfg, self.variant,
                          tagged=self.tags if self.tags is not None else frozenset(),
                          anchored=self.anchor_index is not None)
        self.reports.append(report)
        self._prev = cfg
        return report.readings()
