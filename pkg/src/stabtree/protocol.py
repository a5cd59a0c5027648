"""Node state machine: variables, kinship sets, predicates, guarded rules.

Every function here is a pure function of the node's own state and a
`NeighborView` (port -> neighbor state).  Neighbor identities, distances
and any other global data are invisible by construction.

State variables per node:
  rank  k in {0, 1, 2, BOT}   -- distance to root mod 3 once stabilized
  token t in {false, true, wait}
  bit   b in {0, 1, TOP}      -- digit of the distributed binary counter

The root is a constant (0, true, 1) and runs no rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

# Rank values. BOT marks a reset node.
RANK_BOT = 3
RANKS = (0, 1, 2, RANK_BOT)

# Token values.
TOK_FALSE, TOK_TRUE, TOK_WAIT = 0, 1, 2
TOKENS = (TOK_FALSE, TOK_TRUE, TOK_WAIT)

# Bit values. TOP marks a node in the error state.
BIT_TOP = 2
BITS = (0, 1, BIT_TOP)

_TOKEN_CHARS = {TOK_FALSE: "F", TOK_TRUE: "T", TOK_WAIT: "W"}
_TOKEN_FROM_CHAR = {c: v for v, c in _TOKEN_CHARS.items()}
_RANK_CHARS = {0: "0", 1: "1", 2: "2", RANK_BOT: "-"}
_RANK_FROM_CHAR = {c: v for v, c in _RANK_CHARS.items()}
_BIT_CHARS = {0: "0", 1: "1", BIT_TOP: "^"}
_BIT_FROM_CHAR = {c: v for v, c in _BIT_CHARS.items()}


class NodeState(NamedTuple):
    rank: int
    token: int
    bit: int

    def encode(self) -> str:
        """Text form used in traces, e.g. ``1:F:1`` (``-`` = reset rank, ``^`` = error bit)."""
        return f"{_RANK_CHARS[self.rank]}:{_TOKEN_CHARS[self.token]}:{_BIT_CHARS[self.bit]}"

    @staticmethod
    def decode(text: str) -> "NodeState":
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad node state {text!r}")
        try:
            return NodeState(_RANK_FROM_CHAR[parts[0]],
                             _TOKEN_FROM_CHAR[parts[1]],
                             _BIT_FROM_CHAR[parts[2]])
        except KeyError as exc:
            raise ValueError(f"bad node state {text!r}") from exc


ROOT_STATE = NodeState(0, TOK_TRUE, 1)
RESET_STATE = NodeState(RANK_BOT, TOK_FALSE, 0)

ALL_STATES: tuple[NodeState, ...] = tuple(
    NodeState(k, t, b) for k in RANKS for t in TOKENS for b in BITS
)
STATE_INDEX: dict[NodeState, int] = {s: i for i, s in enumerate(ALL_STATES)}
STATE_COUNT = len(ALL_STATES)  # 36


def state_id(s: NodeState) -> int:
    return STATE_INDEX[s]


def state_from_id(i: int) -> NodeState:
    return ALL_STATES[i]


# A neighbor view is a tuple of (port, NodeState), sorted by port.
NeighborView = tuple[tuple[int, NodeState], ...]


class Rule(Enum):
    """The seven guarded rules, in guard evaluation (priority) order."""

    ERR = "er"          # local error detected -> mark bit TOP
    RESET = "reset"     # bit is TOP -> wipe to the reset state
    ERR_RANK = "erRank" # token offered by a non-parent set -> mark bit TOP
    JOIN = "join"       # reset node adopts a rank from a coherent offer
    TOK = "tok"         # acquire the token from all parents
    ADD = "add"         # release the token, flip the counter bit
    READY = "ready"     # wait -> false, ready for the next token

    @staticmethod
    def from_wire(text: str) -> "Rule | None":
        if text == "-":
            return None
        for r in Rule:
            if r.value == text:
                return r
        raise ValueError(f"unknown rule {text!r}")


RULE_ORDER = (Rule.ERR, Rule.RESET, Rule.ERR_RANK, Rule.JOIN,
              Rule.TOK, Rule.ADD, Rule.READY)


@dataclass(frozen=True)
class Variant:
    """Switchable interpretation points, for comparison runs and mutants.

    err_propagate_mode:
      "prose"   -- a ranked node with a TOP neighbor catches the error
                   (default; matches the propagation behavior the rest of
                   the design relies on)
      "printed" -- the error predicate fires only at a node already in the
                   TOP state that has a ranked neighbor (kept for study;
                   kills error propagation)
    reset_guard:
      "widened" -- bit TOP alone triggers the wipe rule (default; without
                   it a corrupted (BOT, *, TOP) node has no applicable rule)
      "printed" -- wipe requires a valid rank as well
    disabled_rules: rules whose guards are forced false (mutation testing).
    """

    err_propagate_mode: str = "prose"
    reset_guard: str = "widened"
    disabled_rules: frozenset = frozenset()


DEFAULT_VARIANT = Variant()


@dataclass(frozen=True)
class PredicateVector:
    """Truth values of all guard-level predicates at one node."""

    reset: bool
    tok: frozenset[int]               # ports offering a token (t=true, b=1)
    take_all_parents: bool            # offer set == parent set (TakeP)
    take_outsider: bool               # offer set nonempty but != parents (TakeO)
    take_rank: bool                   # coherent offer to a reset node (TakeR)
    offer_rank: int | None            # common rank of the offer set, if coherent
    err_propagate: bool               # ranked node with a TOP neighbor
    err_reset_vars: bool              # reset rank but non-reset t/b
    err_token_parent: bool            # child holds a token, node did not just send
    err_parents: bool                 # parents disagree, or ranked with no parent
    err_children: bool                # children disagree
    err_siblings: bool                # a sibling differs from the node itself
    err_reset_neighbor: bool          # ranked, has children, no token, reset neighbor
    err_neighborhood: bool            # the gated disjunction of the four above
    false_root: bool                  # ranked but parentless
    err_path: bool                    # reset node sees same-rank neighbors disagree
    error: bool                       # the full error disjunction


def kin_sets(self_state: NodeState, view: NeighborView
             ) -> tuple[frozenset[int], frozenset[int], frozenset[int]]:
    """Ports of parents, children and siblings, by rank arithmetic mod 3.

    A reset node has no kin; neighbors with a reset rank belong to no set.
    """
    k = self_state.rank
    if k == RANK_BOT:
        return frozenset(), frozenset(), frozenset()
    parents, children, siblings = set(), set(), set()
    for port, st in view:
        if st.rank == RANK_BOT:
            continue
        if st.rank == (k - 1) % 3:
            parents.add(port)
        elif st.rank == (k + 1) % 3:
            children.add(port)
        elif st.rank == k:
            siblings.add(port)
    return frozenset(parents), frozenset(children), frozenset(siblings)


def parent_port(self_state: NodeState, view: NeighborView) -> int | None:
    """Minimum parent port; tree extraction / coloring only, never communicated."""
    parents, _, _ = kin_sets(self_state, view)
    return min(parents) if parents else None


def tok_set(view: NeighborView) -> frozenset[int]:
    """Ports of neighbors currently offering a token (t = true and b = 1)."""
    return frozenset(port for port, st in view
                     if st.token == TOK_TRUE and st.bit == 1)


def _states_of(view: NeighborView, ports) -> list[NodeState]:
    by_port = dict(view)
    return [by_port[p] for p in ports]


def eval_predicates(self_state: NodeState, view: NeighborView,
                    variant: Variant = DEFAULT_VARIANT) -> PredicateVector:
    k, t, b = self_state
    parents, children, siblings = kin_sets(self_state, view)
    offers = tok_set(view)

    reset = (k == RANK_BOT and t == TOK_FALSE and b == 0)

    take_p = bool(offers) and offers == parents
    take_o = bool(offers) and offers != parents

    # TakeR: offers nonempty, all offering neighbors share one valid rank,
    # and no non-offering neighbor carries that rank.  Offers from reset
    # nodes cannot define a rank to adopt, so a coherent offer must come
    # from ranked nodes.
    offer_rank: int | None = None
    take_r = False
    if offers:
        offer_ranks = {st.rank for st in _states_of(view, offers)}
        if len(offer_ranks) == 1:
            (rk,) = offer_ranks
            if rk != RANK_BOT:
                others = [st for port, st in view if port not in offers]
                if all(st.rank != rk for st in others):
                    offer_rank = rk
                    take_r = True

    if variant.err_propagate_mode == "printed":
        err_prg = b == BIT_TOP and any(st.rank != RANK_BOT for _, st in view)
    else:
        err_prg = k != RANK_BOT and any(st.bit == BIT_TOP for _, st in view)

    err_var = (not err_prg and b != BIT_TOP
               and k == RANK_BOT and (t != TOK_FALSE or b != 0))

    child_states = _states_of(view, children)
    err_tp = (not err_prg and b != BIT_TOP and bool(children)
              and any(st.token == TOK_TRUE for st in child_states)
              and not (t == TOK_WAIT and b == 0))

    parent_states = _states_of(view, parents)
    err_p = (_pair_disagrees(parent_states)
             or (k != RANK_BOT and not parents))
    err_c = _pair_disagrees(child_states)
    err_s = any(st.bit != b or st.token != t
                for st in _states_of(view, siblings))
    err_rt = (k != RANK_BOT and bool(children) and t != TOK_TRUE
              and any(st.rank == RANK_BOT for _, st in view))
    err_n = (not err_prg and b != BIT_TOP and not take_o
             and (err_p or err_c or err_s or err_rt))

    false_r = k != RANK_BOT and not parents

    # Path-consistency check at a reset node: an existing pair of ranked
    # neighbors sharing a rank but disagreeing on t or b is the witness
    # (printed form quantifies with "forall", but detection needs a single
    # violating pair; reset/reset mismatches are already covered at those
    # neighbors by their own variable check).
    err_pi = False
    if reset:
        ranked = [st for _, st in view if st.rank != RANK_BOT]
        for i in range(len(ranked)):
            for j in range(i + 1, len(ranked)):
                a, c = ranked[i], ranked[j]
                if a.rank == c.rank and (a.bit != c.bit or a.token != c.token):
                    err_pi = True
                    break
            if err_pi:
                break

    error = err_var or err_tp or err_n or false_r or err_prg or err_pi

    return PredicateVector(
        reset=reset, tok=offers,
        take_all_parents=take_p, take_outsider=take_o, take_rank=take_r,
        offer_rank=offer_rank,
        err_propagate=err_prg, err_reset_vars=err_var, err_token_parent=err_tp,
        err_parents=err_p, err_children=err_c, err_siblings=err_s,
        err_reset_neighbor=err_rt, err_neighborhood=err_n,
        false_root=false_r, err_path=err_pi, error=error,
    )


def _pair_disagrees(states: list[NodeState]) -> bool:
    return any(a.bit != b.bit or a.token != b.token
               for i, a in enumerate(states) for b in states[i + 1:])


def enabled_rules(self_state: NodeState, view: NeighborView,
                  variant: Variant = DEFAULT_VARIANT) -> tuple[Rule, ...]:
    """All rules whose guards hold, in priority order. Root must not call this."""
    k, t, b = self_state
    p = eval_predicates(self_state, view, variant)
    out = []
    if b != BIT_TOP and p.error:
        out.append(Rule.ERR)
    if variant.reset_guard == "printed":
        if k != RANK_BOT and b == BIT_TOP:
            out.append(Rule.RESET)
    else:
        if b == BIT_TOP:
            out.append(Rule.RESET)
    if (not p.error and k != RANK_BOT and b != BIT_TOP
            and t == TOK_FALSE and p.take_outsider):
        out.append(Rule.ERR_RANK)
    if not p.error and k == RANK_BOT and p.take_rank:
        out.append(Rule.JOIN)
    if not p.error and k != RANK_BOT and t == TOK_FALSE and p.take_all_parents:
        out.append(Rule.TOK)
    if not p.error and t == TOK_TRUE:
        out.append(Rule.ADD)
    if not p.error and t == TOK_WAIT:
        out.append(Rule.READY)
    if variant.disabled_rules:
        out = [r for r in out if r not in variant.disabled_rules]
    return tuple(out)


def select_rule(self_state: NodeState, view: NeighborView,
                variant: Variant = DEFAULT_VARIANT
                ) -> tuple[Rule | None, tuple[Rule, ...]]:
    """First enabled guard in listing order, plus the full enabled set."""
    enabled = enabled_rules(self_state, view, variant)
    return (enabled[0] if enabled else None), enabled


def apply_rule(self_state: NodeState, view: NeighborView, rule: Rule,
               variant: Variant = DEFAULT_VARIANT) -> NodeState:
    """Successor state under `rule`; only the variables named by the rule move."""
    k, t, b = self_state
    if rule is Rule.ERR:
        return NodeState(k, TOK_WAIT, BIT_TOP)
    if rule is Rule.RESET:
        return RESET_STATE
    if rule is Rule.ERR_RANK:
        return NodeState(k, TOK_WAIT, BIT_TOP)
    if rule is Rule.JOIN:
        p = eval_predicates(self_state, view, variant)
        assert p.offer_rank is not None, "JOIN applied without a coherent offer"
        return NodeState((p.offer_rank + 1) % 3, t, 1)
    if rule is Rule.TOK:
        return NodeState(k, TOK_TRUE, b)
    if rule is Rule.ADD:
        assert b != BIT_TOP, "counter increment on an error bit"
        return NodeState(k, TOK_WAIT, (b + 1) % 2)
    if rule is Rule.READY:
        return NodeState(k, TOK_FALSE, b)
    raise ValueError(f"unknown rule {rule}")


def step_node(self_state: NodeState, view: NeighborView,
              variant: Variant = DEFAULT_VARIANT
              ) -> tuple[NodeState, Rule | None, int]:
    """One synchronous move of a non-root node.

    Returns (successor, fired rule or None, number of enabled guards).
    """
    rule, enabled = select_rule(self_state, view, variant)
    if rule is None:
        return self_state, None, 0
    return apply_rule(self_state, view, rule, variant), rule, len(enabled)


# -- bipartite 2-coloring overlay ----------------------------------------

BLACK, WHITE = 0, 1


def color_update(self_state: NodeState, view: NeighborView,
                 fired: Rule | None, own_color: int,
                 neighbor_colors: dict[int, int]) -> int:
    """Overlay color move: opposite of the min-port parent, on any rule firing.

    `neighbor_colors` maps ports to colors.  The root never calls this
    (its color is pinned BLACK).
    """
    if fired is None:
        return own_color
    port = parent_port(self_state, view)
    if port is None:
        return own_color
    return neighbor_colors[port] ^ 1
