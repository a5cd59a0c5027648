"""Lock-step synchronous scheduler and trace plumbing.

One step = every enabled non-root node fires its first enabled rule,
all statements applied against a snapshot of the current configuration.
The root never moves.  Runs are deterministic; node evaluation order is
irrelevant by construction (verified in tests by permuting it).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .protocol import (
    ALL_STATES, BLACK, DEFAULT_VARIANT, NodeState, ROOT_STATE, RESET_STATE,
    Rule, STATE_COUNT, Variant, color_update, state_from_id, state_id,
    step_node,
)
from .topology import DistanceOracle, Network, bfs_oracle


@dataclass(frozen=True)
class Configuration:
    """Global state at one instant: core states plus the optional color overlay."""

    states: tuple[NodeState, ...]
    colors: tuple[int, ...] | None = None
    step_index: int = 0

    def key(self):
        """Identity for cycle detection (the step index is bookkeeping only)."""
        return (self.states, self.colors)

    def ranks(self) -> tuple[int, ...]:
        return tuple(s.rank for s in self.states)


@dataclass(frozen=True)
class StepRecord:
    """What happened in one transition."""

    fired: tuple[Rule | None, ...]
    multi_enabled_count: int
    color_flips: int = 0


@dataclass
class Trace:
    net: Network
    configurations: list[Configuration] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    readings: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.configurations)


@dataclass(frozen=True)
class InitSpec:
    """How to build the initial configuration.

    kind: one of "legal", "all-reset", "explicit", "random", "enumerated".
    """

    kind: str
    states: tuple[NodeState, ...] | None = None   # explicit
    seed: int | None = None                       # random
    index: int | None = None                      # enumerated
    token: int = 0                                # legal phase (t value)
    bit: int = 0                                  # legal phase (b value)

    def describe(self) -> str:
        if self.kind == "explicit":
            return "explicit:" + ",".join(s.encode() for s in self.states)
        if self.kind == "random":
            return f"random:{self.seed}"
        if self.kind == "enumerated":
            return f"enumerated:{self.index}"
        return self.kind


def enumerated_space(net: Network) -> int:
    """Number of enumerable initial configurations: 36^(n-1)."""
    return STATE_COUNT ** (net.node_count - 1)


def initial_configuration(net: Network, spec: InitSpec,
                          oracle: DistanceOracle | None = None,
                          colors: tuple[int, ...] | None = None) -> Configuration:
    n, root = net.node_count, net.root
    non_root = [v for v in range(n) if v != root]
    if spec.kind == "all-reset":
        states = [RESET_STATE] * n
    elif spec.kind == "legal":
        oracle = oracle or bfs_oracle(net)
        states = [NodeState(oracle.dist[v] % 3, spec.token, spec.bit)
                  for v in range(n)]
    elif spec.kind == "explicit":
        if spec.states is None or len(spec.states) != n:
            raise ValueError(f"explicit init needs exactly {n} states")
        if spec.states[root] != ROOT_STATE:
            raise ValueError("explicit init may not override the root state")
        states = list(spec.states)
    elif spec.kind == "random":
        if spec.seed is None:
            raise ValueError("random init needs a seed")
        rng = random.Random(spec.seed)
        states = [None] * n
        for v in non_root:
            states[v] = ALL_STATES[rng.randrange(STATE_COUNT)]
    elif spec.kind == "enumerated":
        if spec.index is None:
            raise ValueError("enumerated init needs an index")
        if not 0 <= spec.index < enumerated_space(net):
            raise ValueError(f"enumerated index {spec.index} out of range")
        states = [None] * n
        x = spec.index
        for v in non_root:
            states[v] = ALL_STATES[x % STATE_COUNT]
            x //= STATE_COUNT
    else:
        raise ValueError(f"unknown init kind {spec.kind!r}")
    states[root] = ROOT_STATE
    if colors is not None:
        colors = tuple(colors[:root] + (BLACK,) + colors[root + 1:])
    return Configuration(states=tuple(states), colors=colors, step_index=0)


def config_to_index(net: Network, cfg: Configuration) -> int:
    """Inverse of the enumerated init: mixed-radix encode of non-root states."""
    x = 0
    for v in reversed([v for v in range(net.node_count) if v != net.root]):
        x = x * STATE_COUNT + state_id(cfg.states[v])
    return x


class Stepper:
    """Transition engine for one network, with a per-neighborhood memo.

    Rule outcomes depend only on the node's own state and the multiset of
    neighbor states, so memoizing on the sorted neighbor tuple is sound
    (ports matter only for the color overlay, handled separately).
    """

    def __init__(self, net: Network, variant: Variant = DEFAULT_VARIANT):
        self.net = net
        self.variant = variant
        self._memo: dict = {}

    def node_move(self, v: int, states: tuple[NodeState, ...]
                  ) -> tuple[NodeState, Rule | None, int]:
        nbrs = self.net.adjacency[v]
        key = (state_id(states[v]),
               tuple(sorted(state_id(states[u]) for _, u in nbrs)))
        hit = self._memo.get(key)
        if hit is None:
            view = tuple((p, states[u]) for p, u in nbrs)
            hit = step_node(states[v], view, self.variant)
            self._memo[key] = hit
        return hit

    def step(self, cfg: Configuration) -> tuple[Configuration, StepRecord]:
        net = self.net
        states = cfg.states
        assert states[net.root] == ROOT_STATE, "root state drifted"
        new_states = list(states)
        fired: list[Rule | None] = [None] * net.node_count
        multi = 0
        for v in range(net.node_count):
            if v == net.root:
                continue
            succ, rule, enabled = self.node_move(v, states)
            new_states[v] = succ
            fired[v] = rule
            if enabled > 1:
                multi += 1
        new_colors = cfg.colors
        flips = 0
        if cfg.colors is not None:
            colors = list(cfg.colors)
            for v in range(net.node_count):
                if v == net.root:
                    colors[v] = BLACK
                    continue
                view = tuple((p, states[u]) for p, u in net.adjacency[v])
                nbr_colors = {p: cfg.colors[u] for p, u in net.adjacency[v]}
                colors[v] = color_update(states[v], view, fired[v],
                                         cfg.colors[v], nbr_colors)
                if colors[v] != cfg.colors[v]:
                    flips += 1
            new_colors = tuple(colors)
        nxt = Configuration(states=tuple(new_states), colors=new_colors,
                            step_index=cfg.step_index + 1)
        return nxt, StepRecord(fired=tuple(fired), multi_enabled_count=multi,
                               color_flips=flips)


def step(net: Network, cfg: Configuration,
         variant: Variant = DEFAULT_VARIANT) -> tuple[Configuration, StepRecord]:
    """One-shot transition (no shared memo); prefer `Stepper` for long runs."""
    return Stepper(net, variant).step(cfg)


def run(net: Network, cfg: Configuration, budget: int,
        monitor=None, stop=None, variant: Variant = DEFAULT_VARIANT,
        stepper: Stepper | None = None) -> Trace:
    """Iterate up to `budget` steps, pulling monitor readings per configuration.

    monitor: callable(trace, config) -> dict, invoked on every configuration
    as it is appended (including the initial one).
    stop: callable(trace) -> bool, checked after each configuration; a true
    result ends the run early.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    stepper = stepper or Stepper(net, variant)
    trace = Trace(net=net)

    def attach(c: Configuration):
        trace.configurations.append(c)
        if monitor is not None:
            trace.readings.append(monitor(trace, c))

    attach(cfg)
    for _ in range(budget):
        if stop is not None and stop(trace):
            break
        nxt, rec = stepper.step(trace.configurations[-1])
        trace.records.append(rec)
        attach(nxt)
    return trace


def detect_cycle(trace: Trace) -> tuple[int, int] | None:
    """First recurrence of an identical configuration: (first index, period)."""
    seen: dict = {}
    for i, cfg in enumerate(trace.configurations):
        k = cfg.key()
        if k in seen:
            return seen[k], i - seen[k]
        seen[k] = i
    return None


# -- trace wire format -----------------------------------------------------

TRACE_MAGIC = "stabtree-trace"
TRACE_VERSION = 1


class TraceFormatError(ValueError):
    pass


def _encode_state(s: NodeState, color: int | None) -> str:
    if color is None:
        return s.encode()
    return s.encode() + (":B" if color == BLACK else ":W")


def dump_trace(trace: Trace, variant: Variant = DEFAULT_VARIANT) -> str:
    """Line-delimited text: versioned header, then one record per configuration.

    The `fired` field on line i describes the transition out of
    configuration i; the final configuration carries no `fired` field.
    """
    out = [f"{TRACE_MAGIC} {TRACE_VERSION}",
           "graph " + json.dumps(trace.net.to_document(), separators=(",", ":")),
           "variant " + json.dumps({
               "err_propagate_mode": variant.err_propagate_mode,
               "reset_guard": variant.reset_guard,
               "disabled_rules": sorted(r.value for r in variant.disabled_rules),
           }, separators=(",", ":"))]
    overlay = trace.configurations and trace.configurations[0].colors is not None
    out.append(f"overlay {1 if overlay else 0}")
    for i, cfg in enumerate(trace.configurations):
        cols = cfg.colors if overlay else [None] * trace.net.node_count
        parts = [f"step={i}",
                 "states=" + ",".join(_encode_state(s, c)
                                      for s, c in zip(cfg.states, cols))]
        if i < len(trace.records):
            rec = trace.records[i]
            parts.append("fired=" + ",".join(
                "-" if r is None else r.value for r in rec.fired))
            parts.append(f"multi={rec.multi_enabled_count}")
        if i < len(trace.readings) and trace.readings[i]:
            for k in sorted(trace.readings[i]):
                v = trace.readings[i][k]
                parts.append(f"{k}={_fmt_reading(v)}")
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def _fmt_reading(v) -> str:
    if v is None:
        return "na"
    if v is True:
        return "1"
    if v is False:
        return "0"
    if v == float("inf"):
        return "inf"
    return str(v)


def parse_trace(text: str):
    """Parse the wire format back into (net, variant, trace, per-line readings)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TraceFormatError("empty trace file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != TRACE_MAGIC:
        raise TraceFormatError("missing trace header")
    if int(head[1]) != TRACE_VERSION:
        raise TraceFormatError(f"unsupported trace version {head[1]}")
    meta = {"graph": None, "variant": None, "overlay": 0}
    body_start = 1
    for ln in lines[1:]:
        key = ln.split(" ", 1)[0]
        if key in meta:
            meta[key] = ln.split(" ", 1)[1]
            body_start += 1
        else:
            break
    if meta["graph"] is None:
        raise TraceFormatError("trace missing graph header")
    from .topology import load_network
    net = load_network(meta["graph"])
    vdoc = json.loads(meta["variant"]) if meta["variant"] else {}
    variant = Variant(
        err_propagate_mode=vdoc.get("err_propagate_mode", "prose"),
        reset_guard=vdoc.get("reset_guard", "widened"),
        disabled_rules=frozenset(Rule.from_wire(r)
                                 for r in vdoc.get("disabled_rules", [])),
    )
    overlay = bool(int(meta["overlay"] or 0))
    trace = Trace(net=net)
    readings: list[dict] = []
    for expect, ln in enumerate(lines[body_start:]):
        fields = dict(part.split("=", 1) for part in ln.split())
        if int(fields.get("step", -1)) != expect:
            raise TraceFormatError(f"unexpected step index on line {ln!r}")
        encoded = fields["states"].split(",")
        if len(encoded) != net.node_count:
            raise TraceFormatError("wrong number of node states")
        states, colors = [], []
        for tok in encoded:
            parts = tok.split(":")
            if overlay:
                if len(parts) != 4:
                    raise TraceFormatError(f"bad overlay state {tok!r}")
                states.append(NodeState.decode(":".join(parts[:3])))
                colors.append(BLACK if parts[3] == "B" else 1)
            else:
                states.append(NodeState.decode(tok))
        cfg = Configuration(states=tuple(states),
                            colors=tuple(colors) if overlay else None,
                            step_index=expect)
        if cfg.states[net.root] != ROOT_STATE:
            raise TraceFormatError("root state not pinned in trace")
        trace.configurations.append(cfg)
        if "fired" in fields:
            fired = tuple(Rule.from_wire(t) for t in fields["fired"].split(","))
            trace.records.append(StepRecord(
                fired=fired, multi_enabled_count=int(fields.get("multi", 0))))
        readings.append({k: v for k, v in fields.items()
                         if k not in ("step", "states", "fired", "multi")})
    if len(trace.records) not in (0, len(trace.configurations) - 1):
        raise TraceFormatError("fired records do not line up with configurations")
    return net, variant, trace, readings
