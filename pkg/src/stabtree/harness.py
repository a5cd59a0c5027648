"""Adversarial sweeps: convergence certificates and per-step lemma monitors.

A sweep drives every (or a seeded sample of) initial configuration to a
certified stable point: a legal configuration followed by an exact global
recurrence while legal.  Along the way, per-step monitors check every
consequence of the correctness argument that is checkable per trace:

  phi_flagged      every obvious-error node fires the error rule at once
  phi_one_step     Phi(gamma_1) = 0 and stays 0 (the literal class claim;
                   see the ledger: false in general, kept as stated)
  psi_bound        Psi = 0 within n steps of entering the error-free class
  psi_monotone     Psi never increases
  holders_legal    in the tokens-cleared phase every holder's rank is legal
  varrho_strict    varrho strictly decreases until 0 within tokens-cleared
  varrho_stays     varrho stays 0 once 0 (clean-class closure, empirical)
  xi_strict        Xi strictly decreases until 0 within the clean class
  xi_zero_legal    Xi = 0 in the clean class implies a legal configuration
  legal_closure    legal stays legal
  rank_freeze      ranks never change after legality
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .certify import (
    CertContext, TraceCertifier, cleaner_wave, is_legal, legal_d,
    obvious_error_potential, phi_node, token_sets,
)
from .engine import (
    Configuration, InitSpec, Stepper, Trace, detect_cycle, enumerated_space,
    initial_configuration, run,
)
from .protocol import (
    BLACK, DEFAULT_VARIANT, NodeState, RANK_BOT, Rule, TOK_TRUE, Variant,
    parent_port,
)
from .topology import Network, build_network

INF = math.inf


# -- the standard suite -------------------------------------------------------

def standard_suite() -> dict[str, Network]:
    """Small rooted graphs exercising chains, cycles through the root,
    cliques, stars, equal-length double paths, and a root articulation
    point (two triangles sharing the root)."""
    return {
        "P2": build_network(2, 0, [(0, 1)]),
        "P3": build_network(3, 0, [(0, 1), (1, 2)]),
        "C3": build_network(3, 0, [(0, 1), (1, 2), (2, 0)]),
        "C4": build_network(4, 0, [(0, 1), (1, 2), (2, 3), (3, 0)]),
        "K4": build_network(4, 0, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),
        "S3": build_network(4, 0, [(0, 1), (0, 2), (0, 3)]),
        "diamond": build_network(4, 0, [(0, 1), (0, 2), (1, 3), (2, 3)]),
        "bowtie": build_network(5, 0, [(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 0)]),
    }


def path_network(depth: int) -> Network:
    """Chain of the given depth, rooted at one end."""
    return build_network(depth + 1, 0, [(i, i + 1) for i in range(depth)])


def step_budget(net: Network, ctx: CertContext | None = None) -> int:
    """Generous convergence cap: 64 * 2^ecc + 8n + 16."""
    ecc = (ctx or CertContext(net)).oracle.eccentricity
    return 64 * 2 ** ecc + 8 * net.node_count + 16


# -- per-trace lemma monitors -------------------------------------------------

@dataclass(frozen=True)
class Violation:
    check: str
    step: int
    detail: str

    def __str__(self):
        return f"[{self.check}] step {self.step}: {self.detail}"


def lemma_monitors(trace: Trace, certifier: TraceCertifier,
                   include_phi_one_step: bool = True) -> list[Violation]:
    """Evaluate every lemma consequence over a finished monitored trace."""
    net = trace.net
    ctx = certifier.ctx
    n = net.node_count
    reports = certifier.reports
    out: list[Violation] = []

    # Instant flagging of obvious errors (sound form of the one-step entry).
    for i, rec in enumerate(trace.records):
        cfg = trace.configurations[i]
        for v in range(n):
            if v == net.root:
                continue
            if phi_node(net, cfg, v, certifier.variant, effective=False) \
                    and rec.fired[v] is not Rule.ERR:
                out.append(Violation("phi_flagged", i,
                                     f"node {v} has an obvious error but fired "
                                     f"{rec.fired[v]}"))

    # Literal class claim: Phi(gamma_1) = 0 and stays 0.
    if include_phi_one_step:
        for i, rep in enumerate(reports):
            if i >= 1 and rep.phi != 0:
                out.append(Violation("phi_one_step", i, f"Phi={rep.phi}"))
                break

    anchor = certifier.anchor_index
    if anchor is None:
        out.append(Violation("phi_flagged", len(trace) - 1,
                             "trace never entered the error-free class"))
        return out

    # Psi: monotone from the anchor, zero within n steps of it.
    prev_psi = None
    for i, rep in enumerate(reports):
        if i < anchor or rep.psi is None:
            continue
        if prev_psi is not None and rep.psi > prev_psi:
            out.append(Violation("psi_monotone", i,
                                 f"Psi {prev_psi} -> {rep.psi}"))
        prev_psi = rep.psi
        if i >= anchor + n and rep.psi != 0:
            out.append(Violation("psi_bound", i,
                                 f"Psi={rep.psi} at anchor+{i - anchor}"))

    # Scope for the finer checks: tokens cleared and currently error-free.
    def in_scope(i: int) -> bool:
        return bool(reports[i].tokens_cleared) and reports[i].error_free

    for i, rep in enumerate(reports):
        if not in_scope(i):
            continue
        cfg = trace.configurations[i]
        ld = legal_d(ctx.oracle, cfg)
        for v in range(n):
            if v != net.root and cfg.states[v].token == TOK_TRUE and not ld[v]:
                out.append(Violation("holders_legal", i,
                                     f"token holder {v} has illegal rank"))

    for i in range(len(reports) - 1):
        if not (in_scope(i) and in_scope(i + 1)):
            continue
        a, b = reports[i].varrho_tenths, reports[i + 1].varrho_tenths
        if a is None or b is None:
            continue
        if a > 0 and not b < a:
            out.append(Violation("varrho_strict", i, f"varrho {a} -> {b}"))
        if a == 0 and b != 0:
            out.append(Violation("varrho_stays", i, f"varrho 0 -> {b}"))
        if a == 0 and b == 0:
            xa, xb = reports[i].xi_tenths, reports[i + 1].xi_tenths
            if xa is not None and xb is not None:
                if xa > 0 and not xb < xa:
                    out.append(Violation("xi_strict", i, f"Xi {xa} -> {xb}"))

    for i, rep in enumerate(reports):
        if in_scope(i) and rep.clean and rep.xi_tenths == 0 and not rep.legal:
            out.append(Violation("xi_zero_legal", i, "Xi=0 but not legal"))

    first_stable = next((i for i, r in enumerate(reports) if r.stable), None)
    if first_stable is not None:
        frozen = trace.configurations[first_stable].ranks()
        for i in range(first_stable, len(reports)):
            if not reports[i].stable:
                out.append(Violation("legal_closure", i, "stable legality lapsed"))
            if trace.configurations[i].ranks() != frozen:
                out.append(Violation("rank_freeze", i, "ranks moved after legality"))
    return out


# -- convergence certification ------------------------------------------------

@dataclass
class RunOutcome:
    converged: bool
    first_legal: int | None
    cycle: tuple[int, int] | None   # (first recurrence index, period)
    steps_used: int
    trace: Trace
    certifier: TraceCertifier
    violations: list[Violation]


def run_until_stable(net: Network, cfg: Configuration, budget: int,
                     variant: Variant = DEFAULT_VARIANT,
                     ctx: CertContext | None = None,
                     stepper: Stepper | None = None,
                     include_phi_one_step: bool = True) -> RunOutcome:
    """Run with monitors until legality recurs exactly, or the budget ends."""
    ctx = ctx or CertContext(net)
    certifier = TraceCertifier(net, variant, ctx=ctx)
    seen: dict = {}
    state = {"first_legal": None, "cycle": None}

    def stop(trace: Trace) -> bool:
        i = len(trace.configurations) - 1
        cfg_i = trace.configurations[i]
        legal = certifier.reports[i].stable
        if legal and state["first_legal"] is None:
            state["first_legal"] = i
        k = cfg_i.key()
        if k in seen:
            if state["first_legal"] is not None and seen[k] >= state["first_legal"]:
                state["cycle"] = (seen[k], i - seen[k])
                return True
        else:
            seen[k] = i
        return False

    trace = run(net, cfg, budget, monitor=certifier, stop=stop,
                variant=variant, stepper=stepper)
    violations = lemma_monitors(trace, certifier, include_phi_one_step)
    converged = state["first_legal"] is not None and state["cycle"] is not None
    return RunOutcome(converged=converged, first_legal=state["first_legal"],
                      cycle=state["cycle"], steps_used=len(trace) - 1,
                      trace=trace, certifier=certifier, violations=violations)


# -- sweeps --------------------------------------------------------------------

EXHAUSTIVE_CAP = 2_000_000


@dataclass(frozen=True)
class SweepPlan:
    net: Network
    mode: str = "exhaustive"          # "exhaustive" | "random"
    count: int = 0                    # random mode: number of seeds
    seed: int = 0
    step_budget: int | None = None
    include_phi_one_step: bool = True
    cap: int = EXHAUSTIVE_CAP


@dataclass
class SweepReport:
    graph_doc: dict
    mode: str
    total: int
    converged: int
    max_steps: int
    mean_steps: float
    budget: int
    eccentricity: int
    constant_ratio: float             # max_steps / 2^ecc
    violations: list[str] = field(default_factory=list)
    worst_index: int | None = None    # enumerated index or seed of the worst run
    worst_init: str | None = None
    failures: list[str] = field(default_factory=list)

    def passed(self) -> bool:
        return self.converged == self.total and not self.violations

    def to_doc(self) -> dict:
        return {
            "graph": self.graph_doc, "mode": self.mode, "total": self.total,
            "converged": self.converged, "max_steps": self.max_steps,
            "mean_steps": round(self.mean_steps, 4), "budget": self.budget,
            "eccentricity": self.eccentricity,
            "constant_ratio": round(self.constant_ratio, 4),
            "violations": self.violations, "worst_index": self.worst_index,
            "worst_init": self.worst_init, "failures": self.failures,
            "passed": self.passed(),
        }


def _specs_for(plan: SweepPlan):
    if plan.mode == "exhaustive":
        space = enumerated_space(plan.net)
        if space > plan.cap:
            raise ValueError(
                f"exhaustive space {space} exceeds cap {plan.cap}")
        return ((i, InitSpec("enumerated", index=i)) for i in range(space)), space
    if plan.mode == "random":
        return (((plan.seed + i), InitSpec("random", seed=plan.seed + i))
                for i in range(plan.count)), plan.count
    raise ValueError(f"unknown sweep mode {plan.mode!r}")


def run_sweep(plan: SweepPlan, variant: Variant = DEFAULT_VARIANT,
              use_batch: bool | None = None) -> SweepReport:
    """Drive every planned initial configuration to a certified stable point.

    Exhaustive sweeps over the default variant use the vectorized backend
    (identical semantics, cross-checked in tests); anything else falls back
    to the per-trace engine.
    """
    if use_batch is None:
        use_batch = (plan.mode == "exhaustive" and variant == DEFAULT_VARIANT
                     and enumerated_space(plan.net) > 60_000)
    if use_batch:
        from .batch import batch_sweep
        return batch_sweep(plan)

    net = plan.net
    ctx = CertContext(net)
    budget = plan.step_budget or step_budget(net, ctx)
    specs, total = _specs_for(plan)
    stepper = Stepper(net, variant)
    converged = 0
    max_steps = -1
    sum_steps = 0
    violations: list[str] = []
    failures: list[str] = []
    worst_index = worst_init = None
    for key, spec in specs:
        cfg = initial_configuration(net, spec, oracle=ctx.oracle)
        outcome = run_until_stable(net, cfg, budget, variant, ctx, stepper,
                                   plan.include_phi_one_step)
        if outcome.converged:
            converged += 1
            steps = outcome.first_legal
            sum_steps += steps
            if steps > max_steps:
                max_steps, worst_index, worst_init = steps, key, spec.describe()
        else:
            failures.append(f"init {spec.describe()} did not certify within "
                            f"{budget} steps")
        for v in outcome.violations[:4]:
            violations.append(f"init {spec.describe()}: {v}")
    ecc = ctx.oracle.eccentricity
    return SweepReport(
        graph_doc=net.to_document(), mode=plan.mode, total=total,
        converged=converged, max_steps=max(max_steps, 0),
        mean_steps=(sum_steps / converged) if converged else 0.0,
        budget=budget, eccentricity=ecc,
        constant_ratio=max(max_steps, 0) / 2 ** ecc,
        violations=violations[:200], worst_index=worst_index,
        worst_init=worst_init, failures=failures[:200],
    )


# -- spanning tree extraction and the coloring application ---------------------

def extract_bfs_tree(net: Network, cfg: Configuration,
                     ctx: CertContext | None = None) -> dict[int, int]:
    """Min-port parent map of a legal configuration; checked against the oracle."""
    ctx = ctx or CertContext(net)
    if not is_legal(ctx, cfg):
        raise ValueError("tree extraction requires a legal configuration")
    parents: dict[int, int] = {}
    for v in range(net.node_count):
        if v == net.root:
            continue
        view = tuple((p, cfg.states[u]) for p, u in net.adjacency[v])
        port = parent_port(cfg.states[v], view)
        assert port is not None, "legal non-root node without parents"
        parents[v] = net.neighbor_at(v, port)
    for v, p in parents.items():
        if ctx.oracle.dist[p] != ctx.oracle.dist[v] - 1:
            raise AssertionError(f"parent of {v} is not one hop closer to the root")
    # n-1 edges into distinct nodes, each strictly closer: a spanning tree.
    assert len(parents) == net.node_count - 1
    return parents


def verify_coloring(net: Network, trace: Trace, certifier: TraceCertifier,
                    settle: int | None = None) -> tuple[bool, str]:
    """Check the 2-coloring overlay: after stabilization plus a settling
    window, every edge joins opposite colors, the root is black, and the
    colors never change again."""
    ctx = certifier.ctx
    first_legal = next((i for i, r in enumerate(certifier.reports) if r.legal),
                       None)
    if first_legal is None:
        return False, "trace never reached a legal configuration"
    if settle is None:
        settle = 3 * 2 ** ctx.oracle.eccentricity + net.node_count
    start = first_legal + settle
    if start >= len(trace.configurations):
        return False, f"trace too short: needs {start + 1} configurations"
    ref = trace.configurations[start].colors
    if ref is None:
        return False, "overlay not enabled"
    if ref[net.root] != BLACK:
        return False, "root is not black"
    for a, b in net.edges():
        if ref[a] == ref[b]:
            return False, f"edge ({a},{b}) is monochromatic after settling"
    for i in range(start, len(trace.configurations)):
        if trace.configurations[i].colors != ref:
            return False, f"colors moved at step {i}"
    return True, "proper stable 2-coloring"
