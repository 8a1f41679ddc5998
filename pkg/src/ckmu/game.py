"""Evaluation games on birelational models, solved as parity games.

A position pairs a world with a closure formula and the role (Verifier or
Refuter) currently held by player I.  The verifier role owns disjunctions,
implication queries, local diamonds, mu-unfoldings and mu-bound variables,
plus stuck false atoms; the refuter role owns the duals.  The player to
move is I exactly when the owning role is the role I holds.  Following the
query move into an implication antecedent swaps the roles.

Infinite plays are decided by the outermost fixpoint regenerated
infinitely often, encoded as parities: a variable position bound by the
i-th binder in subsumption order (outermost first, n binders total) gets
priority 2(n-i)+2 when player I owns that binder and 2(n-i)+1 otherwise,
and player I wins a play iff the maximum priority seen infinitely often
is even.  A player stuck at a position they own loses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ckmu.denotational import eval_mask
from ckmu.model import Model, compose_pre_rel_masks
from ckmu.syntax import (
    And,
    Bottom,
    Box,
    Dia,
    Formula,
    Implies,
    LocalDia,
    Mu,
    Nu,
    Or,
    Prop,
    Query,
    Var,
    WellNamedSentence,
    pretty,
)

PLAYER_I = "I"
PLAYER_II = "II"
ROLE_V = "V"
ROLE_R = "R"


class RoleInconsistency(RuntimeError):
    """A fixpoint formula was reached under two different roles."""


class IncompleteStrategy(ValueError):
    """A strategy misses a move at an owned position with successors."""


@dataclass(frozen=True)
class Position:
    world: str
    formula: Formula
    role_of_i: str

    def __str__(self):
        return f"<{self.world}, {pretty(self.formula)}, {self.role_of_i}>"


@dataclass
class GameArena:
    model: Model
    sentence: WellNamedSentence
    positions: list[Position]
    moves: list[list[int]]
    owner_role: list[str]
    priority: list[int]
    initial: int
    index: dict[Position, int] = field(repr=False, default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.positions)

    def controller(self, pid: int) -> str:
        """The player who moves at the position."""
        return PLAYER_I if self.owner_role[pid] == self.positions[pid].role_of_i else PLAYER_II

    def dump(self) -> str:
        lines = []
        for pid, pos in enumerate(self.positions):
            succ = " ".join(str(s) for s in self.moves[pid])
            lines.append(
                f"{pid} | {pos.world} | {pretty(pos.formula)} | {pos.role_of_i} | "
                f"{self.owner_role[pid]} | {self.priority[pid]} | {succ}"
            )
        return "\n".join(lines) + "\n"


def _flip(role):
    return ROLE_R if role == ROLE_V else ROLE_V


def _owner_and_moves(m: Model, s: WellNamedSentence, prerel, pos: Position):
    """Owning role and successor positions per the game rules."""
    w = m.index[pos.world]
    f, q = pos.formula, pos.role_of_i
    worlds = m.worlds

    def at(mask, g, role):
        return [Position(worlds[i], g, role) for i in range(m.n) if mask >> i & 1]

    if isinstance(f, Prop):
        truth = m.prop_mask(f.name) >> w & 1
        return (ROLE_R if truth else ROLE_V), []
    if isinstance(f, Bottom):
        truth = m.fallible_mask >> w & 1
        return (ROLE_R if truth else ROLE_V), []
    if isinstance(f, Or):
        return ROLE_V, [Position(pos.world, f.left, q), Position(pos.world, f.right, q)]
    if isinstance(f, And):
        return ROLE_R, [Position(pos.world, f.left, q), Position(pos.world, f.right, q)]
    if isinstance(f, Implies):
        return ROLE_R, at(m.pre_masks[w], Query(f.left, f.right), q)
    if isinstance(f, Query):
        return ROLE_V, [Position(pos.world, f.left, _flip(q)), Position(pos.world, f.right, q)]
    if isinstance(f, Box):
        return ROLE_R, at(prerel[w], f.body, q)
    if isinstance(f, Dia):
        return ROLE_R, at(m.pre_masks[w], LocalDia(f.body), q)
    if isinstance(f, LocalDia):
        return ROLE_V, at(m.rel_masks[w], f.body, q)
    if isinstance(f, Mu):
        return ROLE_V, [Position(pos.world, f.body, q)]
    if isinstance(f, Nu):
        return ROLE_R, [Position(pos.world, f.body, q)]
    if isinstance(f, Var):
        binder = s.binders[f.name]
        role = ROLE_V if isinstance(binder, Mu) else ROLE_R
        return role, [Position(pos.world, binder, q)]
    raise TypeError(f"not a game formula: {f!r}")


def _position_priority(s: WellNamedSentence, f: Formula, role_of_i: str) -> int:
    if not isinstance(f, Var):
        return 0
    binder = s.binders[f.name]
    n = s.num_binders
    i = s.binder_index(f.name)
    owned_by_i = (isinstance(binder, Nu) and role_of_i == ROLE_V) or (
        isinstance(binder, Mu) and role_of_i == ROLE_R
    )
    return 2 * (n - i) + 2 if owned_by_i else 2 * (n - i) + 1


def build_arena(m: Model, s: WellNamedSentence, world: str) -> GameArena:
    """Construct the evaluation game restricted to reachable positions.

    Raises RoleInconsistency if a binder is reached under two roles, which
    cannot happen for well-named sentences and signals a construction bug.
    """
    if world not in m.index:
        raise ValueError(f"unknown world {world!r}")
    prerel = compose_pre_rel_masks(m)
    initial = Position(world, s.formula, ROLE_V)
    index: dict[Position, int] = {initial: 0}
    positions = [initial]
    moves: list[list[int]] = []
    owner: list[str] = []
    prio: list[int] = []
    binder_role_seen: dict[str, str] = {}

    todo = [initial]
    while todo:
        pos = todo.pop()
        f = pos.formula
        if isinstance(f, (Mu, Nu)):
            key = f.var
        elif isinstance(f, Var):
            key = f.name
        else:
            key = None
        if key is not None:
            seen = binder_role_seen.setdefault(key, pos.role_of_i)
            if seen != pos.role_of_i:
                raise RoleInconsistency(
                    f"binder {key} reached as role {pos.role_of_i} and {seen}"
                )
            if s.binder_roles[key] != pos.role_of_i:
                raise RoleInconsistency(
                    f"binder {key} reached as role {pos.role_of_i}, statically {s.binder_roles[key]}"
                )
        o, succ = _owner_and_moves(m, s, prerel, pos)
        pid = index[pos]
        while len(moves) <= pid:
            moves.append([])
            owner.append("")
            prio.append(0)
        owner[pid] = o
        prio[pid] = _position_priority(s, f, pos.role_of_i)
        ids = []
        for sp in succ:
            if sp not in index:
                index[sp] = len(positions)
                positions.append(sp)
                todo.append(sp)
            if index[sp] not in ids:
                ids.append(index[sp])
        moves[pid] = ids

    return GameArena(
        model=m,
        sentence=s,
        positions=positions,
        moves=moves,
        owner_role=owner,
        priority=prio,
        initial=0,
        index=index,
    )


def build_full_arena(m: Model, s: WellNamedSentence) -> GameArena:
    """Arena over the union of positions reachable from every world's start."""
    prerel = compose_pre_rel_masks(m)
    index: dict[Position, int] = {}
    positions: list[Position] = []
    moves: list[list[int]] = []
    owner: list[str] = []
    prio: list[int] = []
    todo = []
    for w in m.worlds:
        pos = Position(w, s.formula, ROLE_V)
        if pos not in index:
            index[pos] = len(positions)
            positions.append(pos)
            todo.append(pos)
    while todo:
        pos = todo.pop()
        o, succ = _owner_and_moves(m, s, prerel, pos)
        pid = index[pos]
        while len(moves) <= pid:
            moves.append([])
            owner.append("")
            prio.append(0)
        owner[pid] = o
        prio[pid] = _position_priority(s, pos.formula, pos.role_of_i)
        ids = []
        for sp in succ:
            if sp not in index:
                index[sp] = len(positions)
                positions.append(sp)
                todo.append(sp)
            if index[sp] not in ids:
                ids.append(index[sp])
        moves[pid] = ids
    return GameArena(
        model=m,
        sentence=s,
        positions=positions,
        moves=moves,
        owner_role=owner,
        priority=prio,
        initial=0,
        index=index,
    )


# ---------------------------------------------------------------------------
# Parity solving (attractor-based recursive decomposition)


@dataclass
class GameSolution:
    arena: GameArena
    winner: list[str]  # PLAYER_I / PLAYER_II per position
    strategy_i: dict[int, int]
    strategy_ii: dict[int, int]

    def region(self, player: str) -> set[int]:
        return {pid for pid, w in enumerate(self.winner) if w == player}

    def winner_at(self, pid: int) -> str:
        return self.winner[pid]

    def strategy(self, player: str) -> dict[int, int]:
        return self.strategy_i if player == PLAYER_I else self.strategy_ii


def solve(arena: GameArena) -> GameSolution:
    """Partition positions into winning regions with positional strategies.

    Dead ends lose for their controller; internally they get an edge to a
    sink of the appropriate parity so the recursive solver sees a total
    game.
    """
    n = arena.size
    controller = [0 if arena.controller(pid) == PLAYER_I else 1 for pid in range(n)]
    priority = list(arena.priority)
    succ = [list(s) for s in arena.moves]

    # sinks: node n loops with odd priority (wins for II), node n+1 with even
    sink_for = {0: n, 1: n + 1}
    succ.append([n])
    succ.append([n + 1])
    controller += [0, 1]
    priority += [1, 0]
    for v in range(n):
        if not succ[v]:
            succ[v] = [sink_for[controller[v]]]

    pred = [[] for _ in range(n + 2)]
    for v, ss in enumerate(succ):
        for u in ss:
            pred[u].append(v)

    def attract(alive, target, player):
        area = set(target)
        strat = {}
        cnt = {}
        queue = list(target)
        while queue:
            u = queue.pop()
            for v in pred[u]:
                if v not in alive or v in area:
                    continue
                if controller[v] == player:
                    area.add(v)
                    strat[v] = u
                    queue.append(v)
                else:
                    if v not in cnt:
                        cnt[v] = sum(1 for x in succ[v] if x in alive)
                    cnt[v] -= 1
                    if cnt[v] == 0:
                        area.add(v)
                        queue.append(v)
        return area, strat

    def rec(alive):
        # returns (win_a, strat_a) keyed by player index: ({0: set, 1: set}, {0: dict, 1: dict})
        if not alive:
            return {0: set(), 1: set()}, {0: {}, 1: {}}
        p = max(priority[v] for v in alive)
        a = p % 2  # parity player favoured by the top priority
        o = 1 - a
        top = {v for v in alive if priority[v] == p}
        area, astrat = attract(alive, top, a)
        win1, strat1 = rec(alive - area)
        if not win1[o]:
            # player a wins all of `alive`: via the subgame strategy outside
            # the attractor, the attractor strategy toward `top`, and any
            # in-game move from `top` itself.
            for v in top:
                if controller[v] == a:
                    for u in succ[v]:
                        if u in alive:
                            astrat.setdefault(v, u)
                            break
            strat1[a].update(astrat)
            return {a: set(alive), o: set()}, {a: strat1[a], o: {}}
        barea, bstrat = attract(alive, win1[o], o)
        win2, strat2 = rec(alive - barea)
        win2[o] |= barea
        strat2[o].update(bstrat)
        strat2[o].update(strat1[o])
        return win2, strat2

    win, strat = rec(set(range(n + 2)))
    winner = [PLAYER_I if v in win[0] else PLAYER_II for v in range(n)]
    strategy_i = {v: u for v, u in strat[0].items() if v < n and u < n}
    strategy_ii = {v: u for v, u in strat[1].items() if v < n and u < n}
    return GameSolution(arena, winner, strategy_i, strategy_ii)


# ---------------------------------------------------------------------------
# Strategy verification


def _sccs(nodes, succ):
    """Iterative Tarjan; returns list of node lists."""
    index = {}
    low = {}
    on_stack = set()
    stack = []
    out = []
    counter = [0]
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ(root)))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for u in it:
                if u not in index:
                    index[u] = low[u] = counter[0]
                    counter[0] += 1
                    stack.append(u)
                    on_stack.add(u)
                    work.append((u, iter(succ(u))))
                    advanced = True
                    break
                if u in on_stack:
                    low[v] = min(low[v], index[u])
            if advanced:
                continue
            work.pop()
            if work:
                pv = work[-1][0]
                low[pv] = min(low[pv], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    u = stack.pop()
                    on_stack.discard(u)
                    comp.append(u)
                    if u == v:
                        break
                out.append(comp)
    return out


def verify_strategy(arena: GameArena, player: str, sigma: dict[int, int], region) -> bool:
    """Check that sigma wins everywhere on the claimed region.

    True iff, restricting the player's positions to their sigma move and
    keeping all opponent moves, the region is closed, the player is never
    stuck, every opponent dead end is a win, and every cycle's maximal
    priority has the player's parity.  Raises IncompleteStrategy when sigma
    is undefined at an owned position of the region that has successors.
    """
    region = set(region)
    good_parity = 0 if player == PLAYER_I else 1
    edges = {}
    for v in region:
        succ = arena.moves[v]
        if arena.controller(v) == player:
            if not succ:
                return False  # stuck in own region
            if v not in sigma:
                raise IncompleteStrategy(f"no move chosen at position {v}")
            t = sigma[v]
            if t not in succ:
                return False
            if t not in region:
                return False
            edges[v] = [t]
        else:
            if any(u not in region for u in succ):
                return False
            edges[v] = list(succ)

    bad_ps = sorted(
        {arena.priority[v] for v in region if arena.priority[v] % 2 != good_parity}, reverse=True
    )
    for p in bad_ps:
        sub = {v for v in region if arena.priority[v] <= p}

        def sub_succ(v):
            return [u for u in edges[v] if u in sub]

        for comp in _sccs(sorted(sub), sub_succ):
            cyclic = len(comp) > 1 or comp[0] in sub_succ(comp[0])
            if cyclic and any(arena.priority[v] == p for v in comp):
                return False
    return True


def check_equivalence(m: Model, s: WellNamedSentence, world: str) -> bool:
    """Denotational truth at the world coincides with player I winning the game."""
    arena = build_arena(m, s, world)
    sol = solve(arena)
    denot = bool(eval_mask(m, s.formula, {}) >> m.index[world] & 1)
    return denot == (sol.winner_at(arena.initial) == PLAYER_I)
