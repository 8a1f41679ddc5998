"""Batched evaluation-game solving for exhaustive sweeps.

The readable solver lives in `ckmu.game`; this module compiles the same
game rules to array code so that the exhaustive model sweeps finish in
minutes.  A formula is flattened to a closure-indexed template once, and a
numba kernel then builds, solves and verifies the arena for a whole batch
of models per call.

Games are solved twice by small progress measures, once per player (the
second run on the dual game), which yields positional strategies for both
players and checks determinacy by comparing the two regions.  Both
strategies are verified in-kernel: region closure, no stuck positions, and
no cycle whose maximal priority favours the opponent.

The test suite cross-validates this kernel against `ckmu.game.solve` on
sampled instances.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ckmu.syntax import (
    And,
    Bottom,
    Box,
    Dia,
    Implies,
    LocalDia,
    Mu,
    Nu,
    Or,
    Prop,
    Query,
    Var,
    WellNamedSentence,
)
from ckmu.game import _position_priority, ROLE_V, ROLE_R

K_PROP, K_BOT, K_AND, K_OR, K_IMP, K_QUERY, K_BOX, K_DIA, K_LDIA, K_MU, K_NU, K_VAR = range(12)


class FormulaTemplate:
    """Closure-indexed flat form of an analyzed sentence."""

    def __init__(self, sentence: WellNamedSentence, prop_order=("p",)):
        members = sorted(sentence.closure(), key=lambda f: (str(f), type(f).__name__))
        self.sentence = sentence
        self.index = {f: i for i, f in enumerate(members)}
        self.members = members
        prop_index = {p: i for i, p in enumerate(prop_order)}
        F = len(members)
        self.kind = np.zeros(F, np.int32)
        self.a1 = np.zeros(F, np.int32)
        self.a2 = np.zeros(F, np.int32)
        self.prio_v = np.zeros(F, np.int32)
        self.prio_r = np.zeros(F, np.int32)
        for f, i in self.index.items():
            if isinstance(f, Prop):
                self.kind[i] = K_PROP
                self.a1[i] = prop_index[f.name]
            elif isinstance(f, Bottom):
                self.kind[i] = K_BOT
            elif isinstance(f, And):
                self.kind[i], self.a1[i], self.a2[i] = K_AND, self.index[f.left], self.index[f.right]
            elif isinstance(f, Or):
                self.kind[i], self.a1[i], self.a2[i] = K_OR, self.index[f.left], self.index[f.right]
            elif isinstance(f, Implies):
                self.kind[i] = K_IMP
                self.a1[i] = self.index[Query(f.left, f.right)]
            elif isinstance(f, Query):
                self.kind[i], self.a1[i], self.a2[i] = (
                    K_QUERY,
                    self.index[f.left],
                    self.index[f.right],
                )
            elif isinstance(f, Box):
                self.kind[i], self.a1[i] = K_BOX, self.index[f.body]
            elif isinstance(f, Dia):
                self.kind[i], self.a1[i] = K_DIA, self.index[LocalDia(f.body)]
            elif isinstance(f, LocalDia):
                self.kind[i], self.a1[i] = K_LDIA, self.index[f.body]
            elif isinstance(f, (Mu, Nu)):
                self.kind[i] = K_MU if isinstance(f, Mu) else K_NU
                self.a1[i] = self.index[f.body]
            elif isinstance(f, Var):
                self.kind[i] = K_VAR
                self.a1[i] = self.index[sentence.binders[f.name]]
                self.prio_v[i] = _position_priority(sentence, f, ROLE_V)
                self.prio_r[i] = _position_priority(sentence, f, ROLE_R)
            else:
                raise TypeError(f"unexpected closure member {f!r}")
        self.root = self.index[sentence.formula]

    @property
    def size(self):
        return len(self.members)


# flag bits reported per model
FLAG_DETERMINACY = 1
FLAG_VERIFY_I = 2
FLAG_VERIFY_II = 4
FLAG_ALL = FLAG_DETERMINACY | FLAG_VERIFY_I | FLAG_VERIFY_II


@njit(cache=True)
def _owner_bit(kind_f, k, w, val_w, fall_w):
    # 0 = verifier role owns the position, 1 = refuter role
    if k == K_PROP:
        return 1 if (val_w >> w) & 1 else 0
    if k == K_BOT:
        return 1 if (fall_w >> w) & 1 else 0
    if k == K_OR or k == K_QUERY or k == K_LDIA or k == K_MU:
        return 0
    if k == K_VAR:
        return 0 if kind_f == K_MU else 1
    return 1


@njit(cache=True)
def _build(
    kind, a1, a2, prio_v, prio_r, root, n,
    pre_w, rel_w, prerel_w, fall_w, val_w,
    reach, order, cid_of, succ_start, succ_data, ctrl, prio,
):
    """BFS the reachable positions; fill compacted arena arrays.

    Position id: (f * n + w) * 2 + q with q = 0 when player I holds the
    verifier role.  Returns (#positions, #initials); initials come first in
    `order` (one per world, in world order).
    """
    F = kind.shape[0]
    P = F * n * 2
    for i in range(P):
        reach[i] = 0
        cid_of[i] = -1
    count = 0
    head = 0
    for w in range(n):
        pid = (root * n + w) * 2
        if reach[pid] == 0:
            reach[pid] = 1
            order[count] = pid
            cid_of[pid] = count
            count += 1
    tmp = np.empty(8 + n, np.int64)
    while head < count:
        pid = order[head]
        head += 1
        f = pid // (2 * n)
        rem = pid % (2 * n)
        w = rem // 2
        k = kind[f]
        nsucc = 0
        if k == K_AND or k == K_OR:
            tmp[nsucc] = (a1[f] * n + w) * 2 + (rem & 1)
            nsucc += 1
            if a2[f] != a1[f]:
                tmp[nsucc] = (a2[f] * n + w) * 2 + (rem & 1)
                nsucc += 1
        elif k == K_IMP:
            for w2 in range(n):
                if (pre_w[w] >> w2) & 1:
                    tmp[nsucc] = (a1[f] * n + w2) * 2 + (rem & 1)
                    nsucc += 1
        elif k == K_QUERY:
            tmp[nsucc] = (a1[f] * n + w) * 2 + (1 - (rem & 1))
            nsucc += 1
            tmp[nsucc] = (a2[f] * n + w) * 2 + (rem & 1)
            nsucc += 1
        elif k == K_BOX:
            for w2 in range(n):
                if (prerel_w[w] >> w2) & 1:
                    tmp[nsucc] = (a1[f] * n + w2) * 2 + (rem & 1)
                    nsucc += 1
        elif k == K_DIA:
            for w2 in range(n):
                if (pre_w[w] >> w2) & 1:
                    tmp[nsucc] = (a1[f] * n + w2) * 2 + (rem & 1)
                    nsucc += 1
        elif k == K_LDIA:
            for w2 in range(n):
                if (rel_w[w] >> w2) & 1:
                    tmp[nsucc] = (a1[f] * n + w2) * 2 + (rem & 1)
                    nsucc += 1
        elif k == K_MU or k == K_NU or k == K_VAR:
            tmp[nsucc] = (a1[f] * n + w) * 2 + (rem & 1)
            nsucc += 1
        # atoms: no successors
        for t in range(nsucc):
            sp = tmp[t]
            if reach[sp] == 0:
                reach[sp] = 1
                order[count] = sp
                cid_of[sp] = count
                count += 1
    # second pass: compacted successor CSR, controller, priority
    total = 0
    for c in range(count):
        pid = order[c]
        f = pid // (2 * n)
        rem = pid % (2 * n)
        w = rem // 2
        q = rem & 1
        k = kind[f]
        ob = _owner_bit(kind[a1[f]] if k == K_VAR else 0, k, w, val_w, fall_w)
        ctrl[c] = 0 if ob == q else 1
        if k == K_VAR:
            prio[c] = prio_v[f] if q == 0 else prio_r[f]
        else:
            prio[c] = 0
        succ_start[c] = total
        if k == K_AND or k == K_OR:
            succ_data[total] = cid_of[(a1[f] * n + w) * 2 + q]
            total += 1
            if a2[f] != a1[f]:
                succ_data[total] = cid_of[(a2[f] * n + w) * 2 + q]
                total += 1
        elif k == K_IMP:
            for w2 in range(n):
                if (pre_w[w] >> w2) & 1:
                    succ_data[total] = cid_of[(a1[f] * n + w2) * 2 + q]
                    total += 1
        elif k == K_QUERY:
            succ_data[total] = cid_of[(a1[f] * n + w) * 2 + (1 - q)]
            total += 1
            succ_data[total] = cid_of[(a2[f] * n + w) * 2 + q]
            total += 1
        elif k == K_BOX:
            for w2 in range(n):
                if (prerel_w[w] >> w2) & 1:
                    succ_data[total] = cid_of[(a1[f] * n + w2) * 2 + q]
                    total += 1
        elif k == K_DIA:
            for w2 in range(n):
                if (pre_w[w] >> w2) & 1:
                    succ_data[total] = cid_of[(a1[f] * n + w2) * 2 + q]
                    total += 1
        elif k == K_LDIA:
            for w2 in range(n):
                if (rel_w[w] >> w2) & 1:
                    succ_data[total] = cid_of[(a1[f] * n + w2) * 2 + q]
                    total += 1
        elif k == K_MU or k == K_NU or k == K_VAR:
            succ_data[total] = cid_of[(a1[f] * n + w) * 2 + q]
            total += 1
    succ_start[count] = total
    return count


@njit(cache=True)
def _spm(count, succ_start, succ_data, ctrl, prio, even_is, win_out, strat_out):
    """Small progress measures for max-parity, solved for one side.

    even_is: the controller value that plays the max-even objective in this
    run.  win_out[v] = 1 iff that side wins v; strat_out[v] = chosen
    successor for that side's winning positions it controls, else -1.
    """
    # convert to min-parity: q = D - p with D even
    D = 0
    for v in range(count):
        if prio[v] > D:
            D = prio[v]
    if D % 2 == 1:
        D += 1
    # components: odd min-priorities ascending; comp[q] = slot or -1
    comp = np.full(D + 1, -1, np.int32)
    K = 0
    for q in range(1, D + 1, 2):
        comp[q] = K
        K += 1
    if K == 0:
        K = 1  # dummy slot, never incremented
    limit = np.zeros(K, np.int64)
    minprio = np.empty(count, np.int32)
    for v in range(count):
        minprio[v] = D - prio[v]
        if minprio[v] % 2 == 1 and comp[minprio[v]] >= 0:
            limit[comp[minprio[v]]] += 1
    rho = np.zeros((count, K), np.int64)
    top = np.zeros(count, np.uint8)
    tmp = np.empty(K, np.int64)
    best = np.empty(K, np.int64)

    changed = True
    while changed:
        changed = False
        for v in range(count):
            if top[v]:
                continue
            pv = minprio[v]
            is_even_node = ctrl[v] == even_is
            # compute lift
            have = False
            best_top = np.uint8(0)
            s0, s1 = succ_start[v], succ_start[v + 1]
            best_succ = -1
            if s0 == s1:
                if is_even_node:
                    best_top = 1
                else:
                    for k in range(K):
                        best[k] = 0
                have = True
            for e in range(s0, s1):
                w = succ_data[e]
                # prog(v, w)
                t_top = top[w]
                if not t_top:
                    for k in range(K):
                        tmp[k] = 0
                    for q in range(1, pv + 1, 2):
                        c = comp[q]
                        if c >= 0:
                            tmp[c] = rho[w, c]
                    if pv % 2 == 1:
                        # strictly increase on the prefix up to pv
                        c = comp[pv]
                        carried = True
                        while c >= 0:
                            if tmp[c] < limit[c]:
                                tmp[c] += 1
                                carried = False
                                break
                            tmp[c] = 0
                            c -= 1
                        if carried:
                            t_top = 1
                # fold into best: even nodes take min, odd nodes take max
                if not have:
                    best_top = t_top
                    for k in range(K):
                        best[k] = tmp[k]
                    best_succ = w
                    have = True
                else:
                    cmpv = 0
                    if t_top and not best_top:
                        cmpv = 1
                    elif best_top and not t_top:
                        cmpv = -1
                    elif not t_top and not best_top:
                        for k in range(K):
                            if tmp[k] != best[k]:
                                cmpv = 1 if tmp[k] > best[k] else -1
                                break
                    if (is_even_node and cmpv < 0) or (not is_even_node and cmpv > 0):
                        best_top = t_top
                        for k in range(K):
                            best[k] = tmp[k]
                        best_succ = w
            # apply if lift strictly increases rho
            bigger = False
            if best_top and not top[v]:
                bigger = True
            elif not best_top:
                for k in range(K):
                    if best[k] != rho[v, k]:
                        bigger = best[k] > rho[v, k]
                        break
            if bigger:
                changed = True
                if best_top:
                    top[v] = 1
                else:
                    for k in range(K):
                        rho[v, k] = best[k]
    for v in range(count):
        win_out[v] = 0 if top[v] else 1
        strat_out[v] = -1
    # strategy: minimal prog successor for winning even-side nodes
    for v in range(count):
        if top[v] or ctrl[v] != even_is:
            continue
        pv = minprio[v]
        s0, s1 = succ_start[v], succ_start[v + 1]
        chosen = -1
        for e in range(s0, s1):
            w = succ_data[e]
            if top[w]:
                continue
            for k in range(K):
                tmp[k] = 0
            for q in range(1, pv + 1, 2):
                c = comp[q]
                if c >= 0:
                    tmp[c] = rho[w, c]
            t_top = np.uint8(0)
            if pv % 2 == 1:
                c = comp[pv]
                carried = True
                while c >= 0:
                    if tmp[c] < limit[c]:
                        tmp[c] += 1
                        carried = False
                        break
                    tmp[c] = 0
                    c -= 1
                if carried:
                    t_top = 1
            if t_top:
                continue
            le = True
            for k in range(K):
                if tmp[k] != rho[v, k]:
                    le = tmp[k] < rho[v, k]
                    break
            if le:
                chosen = w
                break
        strat_out[v] = chosen
    return 0


@njit(cache=True)
def _verify(count, succ_start, succ_data, ctrl, prio, player, win, strat, mark):
    """Check the strategy wins on its claimed region; 1 if accepted."""
    good_parity = 0 if player == 0 else 1
    for v in range(count):
        if win[v] != 1:
            continue
        s0, s1 = succ_start[v], succ_start[v + 1]
        if ctrl[v] == player:
            if s0 == s1:
                return 0  # stuck in own region
            t = strat[v]
            ok = False
            for e in range(s0, s1):
                if succ_data[e] == t:
                    ok = True
            if not ok or win[t] != 1:
                return 0
        else:
            for e in range(s0, s1):
                if win[succ_data[e]] != 1:
                    return 0
    # no cycle in the restricted region whose max priority has bad parity:
    # for each bad-parity node, search for a path back to it through
    # priorities <= its own.
    for v in range(count):
        if win[v] != 1 or prio[v] % 2 == good_parity:
            continue
        p = prio[v]
        for i in range(count):
            mark[i] = 0
        # BFS from restricted successors of v
        stack = np.empty(count, np.int64)
        sp = 0
        s0, s1 = succ_start[v], succ_start[v + 1]
        if ctrl[v] == player:
            if strat[v] >= 0 and win[strat[v]] == 1 and prio[strat[v]] <= p:
                if strat[v] == v:
                    return 0
                mark[strat[v]] = 1
                stack[sp] = strat[v]
                sp += 1
        else:
            for e in range(s0, s1):
                w = succ_data[e]
                if win[w] == 1 and prio[w] <= p:
                    if w == v:
                        return 0
                    if mark[w] == 0:
                        mark[w] = 1
                        stack[sp] = w
                        sp += 1
        while sp > 0:
            sp -= 1
            u = stack[sp]
            u0, u1 = succ_start[u], succ_start[u + 1]
            if ctrl[u] == player:
                if strat[u] >= 0:
                    w = strat[u]
                    if win[w] == 1 and prio[w] <= p:
                        if w == v:
                            return 0
                        if mark[w] == 0:
                            mark[w] = 1
                            stack[sp] = w
                            sp += 1
            else:
                for e in range(u0, u1):
                    w = succ_data[e]
                    if win[w] == 1 and prio[w] <= p:
                        if w == v:
                            return 0
                        if mark[w] == 0:
                            mark[w] = 1
                            stack[sp] = w
                            sp += 1
    return 1


@njit(cache=True)
def solve_batch(
    kind, a1, a2, prio_v, prio_r, root, n,
    pre, rel, fallible, val,
    out_win, out_flags,
):
    """Solve + verify the game for each model; fill winner bits and flags.

    pre/rel: (nm, n) successor masks; fallible/val: (nm,) masks.
    out_win[m] has bit w set iff player I wins at <w, root, V>.
    out_flags[m] sets FLAG_DETERMINACY / FLAG_VERIFY_I / FLAG_VERIFY_II.
    """
    nm = pre.shape[0]
    F = kind.shape[0]
    P = F * n * 2
    reach = np.empty(P, np.uint8)
    order = np.empty(P, np.int64)
    cid_of = np.empty(P, np.int64)
    succ_start = np.empty(P + 1, np.int64)
    succ_data = np.empty(P * (n + 2), np.int64)
    ctrl = np.empty(P, np.uint8)
    prio = np.empty(P, np.int32)
    prerel_w = np.empty(n, np.int64)
    win_i = np.empty(P, np.uint8)
    win_ii = np.empty(P, np.uint8)
    strat_i = np.empty(P, np.int64)
    strat_ii = np.empty(P, np.int64)
    mark = np.empty(P, np.uint8)
    prio_dual = np.empty(P, np.int32)

    for mi in range(nm):
        for w in range(n):
            acc = np.int64(0)
            for v in range(n):
                if (pre[mi, w] >> v) & 1:
                    acc |= rel[mi, v]
            prerel_w[w] = acc
        count = _build(
            kind, a1, a2, prio_v, prio_r, root, n,
            pre[mi], rel[mi], prerel_w, fallible[mi], val[mi],
            reach, order, cid_of, succ_start, succ_data, ctrl, prio,
        )
        _spm(count, succ_start, succ_data, ctrl, prio, 0, win_i, strat_i)
        for v in range(count):
            prio_dual[v] = prio[v] + 1
        _spm(count, succ_start, succ_data, ctrl, prio_dual, 1, win_ii, strat_ii)
        flags = 0
        det = True
        for v in range(count):
            if win_i[v] + win_ii[v] != 1:
                det = False
        if det:
            flags |= FLAG_DETERMINACY
        if _verify(count, succ_start, succ_data, ctrl, prio, 0, win_i, strat_i, mark):
            flags |= FLAG_VERIFY_I
        if _verify(count, succ_start, succ_data, ctrl, prio, 1, win_ii, strat_ii, mark):
            flags |= FLAG_VERIFY_II
        bits = np.int64(0)
        for w in range(n):
            c = cid_of[(root * n + w) * 2]
            if win_i[c] == 1:
                bits |= np.int64(1) << w
        out_win[mi] = bits
        out_flags[mi] = flags
    return 0
