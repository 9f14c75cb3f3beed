"""Hot loops: random streams, Poisson inversion, the hourly game step,
policy dispatch, batched episodes and the two Q-learning trainers.

Everything here is written against plain integer / float64 numpy arrays so
the same source runs compiled (numba) or interpreted.  The random stream is
MRG32k3a in int64 arithmetic, which keeps both backends bit-identical.
"""

import math

import numpy as np

from ._accel import jit

# --------------------------------------------------------------------------
# MRG32k3a
# --------------------------------------------------------------------------

M1 = 4294967087
M2 = 4294944443
A12 = 1403580
A13N = 810728
A21 = 527612
A23N = 1370589
NORM = 1.0 / (M1 + 1.0)
TWO_M53 = 1.0 / 9007199254740992.0  # 2**-53


@jit
def mrg_next(s):
    """Advance the 6-word state in place; returns an integer in [1, M1]."""
    p1 = (A12 * s[1] - A13N * s[0]) % M1
    s[0] = s[1]
    s[1] = s[2]
    s[2] = p1
    p2 = (A21 * s[5] - A23N * s[3]) % M2
    s[3] = s[4]
    s[4] = s[5]
    s[5] = p2
    if p1 > p2:
        return p1 - p2
    return p1 - p2 + M1


@jit
def uniform(s):
    """Uniform on the open interval (0, 1), 32-bit resolution."""
    return mrg_next(s) * NORM


@jit
def uniform52(s):
    """Odd integer ``j`` in (0, 2**53); the uniform is ``j * 2**-53``.

    Both ``u`` and ``1 - u`` are exactly representable, which lets the
    Poisson inversion search either tail without cancellation.
    """
    hi = ((mrg_next(s) - 1) * 33554432) // M1  # 2**25 buckets
    lo = ((mrg_next(s) - 1) * 134217728) // M1  # 2**27 buckets
    return 2 * (hi * 134217728 + lo) + 1


@jit
def pick_index(cum, u):
    """Smallest i with cum[i] >= u (cum nondecreasing, last entry 1)."""
    n = cum.shape[0]
    for i in range(n):
        if u <= cum[i]:
            return i
    return n - 1


@jit
def poisson_draw(cdf, sf, s):
    """Exact inversion: smallest k with P(K <= k) >= u.

    ``cdf[k] = P(K <= k)`` and ``sf[k] = P(K > k)`` over a table that covers
    all but ~1e-16 of the mass; the upper half is searched on ``sf`` so the
    tail is resolved to the generator's full precision.
    """
    j = uniform52(s)
    last = cdf.shape[0] - 1
    if 2 * j <= 9007199254740992:
        u = j * TWO_M53
        if cdf[last] < u:
            return last
        lo = 0
        hi = last
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] >= u:
                hi = mid
            else:
                lo = mid + 1
        return lo
    v = (9007199254740992 - j) * TWO_M53
    if sf[last] > v:
        return last
    lo = 0
    hi = last
    while lo < hi:
        mid = (lo + hi) // 2
        if sf[mid] <= v:
            hi = mid
        else:
            lo = mid + 1
    return lo


@jit
def poisson_fill(cdf, sf, s, out):
    for i in range(out.shape[0]):
        out[i] = poisson_draw(cdf, sf, s)


# --------------------------------------------------------------------------
# queue / game primitives
# --------------------------------------------------------------------------

# integer config slots
IC_N = 0
IC_X = 1
IC_Y = 2
IC_E = 3
IC_MD = 4
IC_MA = 5
IC_B0 = 6
IC_ACAP = 7
IC_MODE = 8
IC_SIZE = 9

# float config slots
FC_LOW = 0
FC_HIGH = 1
FC_W = 2
FC_SIZE = 3


@jit
def cost_f(v, lo, hi):
    if v <= lo:
        return 0.0
    if v >= hi:
        return 1.0
    return (v - lo) / (hi - lo)


@jit
def shaping_q(r, n, r0, horizon):
    if r0 <= 0:
        return 0.0
    if n < 1:
        n = 1
    q = 0.5 * (r / n) / (r0 / horizon)
    if q < 0.0:
        return 0.0
    if q > 1.0:
        return 1.0
    return q


@jit
def hour_capacity(caps, cum, mode, s_env):
    if mode == 0:
        return caps[0]
    return caps[pick_index(cum, uniform(s_env))]


@jit
def env_step(b, x, y, d, a, lam_cdf, lam_sf, caps, cum, mode, s_env, rec):
    """One hour of the game.  Fills ``rec`` with
    (b_next, x_next, y_next, arrivals, capacity, d_eff, a_eff)."""
    d_eff = d if d < x else x
    a_eff = a if a < y else y
    cap = hour_capacity(caps, cum, mode, s_env)
    arrivals = poisson_draw(lam_cdf, lam_sf, s_env)
    nb = b - d_eff + a_eff + arrivals - cap
    if nb < 0:
        nb = 0
    rec[0] = nb
    rec[1] = x - d_eff
    rec[2] = y - a_eff
    rec[3] = arrivals
    rec[4] = cap
    rec[5] = d_eff
    rec[6] = a_eff


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------

K_ZERO = 0
K_CONST = 1
K_S1 = 2
K_S2 = 3
K_DUMP = 4
K_RANDOM = 5
K_STOCH = 6
K_TABLE_DEF = 7
K_TABLE_ATT = 8
K_SCHEDULE = 9

P_AMOUNT = 0
P_CHUNK = 1
P_CAP = 2
P_THRESH = 3
P_RESET = 4
P_NRATES = 5
P_BBIN = 6
P_BCAP = 7
P_XBIN = 8
P_HBIN = 9
P_DIMB = 10
P_DIMH = 11
P_DIMX = 12
P_DIMY = 13
P_DAYLIM = 14
P_DAYLEN = 15
P_SIZE = 16


@jit
def round_up(v, chunk):
    return ((v + chunk - 1) // chunk) * chunk


@jit
def rule_amount(b, thresh, reset, aggressive, chunk, cap):
    raw = b - thresh
    if raw <= 0:
        return 0
    if aggressive:
        raw += thresh - reset
    d = round_up(raw, chunk)
    if d > cap:
        d = cap
    return d


@jit
def encode_state(b, n, x, y, bbin, bcap, hbin, xbin, dimh, dimx, dimy):
    """Row-major index over (backlog bin, hours bin, x bin, y bin)."""
    if b > bcap:
        b = bcap
    idx = ((b // bbin) * dimh + n // hbin) * dimx + x // xbin
    return idx * dimy + y // xbin


@jit
def policy_amount(bank, p, is_att, b, n, x, y, hour, s_pol):
    """Undecorated action of policy ``p``; ``y`` is ignored for defenders."""
    kinds, pint, pflt, toff, tab, acdf, asf = bank
    kind = kinds[p]
    if kind == K_ZERO:
        return 0
    if kind == K_CONST:
        return pint[p, P_AMOUNT]
    if kind == K_RANDOM:
        m = pint[p, P_CAP] // pint[p, P_CHUNK]
        i = int(uniform(s_pol) * (m + 1))
        if i > m:
            i = m
        return i * pint[p, P_CHUNK]
    if kind == K_SCHEDULE:
        off = toff[p]
        if hour < toff[p + 1] - off:
            return tab[off + hour]
        return 0
    if not is_att:
        if kind == K_S1:
            return rule_amount(b, pint[p, P_THRESH], pint[p, P_RESET], False,
                               pint[p, P_CHUNK], pint[p, P_CAP])
        if kind == K_S2:
            return rule_amount(b, pint[p, P_THRESH], pint[p, P_RESET], True,
                               pint[p, P_CHUNK], pint[p, P_CAP])
        if kind == K_TABLE_DEF:
            idx = encode_state(b, n, x, 0, pint[p, P_BBIN], pint[p, P_BCAP],
                               pint[p, P_HBIN], pint[p, P_XBIN],
                               pint[p, P_DIMH], pint[p, P_DIMX], 1)
            return tab[toff[p] + idx] * pint[p, P_CHUNK]
        return -1
    if kind == K_DUMP:
        if y > 0:
            return pint[p, P_CAP]
        return 0
    if kind == K_STOCH:
        r = pick_index(pflt[p], uniform(s_pol))
        extra = poisson_draw(acdf[p, r], asf[p, r], s_pol)
        c = pint[p, P_CHUNK]
        amt = (extra // c) * c
        if amt > pint[p, P_CAP]:
            amt = pint[p, P_CAP]
        return amt
    if kind == K_TABLE_ATT:
        idx = encode_state(b, n, x, y, pint[p, P_BBIN], pint[p, P_BCAP],
                           pint[p, P_HBIN], pint[p, P_XBIN],
                           pint[p, P_DIMH], pint[p, P_DIMX], pint[p, P_DIMY])
        return tab[toff[p] + idx] * pint[p, P_CHUNK]
    return -1


@jit
def day_bound(pint, p, amount, hour, spent):
    """Calendar-day cap: returns the (chunk-floored) amount allowed now."""
    lim = pint[p, P_DAYLIM]
    if lim < 0 or amount <= 0:
        return amount
    room = lim - spent[0]
    c = pint[p, P_CHUNK]
    room = (room // c) * c
    if amount > room:
        amount = room
    if amount < 0:
        amount = 0
    return amount


@jit
def reset_day(pint, p, hour, spent):
    if pint[p, P_DAYLIM] >= 0 and hour % pint[p, P_DAYLEN] == 0:
        spent[0] = 0


@jit
def policy_act(bank, p, is_att, b, n, x, y, hour, s_pol, spent):
    kinds, pint, pflt, toff, tab, acdf, asf = bank
    reset_day(pint, p, hour, spent)
    amt = policy_amount(bank, p, is_att, b, n, x, y, hour, s_pol)
    if amt < 0:
        return amt
    amt = day_bound(pint, p, amt, hour, spent)
    spent[0] += amt
    return amt


# --------------------------------------------------------------------------
# episodes
# --------------------------------------------------------------------------

ERR_NONE = 0
ERR_DEF_ACTION = 1
ERR_ATT_ACTION = 2
ERR_KIND = 3
ERR_NONFINITE = 4

# trace columns
T_HOUR = 0
T_BPRE = 1
T_D = 2
T_A = 3
T_BPOST = 4
T_X = 5
T_Y = 6
T_ARR = 7
T_CAP = 8
T_DEFF = 9
T_AEFF = 10
T_SIZE = 11


@jit
def _legal(v, chunk, cap):
    return v >= 0 and v <= cap and v % chunk == 0


@jit
def run_episode(env, dbank, dp, abank, ap, s_env, s_def, s_att, out, costs, err):
    ic, fc, lam_cdf, lam_sf, caps, cum = env
    horizon = ic[IC_N]
    b = ic[IC_B0]
    x = ic[IC_X]
    y = ic[IC_Y]
    rec = np.zeros(7, dtype=np.int64)
    dspent = np.zeros(1, dtype=np.int64)
    aspent = np.zeros(1, dtype=np.int64)
    for t in range(horizon):
        n = horizon - t
        d = policy_act(dbank, dp, False, b, n, x, 0, t, s_def, dspent)
        if not _legal(d, ic[IC_MD], ic[IC_E]):
            err[0] = ERR_DEF_ACTION if d >= 0 else ERR_KIND
            err[1] = t + 1
            err[2] = d
            return
        a = policy_act(abank, ap, True, b, n, x, y, t, s_att, aspent)
        if not _legal(a, ic[IC_MA], ic[IC_ACAP]):
            err[0] = ERR_ATT_ACTION if a >= 0 else ERR_KIND
            err[1] = t + 1
            err[2] = a
            return
        post = b - (d if d < x else x)
        costs[t] = cost_f(post if post > 0 else 0, fc[FC_LOW], fc[FC_HIGH])
        env_step(b, x, y, d, a, lam_cdf, lam_sf, caps, cum, ic[IC_MODE], s_env, rec)
        out[t, T_HOUR] = t + 1
        out[t, T_BPRE] = b
        out[t, T_D] = d
        out[t, T_A] = a
        out[t, T_BPOST] = rec[0]
        out[t, T_X] = rec[1]
        out[t, T_Y] = rec[2]
        out[t, T_ARR] = rec[3]
        out[t, T_CAP] = rec[4]
        out[t, T_DEFF] = rec[5]
        out[t, T_AEFF] = rec[6]
        b = rec[0]
        x = rec[1]
        y = rec[2]
    err[0] = ERR_NONE


@jit
def run_batch(env, dbank, dp, abank, ap, seeds, out, costs, errs):
    """``seeds[r]`` holds three 6-word streams (env, defender, attacker)."""
    for r in range(seeds.shape[0]):
        s_env = seeds[r, 0].copy()
        s_def = seeds[r, 1].copy()
        s_att = seeds[r, 2].copy()
        run_episode(env, dbank, dp, abank, ap, s_env, s_def, s_att,
                    out[r], costs[r], errs[r])


# --------------------------------------------------------------------------
# tabular Q-learning
# --------------------------------------------------------------------------

# hyper slots
H_EPISODES = 0
H_EPS0 = 1
H_EPS1 = 2
H_ANNEAL = 3
H_GAMMA = 4
H_LRPOW = 5
H_LRCONST = 6
H_ESTART = 7
H_SIZE = 8

# aggregation slots
G_BBIN = 0
G_BCAP = 1
G_XBIN = 2
G_HBIN = 3
G_DIMB = 4
G_DIMH = 5
G_DIMX = 6
G_DIMY = 7
G_SIZE = 8


@jit
def greedy(qrow):
    best = 0
    bv = qrow[0]
    for i in range(1, qrow.shape[0]):
        if qrow[i] > bv:
            bv = qrow[i]
            best = i
    return best


@jit
def learning_rate(visits, hyper):
    if hyper[H_LRCONST] >= 0.0:
        return hyper[H_LRCONST]
    return 1.0 / (1.0 + visits) ** hyper[H_LRPOW]


@jit
def q_update(q, visits, s, a, reward, s2, terminal, hyper):
    alpha = learning_rate(visits[s, a], hyper)
    target = reward
    if not terminal:
        target += hyper[H_GAMMA] * q[s2, greedy(q[s2])]
    q[s, a] += alpha * (target - q[s, a])
    visits[s, a] += 1
    return q[s, a]


@jit
def epsilon_at(e, hyper):
    episodes = hyper[H_EPISODES]
    span = hyper[H_ANNEAL] * episodes
    if span <= 1.0 or e >= span:
        return hyper[H_EPS1]
    return hyper[H_EPS0] + (hyper[H_EPS1] - hyper[H_EPS0]) * (e / span)


@jit
def explore(q, s, eps, s_exp):
    nact = q.shape[1]
    if uniform(s_exp) < eps:
        i = int(uniform(s_exp) * nact)
        if i >= nact:
            i = nact - 1
        return i
    return greedy(q[s])


@jit
def random_start(ic, bcap, s_exp, start):
    """Exploring start: uniform hour, backlog and remaining budgets."""
    start[0] = int(uniform(s_exp) * ic[IC_N])
    start[1] = int(uniform(s_exp) * (bcap + 1))
    start[2] = int(uniform(s_exp) * (ic[IC_X] + 1))
    start[3] = int(uniform(s_exp) * (ic[IC_Y] + 1))


@jit
def episode_start(ic, bcap, hyper, s_exp, start):
    if hyper[H_ESTART] > 0.0 and uniform(s_exp) < hyper[H_ESTART]:
        random_start(ic, bcap, s_exp, start)
    else:
        start[0] = 0
        start[1] = ic[IC_B0]
        start[2] = ic[IC_X]
        start[3] = ic[IC_Y]


@jit
def train_defender_loop(env, abank, wcum, agg, q, visits, hyper,
                        s_env, s_exp, s_att, s_mix, chunk):
    ic, fc, lam_cdf, lam_sf, caps, cum = env
    horizon = ic[IC_N]
    big_x = ic[IC_X]
    rec = np.zeros(7, dtype=np.int64)
    aspent = np.zeros(1, dtype=np.int64)
    start = np.zeros(4, dtype=np.int64)
    episodes = int(hyper[H_EPISODES])
    for e in range(episodes):
        eps = epsilon_at(e, hyper)
        ap = pick_index(wcum, uniform(s_mix))
        episode_start(ic, agg[G_BCAP], hyper, s_exp, start)
        t0 = start[0]
        b = start[1]
        x = start[2]
        y = start[3]
        aspent[0] = 0
        s = encode_state(b, horizon - t0, x, 0, agg[G_BBIN], agg[G_BCAP], agg[G_HBIN],
                         agg[G_XBIN], agg[G_DIMH], agg[G_DIMX], 1)
        for t in range(t0, horizon):
            n = horizon - t
            ai = explore(q, s, eps, s_exp)
            d = ai * chunk
            a = policy_act(abank, ap, True, b, n, x, y, t, s_att, aspent)
            if a < 0:
                return ERR_KIND
            post = b - (d if d < x else x)
            c = cost_f(post if post > 0 else 0, fc[FC_LOW], fc[FC_HIGH])
            env_step(b, x, y, d, a, lam_cdf, lam_sf, caps, cum, ic[IC_MODE], s_env, rec)
            b = rec[0]
            x = rec[1]
            y = rec[2]
            r = -c + fc[FC_W] * shaping_q(x, n - 1, big_x, horizon)
            s2 = encode_state(b, n - 1, x, 0, agg[G_BBIN], agg[G_BCAP], agg[G_HBIN],
                              agg[G_XBIN], agg[G_DIMH], agg[G_DIMX], 1)
            v = q_update(q, visits, s, ai, r, s2, n - 1 == 0, hyper)
            if not math.isfinite(v):
                return ERR_NONFINITE
            s = s2
    return ERR_NONE


@jit
def train_attacker_loop(env, dbank, dp, agg, q, visits, hyper,
                        s_env, s_exp, s_def, chunk, day_limit, day_len):
    ic, fc, lam_cdf, lam_sf, caps, cum = env
    horizon = ic[IC_N]
    big_y = ic[IC_Y]
    rec = np.zeros(7, dtype=np.int64)
    dspent = np.zeros(1, dtype=np.int64)
    start = np.zeros(4, dtype=np.int64)
    episodes = int(hyper[H_EPISODES])
    for e in range(episodes):
        eps = epsilon_at(e, hyper)
        episode_start(ic, agg[G_BCAP], hyper, s_exp, start)
        t0 = start[0]
        b = start[1]
        x = start[2]
        y = start[3]
        dspent[0] = 0
        day_spent = 0
        s = encode_state(b, horizon - t0, x, y, agg[G_BBIN], agg[G_BCAP], agg[G_HBIN],
                         agg[G_XBIN], agg[G_DIMH], agg[G_DIMX], agg[G_DIMY])
        for t in range(t0, horizon):
            n = horizon - t
            d = policy_act(dbank, dp, False, b, n, x, 0, t, s_def, dspent)
            if d < 0:
                return ERR_KIND
            ai = explore(q, s, eps, s_exp)
            a = ai * chunk
            if day_limit >= 0:
                if t % day_len == 0:
                    day_spent = 0
                room = ((day_limit - day_spent) // chunk) * chunk
                if a > room:
                    a = room
                day_spent += a
            # credit the smallest action with the same effect on the game
            eff = a if a < y else y
            ai = (eff + chunk - 1) // chunk
            post = b - (d if d < x else x)
            c = cost_f(post if post > 0 else 0, fc[FC_LOW], fc[FC_HIGH])
            env_step(b, x, y, d, a, lam_cdf, lam_sf, caps, cum, ic[IC_MODE], s_env, rec)
            b = rec[0]
            x = rec[1]
            y = rec[2]
            r = c + fc[FC_W] * shaping_q(y, n - 1, big_y, horizon)
            s2 = encode_state(b, n - 1, x, y, agg[G_BBIN], agg[G_BCAP], agg[G_HBIN],
                              agg[G_XBIN], agg[G_DIMH], agg[G_DIMX], agg[G_DIMY])
            v = q_update(q, visits, s, ai, r, s2, n - 1 == 0, hyper)
            if not math.isfinite(v):
                return ERR_NONFINITE
            s = s2
    return ERR_NONE


@jit
def greedy_table(q, out):
    for s in range(q.shape[0]):
        out[s] = greedy(q[s])


@jit
def natural_trace(b0, lam_cdf, lam_sf, caps, cum, mode, s_env, arrivals, served, backlog,
                  capacity):
    """Attack-free, defense-free hourly recursion; same draw order as env_step."""
    b = b0
    for t in range(arrivals.shape[0]):
        cap = hour_capacity(caps, cum, mode, s_env)
        a = poisson_draw(lam_cdf, lam_sf, s_env)
        total = b + a
        sv = cap if cap < total else total
        b = total - sv
        arrivals[t] = a
        served[t] = sv
        backlog[t] = b
        capacity[t] = cap
