"""Compiled inner loop for the micro-step dynamics.

These kernels must stay arithmetically identical to the reference step in
``opdyn.model`` (same expressions, same branch order, IEEE doubles, no
fastmath) so that compiled and reference trajectories agree bit for bit on
identical draw streams.
"""

import numba as nb

# run_chunk out-vector layout
OUT_STEPS = 0
OUT_ABSORBED = 1
OUT_MOVES = 2
OUT_FLIPS = 3
OUT_MIN_WP_SIZE = 4
OUT_LEN = 5


@nb.njit(cache=True)
def choose_target(wp_a, wp_size, opinion, current, u):
    """Destination workplace for a firing move, or -1 when none exists.

    Majority is strict and evaluated on the members present before the vertex
    joins; size-0 workplaces never hold a majority.  Falls back to a uniform
    choice among all other workplaces.
    """
    num_wp = wp_size.shape[0]
    count = 0
    for j in range(num_wp):
        if j == current:
            continue
        own = wp_a[j] if opinion == 1 else wp_size[j] - wp_a[j]
        if 2 * own > wp_size[j]:
            count += 1
    if count > 0:
        k = int(u * count)
        if k >= count:
            k = count - 1
        for j in range(num_wp):
            if j == current:
                continue
            own = wp_a[j] if opinion == 1 else wp_size[j] - wp_a[j]
            if 2 * own > wp_size[j]:
                if k == 0:
                    return j
                k -= 1
    count = num_wp - 1
    if count <= 0:
        return -1
    k = int(u * count)
    if k >= count:
        k = count - 1
    for j in range(num_wp):
        if j == current:
            continue
        if k == 0:
            return j
        k -= 1
    return -1


@nb.njit(cache=True)
def all_quiet(opinions, household_of, workplace_of, hh_a, wp_a, wp_size,
              household_size, q, r1, r2, lam):
    """Absorbing-state check: no vertex has a positive flip or move probability."""
    n = opinions.shape[0]
    num_wp = wp_size.shape[0]
    moves_possible = q > 0.0 and num_wp >= 2
    for v in range(n):
        o = opinions[v]
        ca_h = hh_a[household_of[v]]
        own_h = ca_h if o == 1 else household_size - ca_h
        wp = workplace_of[v]
        sz = wp_size[wp]
        ca_w = wp_a[wp]
        own_w = ca_w if o == 1 else sz - ca_w
        h = own_h / household_size
        w = own_w / sz
        a = (h + lam * w) / (1.0 + lam)
        if a < r1:
            return False
        if moves_possible and w < r2:
            return False
    return True


@nb.njit(cache=True)
def run_chunk(opinions, household_of, workplace_of, hh_a, wp_a, wp_size,
              household_size, beta, q, r1, r2, lam,
              vidx, u_flip, u_move, u_target,
              check_every, out):
    """Run len(vidx) micro-steps in place, consuming the pre-drawn streams.

    ``check_every > 0`` tests for absorption after every that many steps and
    returns early once absorbed (absorption is permanent, so coarse checking
    only affects the recorded step count).  ``out`` receives the executed step
    count, the absorbed flag, move/flip counters and the minimum workplace
    size seen (carried in from the caller in out[OUT_MIN_WP_SIZE]).
    """
    m = vidx.shape[0]
    moves = 0
    flips = 0
    min_sz = out[OUT_MIN_WP_SIZE]
    absorbed = False
    i = 0
    while i < m:
        v = vidx[i]
        o = opinions[v]
        hh = household_of[v]
        wp = workplace_of[v]
        ca_h = hh_a[hh]
        own_h = ca_h if o == 1 else household_size - ca_h
        sz = wp_size[wp]
        ca_w = wp_a[wp]
        own_w = ca_w if o == 1 else sz - ca_w
        h = own_h / household_size
        w = own_w / sz
        a = (h + lam * w) / (1.0 + lam)
        if a < r1 and u_flip[i] < beta * (r1 - a):
            delta = 1 if o == 0 else -1
            opinions[v] = 1 - o
            hh_a[hh] += delta
            wp_a[wp] += delta
            flips += 1
        elif w < r2 and u_move[i] < q * (r2 - w):
            target = choose_target(wp_a, wp_size, o, wp, u_target[i])
            if target >= 0:
                workplace_of[v] = target
                wp_size[wp] -= 1
                wp_size[target] += 1
                if o == 1:
                    wp_a[wp] -= 1
                    wp_a[target] += 1
                moves += 1
                if wp_size[wp] < min_sz:
                    min_sz = wp_size[wp]
        i += 1
        if check_every > 0 and i % check_every == 0:
            if all_quiet(opinions, household_of, workplace_of, hh_a, wp_a,
                         wp_size, household_size, q, r1, r2, lam):
                absorbed = True
                break
    out[OUT_STEPS] = i
    out[OUT_ABSORBED] = 1 if absorbed else 0
    out[OUT_MOVES] = moves
    out[OUT_FLIPS] = flips
    out[OUT_MIN_WP_SIZE] = min_sz
