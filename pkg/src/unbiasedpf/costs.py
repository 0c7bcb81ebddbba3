"""Deterministic cost accounting for randomized filter draws.

The cost unit is one Euler step of one particle. A level-0 draw with
sample-size index p over n observations runs n unit transitions for each of
N_p particles; a level-l draw (l >= 1) runs a coupled filter whose pairs
cost 2^l + 2^(l-1) steps per unit of time. These closed forms match what
CostCounter measures during a run, which the tests assert.
"""


def cost_of_draw(l, p, n, schedule):
    """Euler-step cost of one double-randomized draw at indices (l, p).

    Parameters
    ----------
    l : int
        Discretization level (0 means a plain filter, >= 1 a coupled one).
    p : int
        Sample-size index; the draw runs N_p = schedule.size(p) particles.
    n : int
        Number of observations.
    schedule : BatchSchedule
    """
    n_p = schedule.size(p)
    if l == 0:
        return n * n_p
    return n * n_p * ((1 << l) + (1 << (l - 1)))


def single_rand_draw_cost(l, n, schedule):
    """Euler-step cost of one level-only randomized draw at level l.

    For l = 0 this is one level-0 filter with N_0 particles. For l >= 1 it
    is an independent level-l filter with N_l - N_{l-1} particles plus a
    coupled filter with N_{l-1} pairs.
    """
    if l == 0:
        return n * schedule.size(0)
    extra = schedule.size(l) - schedule.size(l - 1)
    pairs = schedule.size(l - 1)
    return n * (extra * (1 << l) + pairs * ((1 << l) + (1 << (l - 1))))
