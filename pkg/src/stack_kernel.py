"""
Compiled Gillespie loop for finite MADM configurations.

The lattice is a window of sites held in an int64 occupancy array. A site with
c particles carries 2c clocks; their summed rate is read from the prefix tables
cum_right[c] + cum_left[c], so no per-event rebuild of the rate list is needed.
"""
import logging

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_RUNAWAY = 2

# full recomputation of the running total to bound float drift
_RESUM_EVERY = 1024


def prefix_rates(rates):
    """Prefix table [0, r_1, r_1 + r_2, ...] for a rate array r_1..r_N."""
    out = np.zeros(len(rates) + 1)
    np.cumsum(rates, out=out[1:])
    return out


@njit(cache=True)
def _site_rate(c, cum_right, cum_left):
    return cum_right[c] + cum_left[c]


@njit(cache=True)
def _total_rate(occ, lo, hi, cum_right, cum_left):
    total = 0.0
    for i in range(lo, hi + 1):
        if occ[i] > 0:
            total += _site_rate(occ[i], cum_right, cum_left)
    return total


@njit
def run_stack(occ, cum_right, cum_left, t_end, rng, event_guard):
    """
    Advance ``occ`` in place to time ``t_end``.

    Args:
        occ: int64 occupancy window, mutated
        cum_right: prefix table of R_n, length >= max count + 1
        cum_left: prefix table of L_n, same length
        t_end: physical time horizon
        rng: numpy Generator
        event_guard: abort after this many events

    Returns:
        (status, events)
    """
    width = occ.shape[0]
    lo = width
    hi = -1
    for i in range(width):
        if occ[i] > 0:
            if i < lo:
                lo = i
            hi = i
    if hi < 0:
        return STATUS_OK, 0

    total = _total_rate(occ, lo, hi, cum_right, cum_left)
    t = 0.0
    events = 0
    while total > 0.0:
        t += -np.log(1.0 - rng.random()) / total
        if t > t_end:
            break
        events += 1
        if events > event_guard:
            return STATUS_RUNAWAY, events

        target = rng.random() * total
        acc = 0.0
        site = -1
        for i in range(lo, hi + 1):
            c = occ[i]
            if c == 0:
                continue
            site = i
            r = _site_rate(c, cum_right, cum_left)
            if acc + r > target:
                break
            acc += r
        c = occ[site]
        rem = target - acc
        if rem < cum_right[c]:
            step = 1
            n = np.searchsorted(cum_right[1:c + 1], rem, side="right") + 1
        else:
            step = -1
            n = np.searchsorted(cum_left[1:c + 1], rem - cum_right[c], side="right") + 1
        if n > c:
            n = c

        dest = site + step
        if dest < 0 or dest >= width:
            return STATUS_OVERFLOW, events

        total -= _site_rate(c, cum_right, cum_left)
        if occ[dest] > 0:
            total -= _site_rate(occ[dest], cum_right, cum_left)
        occ[site] = c - n
        occ[dest] += n
        if occ[site] > 0:
            total += _site_rate(occ[site], cum_right, cum_left)
        total += _site_rate(occ[dest], cum_right, cum_left)

        if dest < lo:
            lo = dest
        if dest > hi:
            hi = dest
        while occ[lo] == 0:
            lo += 1
        while occ[hi] == 0:
            hi -= 1

        if events % _RESUM_EVERY == 0:
            total = _total_rate(occ, lo, hi, cum_right, cum_left)
    return STATUS_OK, events
