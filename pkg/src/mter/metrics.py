"""Steady-state system metrics.

All rates are per hour of steady-state operation: revenue from accepted
orders priced at the origin-destination fare, operating cost accrued by
every circulating vehicle in both statuses (tolls included), and their
difference as the platform-plus-drivers profit rate. Fulfillment, the
vacant-to-hired ratio and the mass-weighted average speed summarize service
quality; toll revenue supports pricing comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network


@dataclass(frozen=True)
class MetricsBundle:
    revenue_rate: float
    cost_rate: float
    profit_rate: float
    fulfillment: float          # matched-and-accepted orders over arrivals
    fulfillment_matched: float  # matched orders over arrivals
    fulfillment_defined: bool   # False when there are no arrivals at all
    vacant_hired_ratio: float   # inf when no hired mass
    avg_speed: float            # km/h, mass-weighted
    toll_revenue_rate: float
    total_mass: float

    def to_dict(self) -> dict:
        return {
            "revenue_rate": self.revenue_rate,
            "cost_rate": self.cost_rate,
            "profit_rate": self.profit_rate,
            "fulfillment": self.fulfillment,
            "fulfillment_matched": self.fulfillment_matched,
            "fulfillment_defined": self.fulfillment_defined,
            "vacant_hired_ratio": self.vacant_hired_ratio,
            "avg_speed": self.avg_speed,
            "toll_revenue_rate": self.toll_revenue_rate,
            "total_mass": self.total_mass,
        }


def compute_metrics(masses, env, policies, demand, network: Network,
                    cost_empty: float = 6.0, cost_hired: float = 6.0) -> MetricsBundle:
    """Evaluate the metric bundle at a frozen steady state."""
    x = masses.x
    y = masses.y
    u = x + y.sum(axis=1)
    f = env.f
    m = env.m
    heads = network.head

    xi = np.where(np.isnan(policies.xi), 0.0, policies.xi)
    fares = demand.fares
    if fares is None:
        fares = np.zeros_like(demand.probs)
    # per-link rate of accepted orders weighted by fare at the head node
    accept_fare = np.einsum("jk,jk,jk->j", demand.probs, xi, fares)
    accept_prob = np.einsum("jk,jk->j", demand.probs, xi)
    revenue = float(np.sum(f * m * accept_fare[heads]))

    traversal_rate = np.divide(u, env.t, out=np.zeros_like(u), where=env.t > 0)
    toll_revenue = float(np.sum(traversal_rate * network.toll))
    cost = float(cost_empty * x.sum() + cost_hired * y.sum() + toll_revenue)

    lam_total = float(network.lam.sum())
    if lam_total > 0:
        fulfillment = float(np.sum(f * m * accept_prob[heads]) / lam_total)
        fulfillment_matched = float(np.sum(f * m) / lam_total)
        defined = True
    else:
        fulfillment = fulfillment_matched = 1.0
        defined = False

    y_total = float(y.sum())
    ratio = float(x.sum() / y_total) if y_total > 0 else float("inf")

    u_total = float(u.sum())
    if u_total > 0:
        speed = float(np.sum(u * network.length / env.t) / u_total)
    else:
        speed = 0.0

    return MetricsBundle(
        revenue_rate=revenue,
        cost_rate=cost,
        profit_rate=revenue - cost,
        fulfillment=fulfillment,
        fulfillment_matched=fulfillment_matched,
        fulfillment_defined=defined,
        vacant_hired_ratio=ratio,
        avg_speed=speed,
        toll_revenue_rate=toll_revenue,
        total_mass=float(x.sum() + y_total),
    )
