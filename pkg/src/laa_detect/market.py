"""Consumer flexibility, aggregation and the DSO congestion-tariff loop.

Consumers own one EV and one heat pump (residential) or are a fast-charging
parking lot (commercial buses 23 and 24). Each consumer schedules its
flexible load greedily against the hourly price, the aggregators sum
customer loads per bus, and the DSO raises an hourly tariff at congested
hours until the feeder is relieved.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence, TextIO

import numpy as np

from .errors import ConfigError, InputError, LoopError, MappingError, ParseError
from .grid import NetworkModel, PowerFlowResult, congested_hours, solve_power_flow_batch

if TYPE_CHECKING:
    from .attack import AttackConfig

HOURS = 24

# Base-load shape, peak 1.0 at hour 12 with a second (evening) peak at 18.
BASE_PROFILE = np.array([
    0.50, 0.46, 0.44, 0.43, 0.44, 0.50, 0.62, 0.75, 0.85, 0.92, 0.975, 0.985,
    1.00, 0.96, 0.90, 0.86, 0.88, 0.93, 0.95, 0.93, 0.87, 0.78, 0.67, 0.57,
])

COMMERCIAL_BUSES = (23, 24)

# Default bus ownership; aggregators 6 and 7 are the commercial lots.
DEFAULT_AGGREGATOR_BUSES = {
    1: (1, 2, 3, 4, 5),
    2: (6, 7),
    3: (8, 9, 10, 11, 12, 13),
    4: (14, 15, 16, 17, 18, 19),
    5: (20, 21, 22, 25, 26),
    6: (23,),
    7: (24,),
    8: (27, 28, 29),
    9: (30, 31, 32),
}

RESIDENTIAL_KW_PER_CUSTOMER = 40.0
LOT_SESSIONS_PER_DAY = 4

# Heat pump sized so 3 kW holds 21 degC indoors at -5 degC outdoors.
HP_REFERENCE = (3.0, 21.0, -5.0)


@dataclass(frozen=True)
class AssetSpec:
    ev_capacity: float = 36.0
    ev_max_power: float = 11.0
    ev_efficiency: float = 0.9
    hp_cop: float = 3.0
    hp_thermal_inertia: float = 0.9
    hp_max_power: float = 5.0

    def __post_init__(self):
        if min(self.ev_capacity, self.ev_max_power, self.ev_efficiency, self.hp_cop) <= 0:
            raise ConfigError("asset parameters must be positive")
        if self.hp_max_power < 0:
            raise ConfigError("hp_max_power must be non-negative (0 = no heat pump)")
        if self.ev_efficiency > 1:
            raise ConfigError("ev_efficiency must be <= 1")
        if not 0 < self.hp_thermal_inertia < 1:
            raise ConfigError("hp_thermal_inertia must lie in (0, 1)")

    @property
    def hp_gain(self) -> float:
        """Steady-state indoor rise per kW of thermal output (degC/kW)."""
        power, indoor, outdoor = HP_REFERENCE
        return (indoor - outdoor) / (self.hp_cop * power)


RESIDENTIAL_ASSETS = AssetSpec()
LOT_ASSETS = AssetSpec(ev_max_power=50.0, hp_max_power=0.0)


@dataclass(frozen=True)
class ConsumerPrefs:
    temp_low: float
    temp_high: float
    initial_soc: float
    target_soc: float
    ev_arrival: int
    ev_departure: int
    initial_indoor: float | None = None

    def __post_init__(self):
        if not self.temp_low < self.temp_high:
            raise InputError("temp_low must be below temp_high")
        if not (0 <= self.ev_arrival < HOURS and 0 < self.ev_departure <= HOURS):
            raise InputError("EV hours must lie within the day")
        if self.ev_arrival >= self.ev_departure:
            raise InputError("EV arrival must precede departure")


@dataclass
class FlexibleLoad:
    ev_kw: np.ndarray
    hp_kw: np.ndarray
    soc: np.ndarray
    indoor_temp: np.ndarray
    feasible: bool

    @property
    def total(self) -> np.ndarray:
        return self.ev_kw + self.hp_kw


def _order_by_price(price: np.ndarray, hours) -> list[int]:
    return sorted(hours, key=lambda h: (price[h], h))


def schedule_ev(prefs: ConsumerPrefs, assets: AssetSpec, price: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Fill the cheapest hours of the plug-in window until the target SOC is met."""
    power = np.zeros(HOURS)
    needed = max(prefs.target_soc - prefs.initial_soc, 0.0) / 100.0 * assets.ev_capacity / assets.ev_efficiency
    remaining = needed
    for h in _order_by_price(price, range(prefs.ev_arrival, prefs.ev_departure)):
        if remaining <= 0:
            break
        power[h] = min(assets.ev_max_power, remaining)
        remaining -= power[h]
    feasible = remaining <= 1e-9
    soc = prefs.initial_soc + np.concatenate(
        ([0.0], np.cumsum(100.0 * assets.ev_efficiency * power / assets.ev_capacity))
    )
    return power, soc, feasible


def _thermal_matrix(assets: AssetSpec) -> np.ndarray:
    """Response of indoor temperature at t=1..24 to 1 kW at hour s."""
    a = assets.hp_thermal_inertia
    gain = (1 - a) * assets.hp_gain * assets.hp_cop
    t = np.arange(1, HOURS + 1)[:, None]
    s = np.arange(HOURS)[None, :]
    lag = t - 1 - s
    return np.where(lag >= 0, gain * a ** np.maximum(lag, 0), 0.0)


def _free_response(assets: AssetSpec, start: float, outdoor: np.ndarray) -> np.ndarray:
    a = assets.hp_thermal_inertia
    temps = np.empty(HOURS + 1)
    temps[0] = start
    for t in range(HOURS):
        temps[t + 1] = a * temps[t] + (1 - a) * outdoor[t]
    return temps


def schedule_heat_pump(
    prefs: ConsumerPrefs, assets: AssetSpec, price: np.ndarray, outdoor: np.ndarray
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Heat at the cheapest admissible hours whenever the comfort band would be left.

    Walks forward to the first hour ``u`` that falls below ``temp_low`` and
    adds just enough heat at the earlier hour with the lowest cost per degree
    delivered at ``u`` (price divided by the thermal decay since then), among
    hours with spare capacity whose heat would not push any later hour above
    ``temp_high``. Ties go to the earlier hour.
    """
    power = np.zeros(HOURS)
    start = prefs.initial_indoor
    if start is None:
        start = 0.5 * (prefs.temp_low + prefs.temp_high)
    free = _free_response(assets, start, outdoor)
    if assets.hp_max_power == 0:
        return power, free, True

    response = _thermal_matrix(assets)
    a = assets.hp_thermal_inertia
    feasible = True
    skipped: set[int] = set()
    temps = free.copy()
    tol = 1e-9
    while True:
        below = [u for u in np.flatnonzero(temps[1:] < prefs.temp_low - tol) + 1 if u not in skipped]
        if not below:
            break
        u = int(below[0])
        deficit = prefs.temp_low - temps[u]
        placed = False
        # Cheapest per degree delivered at hour u; heat decays by `a` each hour.
        order = sorted(range(u), key=lambda s: (price[s] * a ** (s + 1 - u), s))
        for s in order:
            if power[s] >= assets.hp_max_power - tol:
                continue
            effect = response[:, s]
            later = slice(s, HOURS)
            room = (prefs.temp_high - temps[1:][later]) / effect[later]
            delta = min(assets.hp_max_power - power[s], deficit / effect[u - 1], float(room.min()))
            if delta <= tol:
                continue
            power[s] += delta
            temps[1:] = free[1:] + response @ power
            placed = True
            break
        if not placed:
            feasible = False
            skipped.add(u)
    if np.any(temps[1:] > prefs.temp_high + 1e-6):
        feasible = False
    return power, temps, feasible


def optimize_consumer(
    prefs: ConsumerPrefs, assets: AssetSpec, effective_price, outdoor_temp
) -> FlexibleLoad:
    """Greedy cost-minimising schedule for one EV plus (optionally) one heat pump."""
    price = np.asarray(effective_price, dtype=float)
    outdoor = np.asarray(outdoor_temp, dtype=float)
    if price.shape != (HOURS,) or outdoor.shape != (HOURS,):
        raise InputError("price and temperature must be 24-hour vectors")
    if np.any(price <= 0):
        raise InputError("prices must be positive")
    ev, soc, ev_ok = schedule_ev(prefs, assets, price)
    hp, temps, hp_ok = schedule_heat_pump(prefs, assets, price, outdoor)
    return FlexibleLoad(ev, hp, soc, temps, ev_ok and hp_ok)


# --- population and aggregation ---------------------------------------------


@dataclass
class AggregatorMap:
    """Which customers sit at which bus, grouped by aggregator.

    ``members[a]`` lists ``(bus, customer)`` pairs; customers are numbered
    0..n-1 across the whole map.
    """

    bus_count: int
    members: dict[int, list[tuple[int, int]]]
    customer_bus: np.ndarray = field(init=False, repr=False)
    customer_aggregator: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pairs = [(a, b, c) for a, mem in self.members.items() for b, c in mem]
        n = len(pairs)
        bus = np.full(n, -1)
        agg = np.full(n, -1)
        for a, b, c in pairs:
            if not 0 <= c < n or bus[c] >= 0:
                raise MappingError(f"customer {c} missing, duplicated or out of range")
            if not 0 <= b < self.bus_count:
                raise MappingError(f"customer {c} mapped to unknown bus {b}")
            bus[c], agg[c] = b, a
        self.customer_bus = bus
        self.customer_aggregator = agg

    @property
    def customer_count(self) -> int:
        return len(self.customer_bus)

    @property
    def aggregator_ids(self) -> list[int]:
        return sorted(self.members)

    def buses_of(self, aggregator: int) -> list[int]:
        if aggregator not in self.members:
            raise MappingError(f"unknown aggregator {aggregator}")
        return sorted({b for b, _ in self.members[aggregator]})

    def mapping_matrix(self) -> np.ndarray:
        """Customer-to-bus incidence matrix (bus x customer)."""
        e = np.zeros((self.bus_count, self.customer_count))
        e[self.customer_bus, np.arange(self.customer_count)] = 1.0
        return e

    def check_coverage(self, net: NetworkModel):
        owner: dict[int, int] = {}
        for a in self.aggregator_ids:
            for b in self.buses_of(a):
                if b in owner and owner[b] != a:
                    raise MappingError(f"bus {b} owned by aggregators {owner[b]} and {a}")
                owner[b] = a
        missing = [b for b in net.load_buses if b not in owner]
        if missing:
            raise MappingError(f"load buses without an aggregator: {missing}")


def aggregate_schedules(flexible, base, amap: AggregatorMap) -> np.ndarray:
    """Per-bus load schedule (bus x hour) as the sum of each bus's customers."""
    flexible = np.asarray(flexible, dtype=float)
    base = np.asarray(base, dtype=float)
    shape = (amap.customer_count, HOURS)
    if flexible.shape != shape or base.shape != shape:
        raise MappingError(f"customer loads must have shape {shape}")
    schedule = np.zeros((amap.bus_count, HOURS))
    # Accumulate in customer order so the sum is reproducible.
    np.add.at(schedule, amap.customer_bus, base + flexible)
    return schedule


@dataclass(frozen=True)
class Customer:
    customer_id: int
    bus: int
    aggregator: int
    kind: str
    temp_low: float
    temp_high: float
    peak_base_kw: float

    @property
    def assets(self) -> AssetSpec:
        return LOT_ASSETS if self.kind == "lot" else RESIDENTIAL_ASSETS


@dataclass
class Population:
    customers: list[Customer]
    aggregators: AggregatorMap

    @property
    def peak_base(self) -> np.ndarray:
        return np.array([c.peak_base_kw for c in self.customers])


def build_population(net: NetworkModel, seed: int,
                     aggregator_buses: dict[int, Sequence[int]] | None = None) -> Population:
    """Residential customers per bus in proportion to default load; one lot per commercial bus."""
    aggregator_buses = aggregator_buses or DEFAULT_AGGREGATOR_BUSES
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    customers: list[Customer] = []
    members: dict[int, list[tuple[int, int]]] = {a: [] for a in aggregator_buses}
    for a in sorted(aggregator_buses):
        for bus in aggregator_buses[a]:
            peak = float(net.default_p_kw[bus])
            if bus in COMMERCIAL_BUSES:
                counts, kind = 1, "lot"
            else:
                counts, kind = max(1, round(peak / RESIDENTIAL_KW_PER_CUSTOMER)), "residential"
            for _ in range(counts):
                low = float(rng.uniform(18.0, 21.0))
                high = float(rng.uniform(max(low + 1.0, 21.0), 24.0))
                cid = len(customers)
                customers.append(Customer(cid, bus, a, kind, low, high, peak / counts))
                members[a].append((bus, cid))
    amap = AggregatorMap(net.bus_count, members)
    amap.check_coverage(net)
    return Population(customers, amap)


ROSTER_HEADER = ["customer", "bus", "aggregator", "kind", "temp_low", "temp_high", "peak_base_kw"]


def dump_roster(pop: Population, stream: TextIO):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(ROSTER_HEADER)
    for c in pop.customers:
        writer.writerow([c.customer_id, c.bus, c.aggregator, c.kind, repr(c.temp_low), repr(c.temp_high),
                         repr(c.peak_base_kw)])


def load_roster(stream: TextIO, bus_count: int) -> Population:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != ROSTER_HEADER:
        raise ParseError(f"roster header must be {','.join(ROSTER_HEADER)}", 1)
    customers = []
    members: dict[int, list[tuple[int, int]]] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            c = Customer(int(row[0]), int(row[1]), int(row[2]), row[3], float(row[4]), float(row[5]), float(row[6]))
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), lineno) from None
        customers.append(c)
        members.setdefault(c.aggregator, []).append((c.bus, c.customer_id))
    return Population(customers, AggregatorMap(bus_count, members))


# --- per-day inputs -------------------------------------------------------------


@dataclass
class DayPlan:
    """Everything consumers need for one day: base loads and EV/comfort preferences.

    ``sessions[c]`` holds one preference record per EV visit of customer ``c``
    (one for a household, several for a parking lot).
    """

    base: np.ndarray
    sessions: list[list[ConsumerPrefs]]


def plan_day(pop: Population, rng: np.random.Generator,
             noise_day: float = 0.01, noise_hour: float = 0.01) -> DayPlan:
    """Draw base loads and EV sessions for one day.

    Base load is the non-heating demand, so it carries no weather term;
    temperature acts through the heat pumps alone.
    """
    n = len(pop.customers)
    eps_day = rng.normal(0.0, noise_day, size=(n, 1))
    eps_hour = rng.normal(0.0, noise_hour, size=(n, HOURS))
    base = pop.peak_base[:, None] * BASE_PROFILE[None, :] * (1 + eps_day) * (1 + eps_hour)
    base = np.maximum(base, 0.0)

    sessions = []
    for c in pop.customers:
        if c.kind == "lot":
            visits = []
            for _ in range(LOT_SESSIONS_PER_DAY):
                arrival = int(rng.integers(8, 13))
                stay = int(rng.integers(2, 7))
                visits.append(ConsumerPrefs(c.temp_low, c.temp_high, float(rng.uniform(20, 30)), 80.0,
                                            arrival, min(arrival + stay, HOURS)))
            sessions.append(visits)
        else:
            departure = int(rng.integers(6, 10))
            sessions.append([ConsumerPrefs(c.temp_low, c.temp_high, float(rng.uniform(20, 30)), 90.0,
                                           0, departure)])
    return DayPlan(base, sessions)


def optimize_population(pop: Population, plan: DayPlan, price, outdoor_temp) -> tuple[np.ndarray, np.ndarray]:
    """Flexible load (customer x hour) and per-customer feasibility flags."""
    price = np.asarray(price, dtype=float)
    outdoor = np.asarray(outdoor_temp, dtype=float)
    flex = np.zeros((len(pop.customers), HOURS))
    ok = np.ones(len(pop.customers), dtype=bool)
    for c, visits in zip(pop.customers, plan.sessions):
        assets = c.assets
        if c.kind == "lot":
            for prefs in visits:
                ev, _, ev_ok = schedule_ev(prefs, assets, price)
                flex[c.customer_id] += ev
                ok[c.customer_id] &= ev_ok
        else:
            result = optimize_consumer(visits[0], assets, price, outdoor)
            flex[c.customer_id] = result.total
            ok[c.customer_id] = result.feasible
    return flex, ok


def reactive_load(net: NetworkModel, load_kw: np.ndarray) -> np.ndarray:
    """kVAr at each bus, keeping the default per-bus Q/P ratio."""
    p = net.default_p_kw
    ratio = np.divide(net.default_q_kvar, p, out=np.zeros_like(p), where=p > 0)
    return np.asarray(load_kw) * ratio[:, None]


def hourly_power_flow(net: NetworkModel, schedule: np.ndarray) -> list[PowerFlowResult]:
    """One power flow per hour of a bus x hour schedule."""
    return solve_power_flow_batch(net, schedule, reactive_load(net, schedule))


# --- DSO tariff loop ---------------------------------------------------------------


@dataclass
class TariffOutcome:
    tariff: np.ndarray
    base_price: np.ndarray
    schedule: np.ndarray
    flows: list[PowerFlowResult]
    resolved: bool
    rounds: int
    congested_per_round: list[set[tuple[int, int]]]
    hour_load_per_round: list[np.ndarray]

    @property
    def price(self) -> np.ndarray:
        return self.base_price + self.tariff

    @property
    def ever_congested_hours(self) -> set[int]:
        return {h for rnd in self.congested_per_round for h, _ in rnd}


def dso_tariff_loop(
    net: NetworkModel,
    pop: Population,
    plan: DayPlan,
    prices,
    weather,
    step: float = 0.005,
    max_rounds: int = 20,
    attack: "AttackConfig | None" = None,
) -> TariffOutcome:
    """Raise the tariff by ``step`` at every congested hour until the feeder is clear.

    Each round the consumers re-optimise against price plus tariff, the
    aggregated schedules (altered by ``attack`` when given, as the DSO would
    receive them) are run through 24 power flows, and congested hours get
    another tariff increment.
    """
    from .attack import inject_laa

    if not step > 0:
        raise ConfigError("tariff step must be positive")
    if max_rounds < 1:
        raise ConfigError("max_rounds must be at least 1")
    base_price = np.asarray(prices, dtype=float)
    tariff = np.zeros(HOURS)
    history: list[set[tuple[int, int]]] = []
    loads: list[np.ndarray] = []
    resolved = False
    for rnd in range(1, max_rounds + 1):
        flex, _ = optimize_population(pop, plan, base_price + tariff, weather)
        schedule = aggregate_schedules(flex, plan.base, pop.aggregators)
        if attack is not None:
            schedule = inject_laa(schedule, pop.aggregators, attack)
        flows = hourly_power_flow(net, schedule)
        for h, res in enumerate(flows):
            if not res.converged:
                raise LoopError("power flow did not converge", h)
        congested = congested_hours(np.array([r.line_flow for r in flows]), net)
        history.append(congested)
        loads.append(schedule.sum(axis=0))
        if not congested:
            resolved = True
            break
        if rnd == max_rounds:
            break
        for h in sorted({h for h, _ in congested}):
            tariff[h] += step
    return TariffOutcome(tariff, base_price, schedule, flows, resolved, rnd, history, loads)
