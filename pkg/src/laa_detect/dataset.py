"""Labelled scenario days, feature sequences and dataset plumbing.

Every random draw comes from a generator seeded by
``SeedSequence([master_seed, purpose, day_index])`` so any day can be rebuilt
on its own, in any order or process, with identical results.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .attack import AttackConfig, inject_laa
from .errors import InputError, ParseError, ScenarioError, StratificationError
from .grid import NetworkModel
from .market import HOURS, Population, aggregate_schedules, hourly_power_flow, optimize_population, plan_day

SCHEMA_VERSION = 1
HISTORY_DAYS = 3

PURPOSE_WEATHER = 1
PURPOSE_PRICES = 2
PURPOSE_PLAN = 3
PURPOSE_ATTACK = 4
PURPOSE_LABELS = 5
PURPOSE_SPLIT = 6

STANDARD_TOTAL_DAYS = 1550
STANDARD_TEST_DAYS = 350


def day_rng(seed: int, purpose: int, day_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, day_index]))


# --- exogenous inputs ------------------------------------------------------------


def generate_weather(seed: int, day_index: int, noise_sigma: float = 0.5, ar_coef: float = 0.8) -> np.ndarray:
    """Winter outdoor temperature (degC) for 24 hours.

    Daily mean ~ U[-10, 5], a daily cosine swing of 3-5 degC with its minimum
    at 06:00, plus stationary AR(1) noise.
    """
    rng = day_rng(seed, PURPOSE_WEATHER, day_index)
    mean = rng.uniform(-10.0, 5.0)
    amplitude = rng.uniform(3.0, 5.0)
    hours = np.arange(HOURS)
    temp = mean - amplitude * np.cos(2 * np.pi * (hours - 6) / HOURS)
    shocks = rng.normal(0.0, 1.0, size=HOURS)
    noise = np.empty(HOURS)
    noise[0] = shocks[0] * noise_sigma / math.sqrt(1 - ar_coef**2)
    for t in range(1, HOURS):
        noise[t] = ar_coef * noise[t - 1] + noise_sigma * shocks[t]
    return temp + noise


PRICE_FLOOR, PRICE_CAP = 0.02, 0.12


def price_shape() -> np.ndarray:
    h = np.arange(HOURS)
    return (0.03 + 0.035 * np.exp(-0.5 * ((h - 8) / 1.5) ** 2)
            + 0.05 * np.exp(-0.5 * ((h - 18) / 2.0) ** 2)
            + 0.012 * ((h >= 7) & (h <= 21)))


def generate_prices(seed: int, day_index: int, noise: float = 0.06) -> np.ndarray:
    """Day-ahead price ($/kWh) with morning (08:00) and evening (18:00) peaks."""
    rng = day_rng(seed, PURPOSE_PRICES, day_index)
    level = rng.uniform(0.85, 1.15)
    prices = price_shape() * level * (1 + rng.normal(0.0, noise, size=HOURS))
    return np.clip(prices, PRICE_FLOOR, PRICE_CAP)


def ingest_prices(stream: TextIO) -> np.ndarray:
    """Read ``hour,price_usd_per_kwh`` with exactly 24 positive rows."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [c.strip() for c in header] != ["hour", "price_usd_per_kwh"]:
        raise ParseError("header must be hour,price_usd_per_kwh", 1)
    prices: dict[int, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", lineno)
        try:
            hour, price = int(row[0]), float(row[1])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not 0 <= hour < HOURS or hour in prices:
            raise ParseError(f"bad or repeated hour {hour}", lineno)
        if not price > 0 or not math.isfinite(price):
            raise ParseError(f"price must be positive, got {price}", lineno)
        prices[hour] = price
    if len(prices) != HOURS:
        raise ParseError(f"expected {HOURS} price rows, got {len(prices)}")
    return np.array([prices[h] for h in range(HOURS)])


# --- scenarios --------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    gamma: float = 0.1
    min_compromised: int = 1
    max_compromised: int = 2
    compromised: tuple[int, ...] | None = None
    weather_noise: float = 0.5
    noise_day: float = 0.01
    noise_hour: float = 0.01


@dataclass
class ScenarioDay:
    date_index: int
    outdoor_temp: np.ndarray
    prices: np.ndarray
    bus_load: np.ndarray
    feeder_flow: np.ndarray
    history_load: np.ndarray
    label: int
    compromised: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label}")


@dataclass
class CleanDay:
    outdoor_temp: np.ndarray
    prices: np.ndarray
    schedule: np.ndarray


@dataclass
class ScenarioBuilder:
    """Builds scenario days for one (network, population, master seed).

    Clean days are cached, so sequential generation simulates each calendar
    day once even though it appears in three later histories.
    """

    net: NetworkModel
    pop: Population
    seed: int
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    prices: np.ndarray | None = None
    _cache: dict[int, CleanDay] = field(default_factory=dict, repr=False)

    def clean_day(self, day_index: int) -> CleanDay:
        if day_index in self._cache:
            return self._cache[day_index]
        weather = generate_weather(self.seed, day_index, self.config.weather_noise)
        prices = self.prices if self.prices is not None else generate_prices(self.seed, day_index)
        plan = plan_day(self.pop, day_rng(self.seed, PURPOSE_PLAN, day_index),
                        self.config.noise_day, self.config.noise_hour)
        flex, _ = optimize_population(self.pop, plan, prices, weather)
        schedule = aggregate_schedules(flex, plan.base, self.pop.aggregators)
        day = CleanDay(weather, np.array(prices, dtype=float), schedule)
        if len(self._cache) > 64:
            self._cache.pop(min(self._cache))
        self._cache[day_index] = day
        return day

    def attack_config(self, day_index: int) -> AttackConfig:
        rng = day_rng(self.seed, PURPOSE_ATTACK, day_index)
        cfg = self.config
        if cfg.compromised is not None:
            chosen = tuple(sorted(cfg.compromised))
        else:
            ids = self.pop.aggregators.aggregator_ids
            count = int(rng.integers(cfg.min_compromised, cfg.max_compromised + 1))
            chosen = tuple(sorted(int(a) for a in rng.choice(ids, size=count, replace=False)))
        attack_seed = int(rng.integers(0, 2**63 - 1))
        return AttackConfig(frozenset(chosen), cfg.gamma, attack_seed)

    def build(self, day_index: int, attacked: bool) -> ScenarioDay:
        if day_index < HISTORY_DAYS:
            raise InputError(f"day index must be >= {HISTORY_DAYS} to have a history")
        try:
            today = self.clean_day(day_index)
            schedule = today.schedule
            compromised: tuple[int, ...] = ()
            if attacked:
                attack = self.attack_config(day_index)
                schedule = inject_laa(schedule, self.pop.aggregators, attack)
                compromised = tuple(sorted(attack.compromised_aggregators))
            flows = hourly_power_flow(self.net, schedule)
            bad = [h for h, r in enumerate(flows) if not r.converged]
            if bad:
                raise ScenarioError(f"power flow did not converge at hour {bad[0]}", self.seed, day_index)
            line = self.net.feeder_line
            feeder = np.array([r.line_real_flow[line] for r in flows])
            load_buses = self.net.load_buses
            history = np.stack([self.clean_day(day_index - k).schedule[load_buses].T
                                for k in range(HISTORY_DAYS, 0, -1)])
        except ScenarioError:
            raise
        except Exception as exc:
            raise ScenarioError(str(exc), self.seed, day_index) from exc
        return ScenarioDay(
            date_index=day_index,
            outdoor_temp=today.outdoor_temp.copy(),
            prices=today.prices.copy(),
            bus_load=schedule[load_buses].T.copy(),
            feeder_flow=feeder,
            history_load=history,
            label=int(attacked),
            compromised=compromised,
            seed=self.seed,
        )


def build_scenario(seed: int, day_index: int, attacked: bool, net: NetworkModel, pop: Population,
                   config: ScenarioConfig | None = None) -> ScenarioDay:
    return ScenarioBuilder(net, pop, seed, config or ScenarioConfig()).build(day_index, attacked)


def assign_labels(seed: int, count: int) -> np.ndarray:
    """Exactly ``count // 2`` attacked days, placed by a seeded permutation."""
    labels = np.zeros(count, dtype=int)
    perm = day_rng(seed, PURPOSE_LABELS, 0).permutation(count)
    labels[perm[: count // 2]] = 1
    return labels


def day_index_for(position: int) -> int:
    return HISTORY_DAYS + position


# --- features -------------------------------------------------------------------------


def feature_columns(load_buses: Sequence[int] = range(1, 33)) -> list[str]:
    cols = ["outdoor_temp", "price"]
    cols += [f"load_bus{b}" for b in load_buses]
    cols += [f"hist_mean_bus{b}" for b in load_buses]
    cols += ["feeder_flow"]
    return cols


FEATURE_COLUMNS = feature_columns()
FEATURE_COUNT = len(FEATURE_COLUMNS)


def layout_hash(columns: Sequence[str] = FEATURE_COLUMNS) -> str:
    return hashlib.sha256(",".join(columns).encode()).hexdigest()[:16]


def extract_features(day: ScenarioDay) -> np.ndarray:
    """Raw 24 x 67 matrix in ``FEATURE_COLUMNS`` order."""
    return np.column_stack([
        day.outdoor_temp,
        day.prices,
        day.bus_load,
        day.history_load.mean(axis=0),
        day.feeder_flow,
    ])


@dataclass
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(np.array(data["min"], dtype=float), np.array(data["max"], dtype=float))


def fit_normalizer(train) -> NormalizationStats:
    """Per-feature min and max over every hour of every training sequence."""
    seqs = [np.asarray(s, dtype=float) for s in train]
    if not seqs:
        raise InputError("cannot fit a normalizer on an empty training set")
    stacked = np.concatenate(seqs, axis=0)
    return NormalizationStats(stacked.min(axis=0), stacked.max(axis=0))


def apply_normalizer(stats: NormalizationStats, seq) -> np.ndarray:
    """Min-max scale; constant features map to 0.0 and nothing is clipped."""
    seq = np.asarray(seq, dtype=float)
    span = stats.maximum - stats.minimum
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (seq - stats.minimum) / safe, 0.0)


# --- splits -------------------------------------------------------------------------


def default_test_count(total: int) -> int:
    if total == STANDARD_TOTAL_DAYS:
        return STANDARD_TEST_DAYS
    return int(math.floor(0.3 * total))


def split_indices(labels: Sequence[int], seed: int, test_count: int | None = None,
                  stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified, seeded split into (train+val, test) index arrays.

    ``stream`` selects an independent shuffle, e.g. 1 for carving a
    validation set out of the training part.
    """
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    if n < 10:
        raise StratificationError(f"need at least 10 days to split, got {n}")
    classes = {k: np.flatnonzero(labels == k) for k in (0, 1)}
    if min(len(v) for v in classes.values()) < 2:
        raise StratificationError("each label needs at least 2 days")
    n_test = default_test_count(n) if test_count is None else int(test_count)
    if not 2 <= n_test <= n - 2:
        raise StratificationError(f"test size {n_test} leaves no room for both parts")

    quota = {k: n_test * len(v) / n for k, v in classes.items()}
    take = {k: int(math.floor(q)) for k, q in quota.items()}
    # Hand leftover slots to the classes with the largest remainders.
    for k in sorted(quota, key=lambda k: (take[k] - quota[k], k))[: n_test - sum(take.values())]:
        take[k] += 1
    for k, v in classes.items():
        take[k] = min(max(take[k], 1), len(v) - 1)

    rng = day_rng(seed, PURPOSE_SPLIT, stream)
    test, train = [], []
    for k in (0, 1):
        members = rng.permutation(classes[k])
        test.append(members[: take[k]])
        train.append(members[take[k]:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_dataset(days: Sequence[ScenarioDay], seed: int, test_count: int | None = None):
    train_idx, test_idx = split_indices([d.label for d in days], seed, test_count)
    return [days[i] for i in train_idx], [days[i] for i in test_idx]


# --- persistence ----------------------------------------------------------------------


def scenario_to_dict(day: ScenarioDay) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "seed": day.seed,
        "date_index": day.date_index,
        "label": day.label,
        "compromised": list(day.compromised),
        "outdoor_temp": day.outdoor_temp.tolist(),
        "prices": day.prices.tolist(),
        "bus_load": day.bus_load.tolist(),
        "feeder_flow": day.feeder_flow.tolist(),
        "history_load": day.history_load.tolist(),
    }


def scenario_from_dict(data: dict) -> ScenarioDay:
    if not isinstance(data, dict) or data.get("schema") != SCHEMA_VERSION:
        raise ParseError(f"scenario must be a schema {SCHEMA_VERSION} object")
    try:
        day = ScenarioDay(
            date_index=int(data["date_index"]),
            outdoor_temp=np.array(data["outdoor_temp"], dtype=float),
            prices=np.array(data["prices"], dtype=float),
            bus_load=np.array(data["bus_load"], dtype=float),
            feeder_flow=np.array(data["feeder_flow"], dtype=float),
            history_load=np.array(data["history_load"], dtype=float),
            label=int(data["label"]),
            compromised=tuple(int(a) for a in data.get("compromised", [])),
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid scenario: {exc}") from None
    n_bus = day.bus_load.shape[1] if day.bus_load.ndim == 2 else -1
    shapes_ok = (
        day.outdoor_temp.shape == (HOURS,)
        and day.prices.shape == (HOURS,)
        and day.feeder_flow.shape == (HOURS,)
        and day.bus_load.shape == (HOURS, n_bus)
        and day.history_load.shape == (HISTORY_DAYS, HOURS, n_bus)
    )
    if not shapes_ok:
        raise ParseError("scenario arrays have inconsistent shapes")
    return day


def dumps_scenario(day: ScenarioDay) -> str:
    return json.dumps(scenario_to_dict(day), separators=(",", ":"))


def save_scenario(day: ScenarioDay, path: Path):
    Path(path).write_text(dumps_scenario(day) + "\n", encoding="utf-8")


def load_scenario(path: Path) -> ScenarioDay:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None
    return scenario_from_dict(data)


def dumps_features(matrix: np.ndarray) -> str:
    """CSV text of a feature matrix with a header row; floats in round-trip form."""
    lines = [",".join(FEATURE_COLUMNS)]
    lines += [",".join(repr(float(v)) for v in row) for row in np.asarray(matrix)]
    return "\n".join(lines) + "\n"


def loads_features(text: str) -> np.ndarray:
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != FEATURE_COLUMNS:
        raise ParseError("feature header does not match the current layout", 1)
    try:
        return np.array([[float(v) for v in row] for row in rows[1:]])
    except ValueError as exc:
        raise ParseError(str(exc)) from None


MANIFEST_HEADER = ["file", "label", "split"]


def write_manifest(rows: Sequence[tuple[str, int, str]], path: Path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


def read_manifest(path: Path) -> list[tuple[str, int, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != MANIFEST_HEADER:
            raise ParseError("manifest header must be file,label,split", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 or row[2] not in ("train", "test") or row[1] not in ("0", "1"):
                raise ParseError(f"bad manifest row {row!r}", lineno)
            rows.append((row[0], int(row[1]), row[2]))
    return rows


def peak_day(pop: Population, seed: int, prices=None):
    """Deterministic coldest-case day: noise-free base loads at full level.

    Returns (outdoor_temp, prices, DayPlan). With the bundled network this day
    congests line 0-1 at hour 12 only.
    """
    hours = np.arange(HOURS)
    weather = -10.0 - 4.0 * np.cos(2 * np.pi * (hours - 6) / HOURS)
    prices = price_shape() if prices is None else np.asarray(prices, dtype=float)
    plan = plan_day(pop, day_rng(seed, PURPOSE_PLAN, 0), noise_day=0.0, noise_hour=0.0)
    return weather, prices, plan
