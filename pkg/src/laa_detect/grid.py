"""Radial feeder model and backward/forward sweep power flow.

Buses are numbered from 0 and bus 0 is the slack (substation). Loads are
kW / kVAr per bus; flows are reported at the sending end of each line.
"""
from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, TextIO

import numpy as np

from .errors import InputError, ParseError, TopologyError

LINE_HEADER = ["from", "to", "r_ohm", "x_ohm", "capacity_kva"]
BUS_HEADER = ["bus", "p_kw", "q_kvar"]

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class LineSpec:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    capacity: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise TopologyError(f"line {self.from_bus}-{self.to_bus} is a self-loop")
        if self.resistance < 0 or self.reactance < 0:
            raise InputError(f"line {self.from_bus}-{self.to_bus}: negative impedance")
        if not self.capacity > 0:
            raise InputError(f"line {self.from_bus}-{self.to_bus}: capacity must be positive")


@dataclass
class NetworkModel:
    """Radial network plus the default (peak) loading of every bus.

    Construction validates radiality and orients every line away from the
    slack bus, so ``upstream[k]`` / ``downstream[k]`` may differ from the
    ``from_bus`` / ``to_bus`` order given in the source file.
    """

    bus_count: int
    lines: list[LineSpec]
    default_p_kw: np.ndarray
    default_q_kvar: np.ndarray
    slack_bus: int = 0
    base_voltage: float = 12.66
    base_power: float = 1000.0

    upstream: np.ndarray = field(init=False, repr=False)
    downstream: np.ndarray = field(init=False, repr=False)
    order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.default_p_kw = np.asarray(self.default_p_kw, dtype=float)
        self.default_q_kvar = np.asarray(self.default_q_kvar, dtype=float)
        n = self.bus_count
        if self.default_p_kw.shape != (n,) or self.default_q_kvar.shape != (n,):
            raise InputError("default loading must have one entry per bus")
        if len(self.lines) != n - 1:
            raise TopologyError(f"{n} buses need exactly {n - 1} lines, got {len(self.lines)}")
        if not 0 <= self.slack_bus < n:
            raise TopologyError(f"slack bus {self.slack_bus} out of range")

        adjacency: list[list[int]] = [[] for _ in range(n)]
        seen_pairs = set()
        for k, line in enumerate(self.lines):
            for b in (line.from_bus, line.to_bus):
                if not 0 <= b < n:
                    raise TopologyError(f"line {line.from_bus}-{line.to_bus} references unknown bus {b}")
            pair = frozenset((line.from_bus, line.to_bus))
            if pair in seen_pairs:
                raise TopologyError(f"duplicate line {line.from_bus}-{line.to_bus}")
            seen_pairs.add(pair)
            adjacency[line.from_bus].append(k)
            adjacency[line.to_bus].append(k)

        up = np.full(n - 1, -1)
        down = np.full(n - 1, -1)
        order = []
        visited = np.zeros(n, dtype=bool)
        visited[self.slack_bus] = True
        queue = deque([self.slack_bus])
        while queue:
            bus = queue.popleft()
            for k in adjacency[bus]:
                if up[k] >= 0:
                    continue
                line = self.lines[k]
                other = line.to_bus if line.from_bus == bus else line.from_bus
                if visited[other]:
                    raise TopologyError(f"loop through line {line.from_bus}-{line.to_bus}")
                visited[other] = True
                up[k], down[k] = bus, other
                order.append(k)
                queue.append(other)
        if not visited.all():
            missing = np.flatnonzero(~visited).tolist()
            raise TopologyError(f"buses unreachable from slack: {missing}")

        self.upstream = up
        self.downstream = down
        self.order = np.asarray(order)

    @property
    def line_count(self) -> int:
        return len(self.lines)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([line.capacity for line in self.lines])

    @property
    def impedance_pu(self) -> np.ndarray:
        z_base = self.base_voltage**2 * 1000.0 / self.base_power
        return np.array([complex(l.resistance, l.reactance) for l in self.lines]) / z_base

    @property
    def load_buses(self) -> np.ndarray:
        return np.array([b for b in range(self.bus_count) if b != self.slack_bus])

    def line_index(self, a: int, b: int) -> int:
        for k, line in enumerate(self.lines):
            if {line.from_bus, line.to_bus} == {a, b}:
                return k
        raise KeyError(f"no line {a}-{b}")

    @property
    def feeder_line(self) -> int:
        """Index of the line leaving the slack bus (line 0-1 on the 33-bus feeder)."""
        roots = np.flatnonzero(self.upstream == self.slack_bus)
        return int(roots[0])


@dataclass
class PowerFlowResult:
    line_flow: np.ndarray
    line_real_flow: np.ndarray
    bus_voltage: np.ndarray
    total_loss: float
    slack_injection: float
    converged: bool
    iterations: int


def _records(stream: TextIO) -> Iterable[tuple[int, str]]:
    for lineno, raw in enumerate(stream, start=1):
        yield lineno, raw.strip()


def load_network(stream: TextIO) -> NetworkModel:
    """Parse a network file: a line table and a bus table, separated by a blank line.

    ``# key=value`` comment lines may set ``base_kv`` and ``base_kva``.
    """
    meta = {"base_kv": 12.66, "base_kva": 1000.0}
    section = None
    lines: list[LineSpec] = []
    buses: dict[int, tuple[float, float]] = {}

    for lineno, text in _records(stream):
        if not text:
            section = None
            continue
        if text.startswith("#"):
            body = text[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                key = key.strip()
                if key in meta:
                    try:
                        meta[key] = float(value)
                    except ValueError:
                        raise ParseError(f"bad value for {key}: {value!r}", lineno) from None
            continue
        row = [cell.strip() for cell in next(csv.reader([text]))]
        if row == LINE_HEADER:
            section = "lines"
            continue
        if row == BUS_HEADER:
            section = "buses"
            continue
        if section is None:
            raise ParseError(f"record outside a table: {text!r}", lineno)
        expected = len(LINE_HEADER) if section == "lines" else len(BUS_HEADER)
        if len(row) != expected:
            raise ParseError(f"expected {expected} fields, got {len(row)}", lineno)
        try:
            if section == "lines":
                spec = LineSpec(int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4]))
                lines.append(spec)
            else:
                bus = int(row[0])
                if bus in buses:
                    raise ParseError(f"bus {bus} listed twice", lineno)
                p, q = float(row[1]), float(row[2])
                if p < 0 or q < 0:
                    raise ParseError(f"negative default load at bus {bus}", lineno)
                buses[bus] = (p, q)
        except TopologyError:
            raise
        except ParseError:
            raise
        except (ValueError, InputError) as exc:
            raise ParseError(str(exc), lineno) from None

    if not buses:
        raise ParseError("missing bus table")
    n = len(buses)
    if sorted(buses) != list(range(n)):
        raise ParseError("bus table must list buses 0..n-1")
    p = np.array([buses[b][0] for b in range(n)])
    q = np.array([buses[b][1] for b in range(n)])
    return NetworkModel(n, lines, p, q, base_voltage=meta["base_kv"], base_power=meta["base_kva"])


def default_network() -> NetworkModel:
    """The bundled IEEE 33-bus feeder."""
    text = resources.files("laa_detect.data").joinpath("ieee33.csv").read_text(encoding="utf-8")
    return load_network(io.StringIO(text))


def _sweep(net: NetworkModel, s_load: np.ndarray, tol: float, max_iter: int):
    """Power-summation sweep over independent load cases (columns of ``s_load``).

    Columns that have converged are frozen so a case solved inside a batch
    matches the same case solved alone.
    """
    n_cases = s_load.shape[1]
    z = net.impedance_pu
    up, down = net.upstream, net.downstream
    order = net.order
    v = np.ones((net.bus_count, n_cases), dtype=complex)
    s_send = np.zeros((net.line_count, n_cases), dtype=complex)
    loss = np.zeros((net.line_count, n_cases), dtype=complex)
    iterations = np.zeros(n_cases, dtype=int)
    active = np.ones(n_cases, dtype=bool)

    for it in range(1, max_iter + 1):
        cols = np.flatnonzero(active)
        vs = v[:, cols]
        acc = s_load[:, cols].copy()
        current = np.zeros((net.line_count, len(cols)), dtype=complex)
        send = np.zeros_like(current)
        line_loss = np.zeros_like(current)
        for k in order[::-1]:
            s_recv = acc[down[k]]
            i_k = np.conj(s_recv / vs[down[k]])
            line_loss[k] = z[k] * (i_k.real**2 + i_k.imag**2)
            send[k] = s_recv + line_loss[k]
            current[k] = i_k
            acc[up[k]] += send[k]
        v_new = vs.copy()
        for k in order:
            v_new[down[k]] = v_new[up[k]] - z[k] * current[k]

        change = np.max(np.abs(v_new - vs), axis=0)
        v[:, cols] = v_new
        s_send[:, cols] = send
        loss[:, cols] = line_loss
        iterations[cols] = it
        done = change < tol
        active[cols[done]] = False
        if not active.any():
            break
    return v, s_send, loss, iterations, ~active


def _check_loads(net: NetworkModel, load_kw: np.ndarray, load_kvar: np.ndarray):
    if load_kw.shape[0] != net.bus_count or load_kvar.shape != load_kw.shape:
        raise InputError(f"loads must have {net.bus_count} rows (one per bus)")
    if np.any(load_kw < 0) or np.any(load_kvar < 0):
        raise InputError("loads must be non-negative")
    if not (np.all(np.isfinite(load_kw)) and np.all(np.isfinite(load_kvar))):
        raise InputError("loads must be finite")


def solve_power_flow_batch(
    net: NetworkModel,
    load_kw: np.ndarray,
    load_kvar: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> list[PowerFlowResult]:
    """Solve one power flow per column of ``load_kw`` / ``load_kvar`` (bus x case)."""
    load_kw = np.asarray(load_kw, dtype=float)
    load_kvar = np.asarray(load_kvar, dtype=float)
    if load_kw.ndim != 2:
        raise InputError("batch loads must be 2-D (bus x case)")
    _check_loads(net, load_kw, load_kvar)
    s_load = (load_kw + 1j * load_kvar) / net.base_power
    v, s_send, loss, iterations, converged = _sweep(net, s_load, tol, max_iter)

    base = net.base_power
    roots = net.upstream == net.slack_bus
    results = []
    for j in range(load_kw.shape[1]):
        send = s_send[:, j] * base
        injection = float(np.sum(send[roots].real)) + float(load_kw[net.slack_bus, j])
        results.append(
            PowerFlowResult(
                line_flow=np.abs(send),
                line_real_flow=send.real.copy(),
                bus_voltage=np.abs(v[:, j]),
                total_loss=float(np.sum(loss[:, j].real)) * base,
                slack_injection=injection,
                converged=bool(converged[j]),
                iterations=int(iterations[j]),
            )
        )
    return results


def solve_power_flow(
    net: NetworkModel,
    load_kw,
    load_kvar,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowResult:
    """Backward/forward sweep for a single load case.

    Stops when the largest bus-voltage change falls below ``tol`` (pu) or
    after ``max_iter`` sweeps; in the latter case ``converged`` is False.
    """
    kw = np.asarray(load_kw, dtype=float)
    kvar = np.asarray(load_kvar, dtype=float)
    if kw.ndim != 1:
        raise InputError("single-case loads must be 1-D")
    return solve_power_flow_batch(net, kw[:, None], kvar[:, None], tol, max_iter)[0]


def congested_hours(flows_by_hour, net: NetworkModel) -> set[tuple[int, int]]:
    """(hour, line index) pairs whose apparent flow strictly exceeds capacity."""
    flows = np.asarray(flows_by_hour, dtype=float)
    if flows.ndim != 2 or flows.shape[1] != net.line_count:
        raise InputError(f"flows must be hours x {net.line_count}")
    hours, lines = np.nonzero(flows > net.capacities[None, :])
    return {(int(h), int(k)) for h, k in zip(hours, lines)}
