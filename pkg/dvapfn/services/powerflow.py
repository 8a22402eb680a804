"""
Power Flow Service - radial feeder solver and load-perturbation datasets.

Buses are labelled 1..n with bus 1 the slack. Each line ``(from, to)`` feeds
bus ``to`` and carries that bus's nominal constant-power load. The solver is a
backward/forward sweep; convergence is judged by the complex power mismatch of
the full injection equations S = V conj(Y V) against the scenario loads.
"""
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd

from dvapfn.errors import ContractError, GenerationError, NetworkFileError, PowerFlowDivergedError, TopologyError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.numerics import SeededRng

logger = logging.getLogger(__name__)

SLACK_BUS = 1
NETWORK_COLUMNS = ["from", "to", "r_pu", "x_pu", "P_pu", "Q_pu"]
DESK_FEEDER_BUSES = 12


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True, eq=False)
class RadialNetwork:
    """Tree feeder rooted at bus 1; loads indexed by bus 2..n."""
    n_buses: int
    slack_voltage: float
    lines: Tuple[Line, ...]
    p_load: np.ndarray
    q_load: np.ndarray
    order: Tuple[int, ...] = field(init=False, repr=False)
    parent: Dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        lines = tuple(self.lines)
        object.__setattr__(self, "lines", lines)
        p, q = np.asarray(self.p_load, dtype=np.float64), np.asarray(self.q_load, dtype=np.float64)
        if p.shape != (self.n_buses - 1,) or q.shape != (self.n_buses - 1,):
            raise TopologyError(f"need {self.n_buses - 1} load pairs, got {p.shape} and {q.shape}")
        object.__setattr__(self, "p_load", p)
        object.__setattr__(self, "q_load", q)
        order, parent = _tree_order(self.n_buses, lines)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "parent", parent)

    @property
    def n_loads(self) -> int:
        return self.n_buses - 1

    def impedance(self, bus: int) -> complex:
        """Impedance of the line feeding ``bus``."""
        line = self._feeding[bus]
        return complex(line.r, line.x)

    @property
    def _feeding(self) -> Dict[int, Line]:
        feeding = {}
        for line in self.lines:
            child = line.to_bus if self.parent.get(line.to_bus) == line.from_bus else line.from_bus
            feeding[child] = line
        return feeding


def _tree_order(n_buses: int, lines: Sequence[Line]) -> Tuple[Tuple[int, ...], Dict[int, int]]:
    """Breadth-first bus order from the slack and each bus's parent."""
    graph = nx.MultiGraph()
    graph.add_nodes_from(range(1, n_buses + 1))
    for line in lines:
        if line.r < 0:
            raise TopologyError(f"line {line.from_bus}-{line.to_bus} has negative resistance")
        if line.r == 0 and line.x == 0:
            raise TopologyError(f"line {line.from_bus}-{line.to_bus} has zero impedance")
        for bus in (line.from_bus, line.to_bus):
            if not 1 <= bus <= n_buses:
                raise TopologyError(f"bus {bus} outside 1..{n_buses}")
        graph.add_edge(line.from_bus, line.to_bus)
    if not nx.is_connected(graph):
        orphans = sorted(set(graph.nodes) - nx.node_connected_component(graph, SLACK_BUS))
        raise TopologyError(f"buses not connected to the slack: {orphans}")
    if graph.number_of_edges() != n_buses - 1:
        cycle = [e[:2] for e in nx.find_cycle(graph)]
        raise TopologyError(f"network is not radial; cycle through {cycle}")
    parent = {child: par for par, child in nx.bfs_edges(graph, SLACK_BUS)}
    order = (SLACK_BUS, *[child for _, child in nx.bfs_edges(graph, SLACK_BUS)])
    return order, parent


@dataclass
class LoadScenario:
    """Constant-power loads at buses 2..n (p.u.)."""
    P: np.ndarray
    Q: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.P, self.Q])

    @classmethod
    def nominal(cls, network: RadialNetwork) -> "LoadScenario":
        return cls(network.p_load.copy(), network.q_load.copy())


@dataclass
class PFSolution:
    voltages: np.ndarray
    max_mismatch: float
    iterations: int
    trace: List[float]

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages)

    @property
    def angles(self) -> np.ndarray:
        return np.angle(self.voltages)


# ==================== Solver ====================

def ybus(network: RadialNetwork) -> np.ndarray:
    """Dense bus admittance matrix of the series line model."""
    Y = np.zeros((network.n_buses, network.n_buses), dtype=np.complex128)
    for line in network.lines:
        i, j = line.from_bus - 1, line.to_bus - 1
        y = 1.0 / complex(line.r, line.x)
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def injection_mismatch(network: RadialNetwork, scenario: LoadScenario, voltages: np.ndarray, Y: np.ndarray = None) -> np.ndarray:
    """|S_calc - S_spec| at every non-slack bus, with S_spec = -(P + jQ)."""
    Y = ybus(network) if Y is None else Y
    s_calc = voltages * np.conj(Y @ voltages)
    return np.abs(s_calc[1:] + (scenario.P + 1j * scenario.Q))


def solve(network: RadialNetwork, scenario: LoadScenario, tol: float = 1e-8, max_iter: int = 100) -> PFSolution:
    """Backward/forward sweep until the injection mismatch drops below ``tol``."""
    if not tol > 0:
        raise ContractError(f"tol must be > 0, got {tol}")
    if scenario.P.shape != (network.n_loads,) or scenario.Q.shape != (network.n_loads,):
        raise ContractError(f"scenario needs {network.n_loads} loads per component")

    n = network.n_buses
    load = np.concatenate([[0.0], scenario.P]) + 1j * np.concatenate([[0.0], scenario.Q])
    Y = ybus(network)
    feeding = network._feeding
    impedance = {bus: complex(line.r, line.x) for bus, line in feeding.items()}
    V = np.full(n, complex(network.slack_voltage), dtype=np.complex128)
    trace: List[float] = []

    for iteration in range(1, max_iter + 1):
        current = np.conj(load / V)
        # backward: accumulate branch currents from the leaves
        branch = current.copy()
        for bus in reversed(network.order[1:]):
            branch[network.parent[bus] - 1] += branch[bus - 1]
        # forward: drop voltages from the slack outwards
        for bus in network.order[1:]:
            V[bus - 1] = V[network.parent[bus] - 1] - impedance[bus] * branch[bus - 1]

        mismatch = float(np.max(injection_mismatch(network, scenario, V, Y))) if n > 1 else 0.0
        trace.append(mismatch)
        logger.debug("sweep %d: max mismatch %.3e", iteration, mismatch)
        if not np.isfinite(mismatch):
            raise PowerFlowDivergedError("sweep produced non-finite voltages", trace)
        if mismatch < tol:
            return PFSolution(voltages=V, max_mismatch=mismatch, iterations=iteration, trace=trace)
    raise PowerFlowDivergedError(f"no convergence in {max_iter} sweeps", trace)


# ==================== Datasets ====================

def generate_pf_dataset(
    network: RadialNetwork,
    delta_pct: float,
    N: int,
    target_bus: int,
    seed: int,
    standardize: bool = True,
) -> SyntheticDataset:
    """Loads drawn uniformly in nominal * (1 +/- delta_pct/100); target |V| at ``target_bus``.

    Inputs are the flattened (P, Q) vector, z-scored per column when ``standardize``.
    """
    if not 0 < delta_pct < 100:
        raise ContractError(f"delta_pct must be in (0, 100), got {delta_pct}")
    if not 2 <= target_bus <= network.n_buses:
        raise ContractError(f"target_bus must be a non-slack bus in 2..{network.n_buses}, got {target_bus}")
    if N < 1:
        raise ContractError(f"N must be >= 1, got {N}")

    k = network.n_loads
    factors = SeededRng(seed).uniform(1.0 - delta_pct / 100.0, 1.0 + delta_pct / 100.0, size=(N, 2 * k))
    nominal = np.concatenate([network.p_load, network.q_load])
    inputs = factors * nominal
    targets = np.empty(N)
    for i, row in enumerate(inputs):
        try:
            solution = solve(network, LoadScenario(row[:k], row[k:]))
        except PowerFlowDivergedError as exc:
            raise GenerationError(f"power-flow sample {i} failed: {exc}", seed) from exc
        targets[i] = solution.magnitudes[target_bus - 1]

    if standardize:
        std = inputs.std(axis=0)
        inputs = (inputs - inputs.mean(axis=0)) / np.where(std > 0, std, 1.0)
    return SyntheticDataset(inputs, targets, seed)


def truncate_network(network: RadialNetwork, n_buses: int) -> RadialNetwork:
    """Sub-feeder made of buses 1..n_buses; must itself be connected."""
    if not 2 <= n_buses <= network.n_buses:
        raise ContractError(f"cannot keep {n_buses} of {network.n_buses} buses")
    lines = tuple(l for l in network.lines if l.from_bus <= n_buses and l.to_bus <= n_buses)
    return RadialNetwork(
        n_buses=n_buses,
        slack_voltage=network.slack_voltage,
        lines=lines,
        p_load=network.p_load[: n_buses - 1],
        q_load=network.q_load[: n_buses - 1],
    )


# ==================== Network files ====================

def _content_lines(text: str) -> List[Tuple[int, str]]:
    return [(no, raw.strip()) for no, raw in enumerate(text.splitlines(), start=1) if raw.strip() and not raw.strip().startswith("#")]


def load_network_file(path: Union[str, Path]) -> RadialNetwork:
    """Parse ``slack_v=<value>`` then CSV rows ``from,to,r_pu,x_pu,P_pu,Q_pu``."""
    path = Path(path)
    if not path.exists():
        raise NetworkFileError(f"network file not found: {path}")
    rows = _content_lines(path.read_text())
    if not rows:
        raise NetworkFileError("network file is empty")

    slack_no, slack_text = rows[0]
    key, _, value = slack_text.partition("=")
    if key.strip() != "slack_v":
        raise NetworkFileError("first entry must be slack_v=<value>", slack_no)
    try:
        slack_voltage = float(value)
    except ValueError:
        raise NetworkFileError(f"bad slack voltage {value!r}", slack_no) from None

    if len(rows) < 2 or [c.strip() for c in rows[1][1].split(",")] != NETWORK_COLUMNS:
        raise NetworkFileError(f"expected header {','.join(NETWORK_COLUMNS)}", rows[1][0] if len(rows) > 1 else slack_no)

    data_rows = rows[2:]
    line_numbers = [no for no, _ in data_rows]
    try:
        frame = pd.read_csv(io.StringIO("\n".join(text for _, text in data_rows)), header=None, dtype=str)
    except pd.errors.ParserError as exc:
        raise NetworkFileError(f"malformed row: {exc}") from exc
    except pd.errors.EmptyDataError:
        raise NetworkFileError("network file has no lines", rows[1][0]) from None

    lines, loads = [], {}
    for i, record in enumerate(frame.itertuples(index=False)):
        no = line_numbers[i]
        values = list(record)
        if len(values) != len(NETWORK_COLUMNS) or any(pd.isna(v) for v in values):
            raise NetworkFileError(f"expected {len(NETWORK_COLUMNS)} fields", no)
        try:
            from_bus, to_bus = int(values[0]), int(values[1])
            r, x, p, q = (float(v) for v in values[2:])
        except ValueError:
            raise NetworkFileError(f"non-numeric field in {values}", no) from None
        if r < 0:
            raise NetworkFileError(f"negative resistance {r}", no)
        if to_bus == SLACK_BUS or to_bus in loads:
            raise TopologyError(f"line {no}: bus {to_bus} is fed twice, network has a cycle")
        lines.append(Line(from_bus, to_bus, r, x))
        loads[to_bus] = (p, q)

    n_buses = max(max(l.from_bus, l.to_bus) for l in lines)
    missing = sorted(set(range(2, n_buses + 1)) - set(loads))
    if missing:
        raise TopologyError(f"buses without a feeding line: {missing}")
    network = RadialNetwork(
        n_buses=n_buses,
        slack_voltage=slack_voltage,
        lines=tuple(lines),
        p_load=np.array([loads[b][0] for b in range(2, n_buses + 1)]),
        q_load=np.array([loads[b][1] for b in range(2, n_buses + 1)]),
    )
    logger.debug("loaded %s: %d buses, %d lines", path.name, network.n_buses, len(network.lines))
    return network


def write_network_file(network: RadialNetwork, path: Union[str, Path]) -> None:
    """Inverse of ``load_network_file``; values written with round-trip precision."""
    feeding = network._feeding
    frame = pd.DataFrame(
        [
            (line.from_bus, line.to_bus, line.r, line.x, network.p_load[bus - 2], network.q_load[bus - 2])
            for bus, line in sorted(feeding.items(), key=lambda item: network.lines.index(item[1]))
        ],
        columns=NETWORK_COLUMNS,
    )
    with open(path, "w") as handle:
        handle.write(f"slack_v={network.slack_voltage!r}\n")
        frame.to_csv(handle, index=False, float_format="%.17g")
