"""Hierarchical parametric problem families.

A family fixes all theta-independent structure (weights, capacities,
complicating constraints, cost maps) at generation time. For each parameter
vector theta it can build the full master MIP over (x, y), the small
upper-level policy MILP over x, and the lower-level problem with x fixed.

Two concrete families are provided: a hierarchical knapsack (binary lower
knapsacks gated by a binary upper knapsack) and a capacitated facility
location problem with unmet-demand penalties. Both satisfy recursive
feasibility by construction: y = 0 (resp. y = 0, eta = 1) is always
lower-feasible.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .milp import (MilpProblem, MilpSolution, SolveConfig, solve_lp,
                   solve_milp, DimensionMismatch)

DEFAULT_P = 100


class UpperInfeasiblePoint(ValueError):
    pass


class NonBinaryUpperVariables(ValueError):
    pass


@dataclass(frozen=True)
class KnapsackFamily:
    """J lower binary knapsacks of k items each, gated by one upper knapsack.

    Master (minimize):
        sum_j d_j(theta)^T y_j
        s.t. a_j^T y_j <= b_j,  y_j <= x_j * 1,  a0^T x <= b0,
             x in {0,1}^J, y_j in {0,1}^k
    with d(theta) = -|A theta| <= 0 and theta >= 0 entrywise.
    """

    J: int
    k: int
    p: int
    seed: int
    a0: np.ndarray          # (J,) upper weights
    b0: float               # upper capacity
    a: np.ndarray           # (J, k) lower weights
    b: np.ndarray           # (J,) lower capacities
    cost_map: np.ndarray    # (J*k, p)

    kind = "knapsack"
    # paper convention: the upper policy maximizes c_hat^T x
    policy_sign = -1.0

    @property
    def n1(self) -> int:
        return self.J

    @property
    def n2(self) -> int:
        return self.J * self.k

    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:
        return np.abs(rng.standard_normal(self.p))

    def cost_vectors(self, theta):
        """(c(theta), d(theta)) for the master objective."""
        theta = _check_theta(theta, self.p)
        return np.zeros(self.J), -np.abs(self.cost_map @ theta)

    def _upper_rows(self):
        return self.a0.reshape(1, -1), np.array([self.b0])

    def master(self, theta) -> MilpProblem:
        c, d = self.cost_vectors(theta)
        J, k = self.J, self.k
        n = J + J * k
        rows = []
        rhs = []
        row = np.zeros(n)
        row[:J] = self.a0
        rows.append(row)
        rhs.append(self.b0)
        for j in range(J):
            row = np.zeros(n)
            row[J + j * k:J + (j + 1) * k] = self.a[j]
            rows.append(row)
            rhs.append(self.b[j])
        for j in range(J):           # linking y_{j,i} <= x_j
            for i in range(k):
                row = np.zeros(n)
                row[J + j * k + i] = 1.0
                row[j] = -1.0
                rows.append(row)
                rhs.append(0.0)
        return MilpProblem(
            objective=np.concatenate([c, d]),
            constraint_matrix=np.array(rows),
            constraint_rhs=np.array(rhs),
            var_lower=np.zeros(n),
            var_upper=np.ones(n),
            integrality=np.ones(n, dtype=bool),
            metadata={"n_upper": J, "n_lower": J * k, "family": self.kind},
        )

    def policy_problem_min(self, theta, c_min) -> MilpProblem:
        """Upper feasible set X(theta) with objective minimize c_min^T x."""
        c_min = np.asarray(c_min, dtype=float)
        if c_min.size != self.J:
            raise DimensionMismatch(f"c_hat must have length {self.J}")
        a, b = self._upper_rows()
        return MilpProblem(c_min, a, b, np.zeros(self.J), np.ones(self.J),
                           np.ones(self.J, dtype=bool),
                           metadata={"family": self.kind})

    def upper_policy(self, theta, c_hat) -> MilpProblem:
        """Paper-form policy: maximize c_hat^T x over X(theta)."""
        c_hat = np.asarray(c_hat, dtype=float)
        if c_hat.size != self.J:
            raise DimensionMismatch(f"c_hat must have length {self.J}")
        a, b = self._upper_rows()
        return MilpProblem(c_hat, a, b, np.zeros(self.J), np.ones(self.J),
                           np.ones(self.J, dtype=bool), sense="maximize",
                           metadata={"family": self.kind})

    def upper_feasible(self, theta, x, tol=1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if x.size != self.J:
            return False
        if np.any(np.abs(x - np.round(x)) > 1e-5):
            return False
        return float(self.a0 @ x) <= self.b0 + tol

    def solve_lower(self, theta, x, config: SolveConfig | None = None):
        """Independent binary knapsack per block; closed blocks are y=0."""
        config = config or SolveConfig()
        x = np.asarray(x, dtype=float)
        if not self.upper_feasible(theta, x):
            raise UpperInfeasiblePoint("x is not feasible in the upper problem")
        _, d = self.cost_vectors(theta)
        k = self.k
        y = np.zeros(self.J * k)
        block_times = []
        total = 0.0
        for j in range(self.J):
            t0 = time.perf_counter()
            if x[j] > 0.5:
                dj = d[j * k:(j + 1) * k]
                prob = MilpProblem(dj, self.a[j].reshape(1, -1),
                                   np.array([self.b[j]]),
                                   np.zeros(k), np.ones(k),
                                   np.ones(k, dtype=bool))
                sol = solve_milp(prob, config)
                assert sol.values is not None, "lower block must be feasible"
                y[j * k:(j + 1) * k] = sol.values
                total += float(dj @ sol.values)
            block_times.append(time.perf_counter() - t0)
        return y, total, block_times


@dataclass(frozen=True)
class FacilityFamily:
    """Capacitated facility location with unmet-demand penalty gamma.

    Master (minimize):
        sum_ij d_ij(theta) y_ij + sum_j c_j(theta) x_j + gamma * sum_i eta_i
        s.t. sum_j y_ij + eta_i = 1 (two inequalities), A x <= b,
             sum_i e_i(theta) y_ij <= s_j x_j,
             x in {0,1}^|J|, y_ij in [0,1], eta_i in [0,1].

    Costs and demands are clipped-affine maps of theta:
    d_ij(theta) = max(0, base + g^T theta), likewise c_j and e_i.
    """

    n_clients: int
    n_sites: int
    p: int
    seed: int
    s: np.ndarray           # (n_sites,) capacities
    A: np.ndarray           # (n_rows, n_sites) complicating constraints
    b: np.ndarray           # (n_rows,) = half the row sums of A
    gamma: float
    base_d: np.ndarray      # (n_clients, n_sites)
    g_d: np.ndarray         # (n_clients, n_sites, p)
    base_c: np.ndarray      # (n_sites,)
    g_c: np.ndarray         # (n_sites, p)
    base_e: np.ndarray      # (n_clients,)
    g_e: np.ndarray         # (n_clients, p)

    kind = "facility"
    policy_sign = 1.0

    @property
    def n1(self) -> int:
        return self.n_sites

    @property
    def n2(self) -> int:
        return self.n_clients * self.n_sites + self.n_clients

    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.p)

    def theta_maps(self, theta):
        """(d_ij, c_j, e_i) for a parameter vector, all clipped nonnegative."""
        theta = _check_theta(theta, self.p)
        d = np.maximum(0.0, self.base_d + self.g_d @ theta)
        c = np.maximum(0.0, self.base_c + self.g_c @ theta)
        # demands floored strictly above zero: a zero-demand client could be
        # served through an unopened site, which defeats the penalty term
        e = np.maximum(0.01, self.base_e + self.g_e @ theta)
        return d, c, e

    def cost_vectors(self, theta):
        d, c, _ = self.theta_maps(theta)
        return c, np.concatenate([d.ravel(), np.full(self.n_clients,
                                                     self.gamma)])

    def master(self, theta) -> MilpProblem:
        d, c, e = self.theta_maps(theta)
        ni, nj = self.n_clients, self.n_sites
        n = nj + ni * nj + ni          # x | y (client-major) | eta
        y0 = nj
        e0 = nj + ni * nj
        rows, rhs = [], []
        for i in range(ni):            # sum_j y_ij + eta_i = 1
            row = np.zeros(n)
            row[y0 + i * nj:y0 + (i + 1) * nj] = 1.0
            row[e0 + i] = 1.0
            rows.append(row)
            rhs.append(1.0)
            rows.append(-row)
            rhs.append(-1.0)
        for r in range(self.A.shape[0]):
            row = np.zeros(n)
            row[:nj] = self.A[r]
            rows.append(row)
            rhs.append(self.b[r])
        for j in range(nj):            # sum_i e_i y_ij - s_j x_j <= 0
            row = np.zeros(n)
            for i in range(ni):
                row[y0 + i * nj + j] = e[i]
            row[j] = -self.s[j]
            rows.append(row)
            rhs.append(0.0)
        integrality = np.zeros(n, dtype=bool)
        integrality[:nj] = True
        return MilpProblem(
            objective=np.concatenate([c, d.ravel(),
                                      np.full(ni, self.gamma)]),
            constraint_matrix=np.array(rows),
            constraint_rhs=np.array(rhs),
            var_lower=np.zeros(n),
            var_upper=np.ones(n),
            integrality=integrality,
            metadata={"n_upper": nj, "n_lower": ni * nj + ni,
                      "family": self.kind},
        )

    def policy_problem_min(self, theta, c_min) -> MilpProblem:
        c_min = np.asarray(c_min, dtype=float)
        if c_min.size != self.n_sites:
            raise DimensionMismatch(f"c_hat must have length {self.n_sites}")
        return MilpProblem(c_min, self.A, self.b,
                           np.zeros(self.n_sites), np.ones(self.n_sites),
                           np.ones(self.n_sites, dtype=bool),
                           metadata={"family": self.kind})

    def upper_policy(self, theta, c_hat) -> MilpProblem:
        return self.policy_problem_min(theta, c_hat)

    def upper_feasible(self, theta, x, tol=1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if x.size != self.n_sites:
            return False
        if np.any(np.abs(x - np.round(x)) > 1e-5):
            return False
        return bool(np.all(self.A @ x <= self.b + tol))

    def solve_lower(self, theta, x, config: SolveConfig | None = None):
        """One LP over (y, eta) with x fixed; y = 0, eta = 1 is always
        feasible, so the block cannot be infeasible."""
        config = config or SolveConfig()
        x = np.asarray(x, dtype=float)
        if not self.upper_feasible(theta, x):
            raise UpperInfeasiblePoint("x is not feasible in the upper problem")
        d, _, e = self.theta_maps(theta)
        ni, nj = self.n_clients, self.n_sites
        n = ni * nj + ni
        rows, rhs = [], []
        for i in range(ni):
            row = np.zeros(n)
            row[i * nj:(i + 1) * nj] = 1.0
            row[ni * nj + i] = 1.0
            rows.append(row)
            rhs.append(1.0)
            rows.append(-row)
            rhs.append(-1.0)
        for j in range(nj):
            row = np.zeros(n)
            for i in range(ni):
                row[i * nj + j] = e[i]
            rows.append(row)
            rhs.append(self.s[j] * x[j])
        prob = MilpProblem(
            np.concatenate([d.ravel(), np.full(ni, self.gamma)]),
            np.array(rows), np.array(rhs), np.zeros(n), np.ones(n),
            np.zeros(n, dtype=bool))
        t0 = time.perf_counter()
        sol = solve_lp(prob, config)
        elapsed = time.perf_counter() - t0
        assert sol.status == "optimal", "lower problem must be feasible"
        return sol.values, float(sol.objective_value), [elapsed]


def _check_theta(theta, p):
    theta = np.asarray(theta, dtype=float)
    if theta.size != p:
        raise DimensionMismatch(f"theta must have dimension {p}")
    return theta


def generate_family(kind: str, dims: dict, seed: int):
    """Draw all theta-independent data for a family from a seeded RNG."""
    rng = np.random.default_rng(seed)
    if kind == "knapsack":
        J = int(dims.get("J", 20))
        k = int(dims.get("k", 10))
        p = int(dims.get("p", DEFAULT_P))
        if min(J, k, p) <= 0:
            raise ValueError("dims must be positive")
        return KnapsackFamily(
            J=J, k=k, p=p, seed=seed,
            a0=np.abs(rng.standard_normal(J)),
            b0=float(np.abs(rng.standard_normal())),
            a=np.abs(rng.standard_normal((J, k))),
            b=np.abs(rng.standard_normal(J)),
            cost_map=rng.standard_normal((J * k, p)),
        )
    if kind == "facility":
        nc = int(dims.get("n_clients", 15))
        ns = int(dims.get("n_sites", 15))
        p = int(dims.get("p", DEFAULT_P))
        n_rows = int(dims.get("n_rows", 25))
        if min(nc, ns, p, n_rows) <= 0:
            raise ValueError("dims must be positive")
        A = np.abs(rng.standard_normal((n_rows, ns)))
        # each site serves about one client's worth of demand with slack
        s = (1.0 + np.abs(rng.standard_normal(ns))) * (nc / ns)
        return FacilityFamily(
            n_clients=nc, n_sites=ns, p=p, seed=seed,
            s=s, A=A, b=0.5 * A.sum(axis=1), gamma=100.0,
            base_d=np.abs(rng.standard_normal((nc, ns))),
            g_d=0.1 * rng.standard_normal((nc, ns, p)),
            base_c=np.abs(rng.standard_normal(ns)),
            g_c=0.1 * rng.standard_normal((ns, p)),
            base_e=np.abs(rng.standard_normal(nc)),
            g_e=0.1 * rng.standard_normal((nc, p)),
        )
    raise ValueError(f"unknown family kind {kind!r}")


# --- spec-facing operation wrappers -------------------------------------

def sample_theta(family, rng):
    return family.sample_theta(rng)


def build_master(family, theta) -> MilpProblem:
    return family.master(theta)


def build_upper_policy(family, theta, c_hat) -> MilpProblem:
    return family.upper_policy(theta, c_hat)


def build_upper_policy_fy(family, theta, c_hat, omega_weight: float) -> MilpProblem:
    """Policy with quadratic penalty ||x||_2^2, linearized to 1^T x.

    Valid only for binary upper variables, where x_j^2 = x_j.
    """
    prob = family.policy_problem_min(theta, family.policy_sign
                                     * np.asarray(c_hat, dtype=float))
    if not np.all(prob.integrality) or np.any(prob.var_lower != 0) \
            or np.any(prob.var_upper != 1):
        raise NonBinaryUpperVariables(
            "FY policy requires binary upper variables")
    return MilpProblem(prob.objective + omega_weight,
                       prob.constraint_matrix, prob.constraint_rhs,
                       prob.var_lower, prob.var_upper, prob.integrality,
                       metadata=dict(prob.metadata))


def solve_lower(family, theta, x_fixed, config: SolveConfig | None = None):
    return family.solve_lower(theta, x_fixed, config)


def true_cost(family, theta, x, config: SolveConfig | None = None) -> float:
    """f_theta(x): upper cost plus the optimal lower cost given x."""
    c, _ = family.cost_vectors(theta)
    _, lower, _ = family.solve_lower(theta, x, config)
    return float(c @ np.asarray(x, dtype=float)) + lower


def relaxation_bound(family, theta, config: SolveConfig | None = None) -> float:
    """l(theta): LP-relaxation optimum of the master problem."""
    sol = solve_lp(family.master(theta), config)
    assert sol.status == "optimal", f"master relaxation {sol.status}"
    return float(sol.objective_value)


def solve_master(family, theta, config: SolveConfig | None = None):
    """Exact master solve used for dataset labeling.

    For the knapsack family the master separates exactly: each lower block
    is solved once (its value is independent of x beyond the gate), then a
    single J-variable knapsack selects which blocks to open. Equality with
    the monolithic solve is covered by tests. Other families solve the
    monolithic master directly.

    Returns (x_star, y_star, z, proven_gap, status).
    """
    config = config or SolveConfig()
    if family.kind == "knapsack":
        J, k = family.J, family.k
        _, d = family.cost_vectors(theta)
        block_gap = config.gap_tolerance / (J + 1)
        block_cfg = SolveConfig(gap_tolerance=block_gap,
                                time_limit=config.time_limit)
        v = np.zeros(J)
        y_blocks = np.zeros((J, k))
        for j in range(J):
            dj = d[j * k:(j + 1) * k]
            sol = solve_milp(MilpProblem(dj, family.a[j].reshape(1, -1),
                                         np.array([family.b[j]]),
                                         np.zeros(k), np.ones(k),
                                         np.ones(k, dtype=bool)), block_cfg)
            if sol.status != "optimal":
                return None, None, math.nan, math.inf, sol.status
            v[j] = sol.objective_value
            y_blocks[j] = sol.values
        upper = solve_milp(MilpProblem(v, family.a0.reshape(1, -1),
                                       np.array([family.b0]),
                                       np.zeros(J), np.ones(J),
                                       np.ones(J, dtype=bool)), block_cfg)
        if upper.status != "optimal":
            return None, None, math.nan, math.inf, upper.status
        x = upper.values
        y = (y_blocks * x.reshape(-1, 1)).ravel()
        z = float(upper.objective_value)
        return x, y, z, config.gap_tolerance, "optimal"
    sol = solve_milp(family.master(theta), config)
    if sol.status != "optimal":
        return None, None, math.nan, math.inf, sol.status
    n1 = family.n1
    gap = abs(sol.objective_value - sol.dual_bound)
    return sol.values[:n1], sol.values[n1:], float(sol.objective_value), \
        gap, "optimal"


# --- serialization --------------------------------------------------------

def _write_array(out, name, arr):
    arr = np.asarray(arr, dtype=float)
    shape = ",".join(str(d) for d in arr.shape)
    flat = " ".join(f"{v:.17g}" for v in arr.ravel())
    out.write(f"{name} [{shape}] {flat}\n")


def family_to_text(family) -> str:
    out = io.StringIO()
    out.write(f"kind {family.kind}\n")
    out.write(f"seed {family.seed}\n")
    if family.kind == "knapsack":
        out.write(f"dims J={family.J} k={family.k} p={family.p}\n")
        _write_array(out, "a0", family.a0)
        _write_array(out, "b0", np.array([family.b0]))
        _write_array(out, "a", family.a)
        _write_array(out, "b", family.b)
        _write_array(out, "cost_map", family.cost_map)
    else:
        out.write(f"dims n_clients={family.n_clients} "
                  f"n_sites={family.n_sites} p={family.p}\n")
        out.write(f"gamma {family.gamma:.17g}\n")
        for name in ("s", "A", "b", "base_d", "g_d", "base_c", "g_c",
                     "base_e", "g_e"):
            _write_array(out, name, getattr(family, name))
    return out.getvalue()


def _parse_arrays(lines):
    arrays = {}
    for line in lines:
        name, rest = line.split(" ", 1)
        shape_txt, _, flat = rest.partition("] ")
        shape = tuple(int(d) for d in shape_txt.lstrip("[").split(",") if d)
        vals = (np.array([float(v) for v in flat.split()])
                if flat.strip() else np.array([]))
        arrays[name] = vals.reshape(shape)
    return arrays


def family_from_text(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = dict(ln.split(" ", 1) for ln in lines if "[" not in ln)
    kind = head["kind"].strip()
    seed = int(head["seed"])
    dims = dict(kv.split("=") for kv in head["dims"].split())
    arrays = _parse_arrays([ln for ln in lines if "[" in ln])
    if kind == "knapsack":
        return KnapsackFamily(
            J=int(dims["J"]), k=int(dims["k"]), p=int(dims["p"]), seed=seed,
            a0=arrays["a0"], b0=float(arrays["b0"][0]), a=arrays["a"],
            b=arrays["b"], cost_map=arrays["cost_map"])
    return FacilityFamily(
        n_clients=int(dims["n_clients"]), n_sites=int(dims["n_sites"]),
        p=int(dims["p"]), seed=seed, gamma=float(head["gamma"]),
        s=arrays["s"], A=arrays["A"], b=arrays["b"],
        base_d=arrays["base_d"], g_d=arrays["g_d"], base_c=arrays["base_c"],
        g_c=arrays["g_c"], base_e=arrays["base_e"], g_e=arrays["g_e"])
