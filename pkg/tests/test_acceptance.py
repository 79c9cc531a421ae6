"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria 1 and 2 share the cached desk-scale comparison experiment (see
``_criterion1.py``); everything else is self-contained and fast. Run with

    pytest tests/test_acceptance.py -v -s
"""

import time

import numpy as np
import pytest

from safempc.cli import compare_runs
from safempc.data import Transition
from safempc.dynamics import (
    EnsembleDynamicsModel,
    MlpRegressor,
    TrainConfig,
    fit_ensemble,
    gradient_check,
)
from safempc.gbdt import DualBuffer, GbdtConfig, fit_classifier, fit_gbdt
from safempc.planner import (
    PlanDistribution,
    PlannerConfig,
    cem_penalty_solve,
    evaluate_trajectory,
    rce_solve,
    select_elites_penalty,
    select_elites_rce,
)

import _criterion1

RESULTS = []


def report(number, passed, detail):
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    RESULTS.append(line)
    print("\n" + line)
    assert passed, line


@pytest.fixture(scope="module")
def comparison_runs():
    return _criterion1.ensure_runs()


@pytest.fixture(scope="module")
def comparison_table(comparison_runs):
    return {
        arm: compare_runs([path]) for arm, path in comparison_runs.items()
    }


def test_criterion_1_violation_ordering(comparison_runs, comparison_table):
    v10k = {}
    totals = {}
    for arm in ("mpc_rce", "mpc_cem", "mpc_random"):
        row = comparison_table[arm].rows[0]
        assert row.n_seeds == len(_criterion1.SEEDS)
        v10k[arm] = row.violations_10k_mean
        totals[arm] = row.total_violations_mean
    wall = _criterion1.total_wall_clock(comparison_runs)
    ordering = (
        v10k["mpc_rce"] < v10k["mpc_cem"]
        and v10k["mpc_rce"] < v10k["mpc_random"]
        and v10k["mpc_rce"] <= 0.5 * v10k["mpc_cem"]
        and totals["mpc_rce"] < totals["mpc_cem"]
        and totals["mpc_rce"] < totals["mpc_random"]
        and wall <= 1800.0
    )
    report(
        1, ordering,
        f"first-10k violations rce={v10k['mpc_rce']:.1f} cem={v10k['mpc_cem']:.1f} "
        f"random={v10k['mpc_random']:.1f}; whole-run rce={totals['mpc_rce']:.0f} "
        f"cem={totals['mpc_cem']:.0f} random={totals['mpc_random']:.0f}; "
        f"serial wall {wall:.0f}s <= 1800s",
    )


def test_criterion_2_task_competence(comparison_table):
    rce = comparison_table["mpc_rce"].rows[0].reward_mean
    unconstrained = comparison_table["mpc_cem_l0"].rows[0].reward_mean
    ok = rce >= 0.7 * unconstrained
    report(2, ok, f"converged reward rce={rce:.2f} vs 0.7 * unconstrained-cem={unconstrained:.2f}")


def toy_evaluator(seqs):
    x = seqs[:, 0, 0]
    return -(x - 0.8) ** 2, (x > 0.5).astype(float)


def test_criterion_3_optimizer_oracle():
    grid = np.arange(-1.0, 1.0 + 1e-9, 1e-3)
    feasible = grid[grid <= 0.5]
    optimum = float(feasible[np.argmax(-(feasible - 0.8) ** 2)])

    start = time.perf_counter()
    rce = rce_solve(PlannerConfig(mode="rce", horizon=1, action_dim=1),
                    PlanDistribution(np.zeros(1), np.full(1, 0.25)), toy_evaluator, 0)
    t_rce = time.perf_counter() - start
    start = time.perf_counter()
    cem = cem_penalty_solve(PlannerConfig(mode="cem_penalty", horizon=1, action_dim=1,
                                          penalty=1e4),
                            PlanDistribution(np.zeros(1), np.full(1, 0.25)), toy_evaluator, 0)
    t_cem = time.perf_counter() - start
    ok = (abs(rce[0, 0] - optimum) < 0.05 and abs(cem[0, 0] - optimum) < 0.1
          and t_rce < 1.0 and t_cem < 1.0)
    report(3, ok, f"grid optimum {optimum:.3f}; rce {rce[0,0]:.3f} ({t_rce*1e3:.0f}ms), "
                  f"cem {cem[0,0]:.3f} ({t_cem*1e3:.0f}ms)")


def test_criterion_4_elite_property():
    # q = 3 feasible among N = 20 with k = 6 > q
    rng = np.random.default_rng(0)
    costs = np.concatenate([np.zeros(3), rng.uniform(0.1, 1.4, 17)])
    rewards = rng.uniform(0.0, 10.0, 20)
    k = 6
    rce_idx = select_elites_rce(rewards, costs, k)
    cem_idx = select_elites_penalty(rewards, costs, k, penalty=1e4)
    rce_clean = len(rce_idx) == 3 and (costs[rce_idx] == 0).all()
    cem_contaminated = (costs[cem_idx] > 0).sum() >= 1
    report(4, rce_clean and cem_contaminated,
           f"rce elites all feasible ({len(rce_idx)} = q); "
           f"penalty elites contain {(costs[cem_idx] > 0).sum()} infeasible of {k}")


class _StubDynamics:
    n_members = 2

    def predict_all_members(self, states, actions):
        out = states.copy()
        out[0] += 1.0
        out[1] -= 1.0
        return out


class _StubCost:
    @staticmethod
    def predict_batch(x):
        return (x[:, 0] < 0).astype(int)


def test_criterion_5_trajectory_evaluation_oracle():
    reward, cost = evaluate_trajectory(
        _StubDynamics(), _StubCost(), lambda prev, nxt: nxt[..., 0],
        np.array([0.0]), np.zeros((2, 1)), gamma=0.98, beta=0.4,
    )
    ok = abs(reward - 0.0) < 1e-12 and abs(cost - 1.4) < 1e-12
    report(5, ok, f"reward {reward!r} (want 0.0), cost {cost!r} (want 1.4), tol 1e-12")


def test_criterion_6_gradient_check():
    reg = MlpRegressor((2, 4, 2), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    err = gradient_check(reg, (rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)), seed=0)
    report(6, err < 1e-4, f"max relative gradient error {err:.2e} < 1e-4")


def test_criterion_7_ensemble_uncertainty():
    rng = np.random.default_rng(0)
    transitions = [
        Transition(s := rng.uniform(-1, 1, 2), a := rng.uniform(-1, 1, 2),
                   s + 0.1 * a + 0.3 * np.tanh(s), 0, False)
        for _ in range(3000)
    ]
    model = EnsembleDynamicsModel(2, 2, 4, hidden=(32, 32), seed=0)
    fit_ensemble(model, transitions,
                 TrainConfig(epochs=15, batch_size=128, learning_rate=3e-3), seed=1)
    idx = np.random.default_rng(2).choice(len(transitions), 100, replace=False)
    obs_std = model.input_norm.std[:2]
    v_in, v_out = [], []
    for i in idx:
        tr = transitions[i]
        v_in.append(model.predict_distribution(tr.observation, tr.action)[1].mean())
        v_out.append(model.predict_distribution(tr.observation + 10 * obs_std,
                                                tr.action)[1].mean())
    ordering = float(np.mean(v_in)) < float(np.mean(v_out))

    clones = EnsembleDynamicsModel(2, 2, 4, hidden=(32, 32), seed=0)
    for member in clones.members:
        for i in range(member.n_layers):
            member.weights[i] = model.members[0].weights[i].copy()
            member.biases[i] = model.members[0].biases[i].copy()
    clones.input_norm = model.input_norm
    clones.delta_norm = model.delta_norm
    _, var = clones.predict_distribution(np.array([0.2, -0.4]), np.array([0.1, 0.9]))
    exact_zero = np.array_equal(var, np.zeros(2))
    report(7, ordering and exact_zero,
           f"mean var in-dist {np.mean(v_in):.3e} < shifted {np.mean(v_out):.3e}; "
           f"cloned-ensemble variance identically zero: {exact_zero}")


def test_criterion_8_classifier_imbalance():
    rng = np.random.default_rng(42)
    x = rng.uniform(-2, 2, (6000, 8))
    y = ((x[:, 0] > 1.2) & (x[:, 1] > 1.0)).astype(int)
    buf = DualBuffer(max_safe_ratio=3.0)
    for i in range(4000):
        buf.ingest(x[i], int(y[i]))
    model = fit_classifier(GbdtConfig(), buf, seed=0)
    pred = model.predict_batch(x[4000:])
    recall = float(pred[y[4000:] == 1].mean())

    cb_x = rng.uniform(-1, 1, (1000, 2))
    cb_y = ((cb_x[:, 0] > 0) ^ (cb_x[:, 1] > 0)).astype(float)
    cb_model = fit_gbdt(cb_x, cb_y, GbdtConfig())
    accuracy = float((cb_model.predict_batch(cb_x) == cb_y).mean())
    report(8, recall >= 0.9 and accuracy == 1.0,
           f"unsafe fraction {y.mean():.3f}, held-out recall {recall:.3f} >= 0.9; "
           f"checkerboard training accuracy {accuracy:.3f}")


def test_criterion_9_byte_identical_runs(tmp_path):
    from safempc.cli import ExperimentSpec, run_experiment

    overrides = _criterion1.arm_overrides("mpc_rce")
    overrides["init_random_steps"] = "600"
    overrides["total_steps"] = "400"
    overrides["retrain_interval"] = "200"
    bodies = []
    for attempt in ("first", "second"):
        out = tmp_path / attempt
        run_experiment(ExperimentSpec(task="point_goal1", method="mpc_rce",
                                      seeds=[0], out_dir=str(out), overrides=overrides))
        bodies.append((out / "point_goal1__mpc_rce__seed0.csv").read_bytes())
    ok = bodies[0] == bodies[1] and len(bodies[0]) > 0
    report(9, ok, f"two full runs, identical spec and seed: {len(bodies[0])} byte CSV bodies equal")
