import numpy as np
import pytest

from myosim.cell import CellParams, StimulusProtocol
from myosim.errors import HaloProtocolError
from myosim.mechanics import MaterialParams, MuscleMesh
from myosim.partition import PartitionLayout, boundary_metrics
from myosim.runtime import GHOST_BYTES, Mailbox, ParallelSimulation, build_halo_plan
from myosim.scenario import Scenario
from myosim.simulation import run_scenario
from myosim.splitting import CoupledProblem, SplittingSchedule, coupled_step, initial_world
from myosim.studies import run_scaling_experiment
from myosim.timing import COMPONENTS
from myosim.transfer import FiberLayout


def _problem(dims=(4, 2, 2), scheme="godunov", per_element=(2, 2), nodes=17, dt_3d=0.05):
    sch = SplittingSchedule(dt_3d=dt_3d) if scheme == "godunov" else SplittingSchedule.strang(dt_3d=dt_3d)
    return CoupledProblem(MuscleMesh(*dims), FiberLayout(*per_element, nodes), sch, StimulusProtocol(),
                          CellParams(), MaterialParams())


def _serial(problem, steps):
    w = initial_world(problem)
    for _ in range(steps):
        coupled_step(w, problem)
    return w


def _assert_same(a, b, tol=1e-10):
    np.testing.assert_allclose(a.fibers.y, b.fibers.y, rtol=0, atol=tol)
    np.testing.assert_allclose(a.gamma_bar, b.gamma_bar, rtol=0, atol=tol)
    np.testing.assert_allclose(a.u, b.u, rtol=0, atol=tol)
    np.testing.assert_allclose(a.l_hs, b.l_hs, rtol=0, atol=tol)


def test_single_partition_exchanges_nothing():
    p = _problem()
    sim = ParallelSimulation(p, PartitionLayout(p.muscle.dims, (1, 1, 1)))
    sim.run(0.05)
    assert sum(sim.mail.bytes.values()) == 0
    assert sim.workers[0].ghosts == {}


def test_ghosts_hold_neighbor_values():
    p = _problem()
    sim = ParallelSimulation(p, PartitionLayout(p.muscle.dims, (2, 1, 1)))
    for w in sim.workers:
        w.u_closed[:] = w.rank
    for w in sim.workers:
        w.send_ghosts(sim.plan)
    for w in sim.workers:
        w.receive_ghosts(sim.plan)
    for w in sim.workers:
        assert w.ghosts and all(np.all(b == 1 - w.rank) for b in w.ghosts.values())
    sim.mail.barrier()


def test_mismatched_plan_rejected():
    p = _problem()
    lay = PartitionLayout(p.muscle.dims, (2, 1, 1))
    plan = build_halo_plan(lay, p.muscle, p.layout)
    plan.recv[1][0]["displacement"] = plan.recv[1][0]["displacement"][:-1]
    with pytest.raises(HaloProtocolError):
        plan.validate()
    sim = ParallelSimulation(p, lay)
    sim.workers[0].send_ghosts(sim.plan)
    with pytest.raises(HaloProtocolError):
        sim.workers[1].receive_ghosts(plan)


def test_mailbox_protocol():
    box = Mailbox()
    with pytest.raises(HaloProtocolError):
        box.recv(0, 1, "displacement")
    with pytest.raises(HaloProtocolError):
        box.send(0, 1, "gossip", 1.0)
    data = np.arange(4.0)
    box.send(0, 1, "displacement", data)
    data[:] = -1
    with pytest.raises(HaloProtocolError):
        box.barrier()
    np.testing.assert_array_equal(box.recv(1, 0, "displacement"), np.arange(4.0))
    assert box.bytes["displacement"] == 32 and box.messages["displacement"] == 1


@pytest.mark.parametrize("p,scheme", [((2, 1, 1), "godunov"), ((2, 1, 1), "strang"), ((4, 2, 1), "strang"),
                                      ((1, 2, 2), "godunov"), ((2, 2, 2), "godunov")])
def test_parallel_matches_serial(p, scheme):
    prob = _problem(scheme=scheme)
    sim = ParallelSimulation(prob, PartitionLayout(prob.muscle.dims, p))
    sim.run(0.1)
    _assert_same(sim.world(), _serial(prob, 2))


def test_eight_workers_on_cube_scenario():
    sc = Scenario({"t_end": 0.1, "domain": {"elements": [4, 4, 4]},
                   "fibers": {"per_element": [1, 1], "nodes_per_fiber": 13},
                   "schedule": {"dt_3d": 0.05}})
    serial = run_scenario(sc)
    par = run_scenario(sc, workers=8)
    assert par.summary["layout"] == [2, 2, 2]
    np.testing.assert_array_equal(par.world.fibers.y, serial.world.fibers.y)
    np.testing.assert_array_equal(par.world.gamma_bar, serial.world.gamma_bar)
    _assert_same(par.world, serial.world)


def test_cut_counts_and_halo_volume():
    prob = _problem()
    lay = PartitionLayout(prob.muscle.dims, (4, 2, 1))
    sim = ParallelSimulation(prob, lay)
    assert sim.plan.entries("v_m-interface") == 2 * (lay.p[0] - 1) * prob.n_fibers
    sim.run(0.05)
    cm = boundary_metrics(lay)
    assert sim.mail.bytes["displacement"] == sim.plan.volume("displacement", GHOST_BYTES)
    assert sim.mail.bytes["displacement"] == sum(cm.ghost_elements) * GHOST_BYTES


def test_pillar_has_no_interface_traffic():
    prob = _problem(scheme="strang")
    sim = ParallelSimulation(prob, PartitionLayout(prob.muscle.dims, (1, 2, 2), "pillar"))
    sim.run(0.05)
    assert sim.plan.entries("v_m-interface") == 0
    assert sim.mail.bytes.get("v_m-interface", 0) == 0
    assert sim.mail.bytes["displacement"] > 0


def test_layout_must_match_mesh():
    prob = _problem()
    with pytest.raises(ValueError):
        ParallelSimulation(prob, PartitionLayout((2, 2, 2), (1, 1, 1)))


def test_timing_report():
    prob = _problem()
    sim = ParallelSimulation(prob, PartitionLayout(prob.muscle.dims, (2, 2, 1)))
    sim.run(0.05)
    rep = sim.report()
    rows = rep.rows("exp")
    assert [r[5] for r in rows] == list(COMPONENTS)
    assert all(r[:5] == ["exp", 4, 2, 2, 1] for r in rows)
    for s in rep.seconds:
        assert s["total"] >= sum(v for k, v in s.items() if k != "total") - 1e-12
    assert min(rep.bytes_peak) > 0
    single = run_scenario(Scenario({"t_end": 0.05, "schedule": {"dt_3d": 0.05}}))
    assert single.report.comm_seconds == [0.0] and single.summary["comm_bytes"] == {}


def test_scaling_ladder_rows_and_skips():
    ladder = ((1, (2, 2, 2)), (2, (4, 2, 2)), (7, (2, 2, 2)))
    t = run_scaling_experiment(ladder, t_end=0.05)
    assert len(t.rows) == 2 * len(COMPONENTS)
    assert [s["workers"] for s in t.meta["skipped"]] == [7]
    assert sorted({r[1] for r in t.rows}) == [1, 2]
