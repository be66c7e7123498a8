import re
from pathlib import Path

import pytest

from capspace.errors import ParseError, TooLarge, UnknownParameter, ValidationError
from capspace.harness import cli
from capspace.harness.checks import check_convergence, check_serializable, check_staleness
from capspace.harness.run import (
    availability_from_history,
    dump_states,
    read_history,
    read_jsonl,
    run,
    txn_from_json,
    txn_to_json,
    write_outputs,
)
from capspace.harness.scenario import load_scenario, loads
from capspace.harness.sweep import sweep, with_partition_duration
from capspace.lattice import Assign, GCounter, Increment, Kind, LWWRegister, bottom, update
from capspace.policy import Spry
from capspace.txn import Read, TxnRecord, Write

SCN = Path(__file__).resolve().parent.parent / "scenarios"
FIXTURES = sorted(SCN.glob("*.scn"))

MINIMAL = """
[nodes]
count 1
[registers]
register r kind=gset primary=0 replicas=0 policy=lasp
[workload]
0 0 (store r (add 1))
"""


def test_minimal_scenario_parses():
    s = loads(MINIMAL)
    assert s.n_nodes == 1 and len(s.registers) == 1 and len(s.workload) == 1
    assert run(s).history[0].value == "#{1}"


def test_cap_demo_parses():
    s = load_scenario(SCN / "cap_demo.scn")
    assert s.n_nodes == 3
    assert s.partition_windows() == [(100, 300)]
    assert {w.deadline for w in s.workload} == {50}


@pytest.mark.parametrize("path", FIXTURES, ids=lambda p: p.stem)
def test_render_round_trip(path):
    s = load_scenario(path)
    again = loads(s.render(), name=s.name)
    strip = lambda sc: (sc.n_nodes, sc.link, sc.registers, [(w.time, w.node, w.program, w.deadline) for w in sc.workload],
                        [f.render() for f in sc.faults], sc.horizon, sc.seed, sc.gossip)  # noqa: E731
    assert strip(again) == strip(s)


@pytest.mark.parametrize(
    "body,err,line",
    [
        ("[nodes]\ncount 2\n[workload]\n5 0 (deref nope)\n", ValidationError, 4),
        ("[nodes]\ncount 3\n[faults]\n10 partition 0 1 | 1 2\n", ValidationError, 4),
        ("[nodes]\ncount 1\n[registers]\nregister r kind=gset primary=0 replicas=0 policy=spry\n", ValidationError, 4),
        ("[nodes]\ncount 1\n[registers]\nregister r kind=bag primary=0 replicas=0\n", ValidationError, 4),
        ("[nodes]\ncount 1\n[registers]\nregister r kind=gset primary=1 replicas=0\n", ValidationError, 4),
        ("[nodes]\ncount x\n", ParseError, 2),
        ("count 1\n", ParseError, 1),
        ("[nodes]\ncount 1\n[bogus]\n", ParseError, 3),
        ("[nodes]\ncount 1\n[workload]\n1 0 (deref\n", ParseError, 4),
        ("[nodes]\ncount 1\n[workload]\n1 0 (app (lam x y) 1)\n", ValidationError, 4),
        ("[nodes]\ncount 1\n[links]\nlatency uniform 9 2\n", ValidationError, 4),
        ("[nodes]\ncount 1\n[links]\ndrop 1.5\n", ValidationError, 4),
        ("[nodes]\ncount 2\n[faults]\n10 crash 5\n", ValidationError, 4),
        ("[nodes]\ncount 2\n[faults]\n10 explode\n", ParseError, 4),
        ("[nodes]\ncount 1\n[run]\nhorizon 10\n[workload]\n\n\n50 0 1\n", ValidationError, 8),
    ],
)
def test_scenario_errors_carry_line_numbers(body, err, line):
    with pytest.raises(err) as e:
        loads(body)
    assert e.value.line == line
    assert str(e.value).startswith(f"line {line}:")


def test_missing_node_count():
    with pytest.raises(ValidationError):
        loads("[run]\nseed 1\n")


# -- run -------------------------------------------------------------------------


def cap():
    return load_scenario(SCN / "cap_demo.scn")


def hand_count_outside_window(s, start=100, end=300):
    return sum(not start <= w.time < end for w in s.workload) / len(s.workload)


def test_cap_demo_lasp_fully_available():
    assert run(cap().with_policy("lasp")).metrics.availability == 1.0
    assert run(cap().with_policy("lasp"), seed=12345).metrics.availability == 1.0


def test_cap_demo_austere_matches_hand_count():
    s = cap().with_policy("austere")
    res = run(s)
    assert res.metrics.availability == hand_count_outside_window(s) == 12 / 16
    for h in res.history:
        assert h.available == (not 100 <= h.invoked < 300)


def test_metric_consistency():
    for path in FIXTURES:
        res = run(load_scenario(path))
        assert res.metrics.availability == pytest.approx(availability_from_history(res.history), abs=0)
        assert res.metrics.available == sum(h.available for h in res.history)


def test_replay_is_byte_identical(tmp_path):
    for path in FIXTURES:
        a = write_outputs(run(load_scenario(path)), tmp_path / "a" / path.stem)
        b = write_outputs(run(load_scenario(path)), tmp_path / "b" / path.stem)
        for f in ("trace.txt", "history.tsv", "metrics.tsv", "states.jsonl", "txns.jsonl"):
            assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_history_file_round_trip(tmp_path):
    res = run(load_scenario(SCN / "spry_cdn.scn"))
    out = write_outputs(res, tmp_path)
    back = read_history(out / "history.tsv")
    assert [(h.op, h.status, h.value, h.latency, h.available) for h in back] == [
        (h.op, h.status, h.value, h.latency, h.available) for h in res.history
    ]
    assert [[(a.reg, a.age, a.wait, a.policy) for a in h.accesses] for h in back] == [
        [(a.reg, a.age, a.wait, a.policy) for a in h.accesses] for h in res.history
    ]
    txns = [txn_from_json(d) for d in read_jsonl(out / "txns.jsonl")]
    assert [txn_to_json(t) for t in txns] == [txn_to_json(t) for t in res.txns]


def test_trace_has_no_cross_partition_delivery():
    res = run(cap())
    for line in res.trace:
        m = re.search(r"kind=deliver .*from=(\d) to=(\d) sent=(\d+)", line)
        if m:
            a, b, sent = int(m.group(1)), int(m.group(2)), int(m.group(3))
            if 100 <= sent < 300:
                assert (a == 0) == (b == 0), line


def test_austere_never_commits_across_partition():
    res = run(cap().with_policy("austere"))
    for line in res.trace:
        m = re.match(r"t=(\d+) .*kind=txn .* commit$", line)
        if m:
            assert not 100 <= int(m.group(1)) < 300, line


def test_austere_single_system_image_at_quiescence():
    res = run(load_scenario(SCN / "austere_counter.scn"))
    for reg in res.store.registers:
        assert len(set(res.store.replica_values(reg).values())) == 1


def test_lasp_ops_never_wait():
    res = run(load_scenario(SCN / "convergence.scn"))
    for h in res.history:
        assert all(a.wait in (0, None) for a in h.accesses)


# -- checkers -----------------------------------------------------------------------


def test_convergence_no_updates_passes():
    final = {"r": {0: bottom("gset"), 1: bottom("gset")}}
    assert check_convergence(final, [], {"r": Kind.GSET}).ok


def test_convergence_diverged_then_healed_passes():
    res = run(load_scenario(SCN / "convergence.scn"))
    d = dump_states(res.store)
    assert check_convergence(d.final, d.updates, d.kinds).ok


def test_convergence_corrupted_replica_fails():
    res = run(load_scenario(SCN / "convergence.scn"))
    res.store.corrupt(1, "likes", bottom("gcounter"))
    d = dump_states(res.store)
    rep = check_convergence(d.final, d.updates, d.kinds)
    assert not rep.ok
    assert len(rep.diffs) == 1 and rep.diffs[0].startswith("reg=likes node=1 ")


def _txn(id, coord, *ops):
    return TxnRecord(id, coord, tuple(ops), 0)


def test_serializable_non_conflicting_either_order():
    kinds = {"a": Kind.GCOUNTER, "b": Kind.GCOUNTER}
    t1 = _txn("T1", 0, (Write("a", Increment(0)), None))
    t2 = _txn("T2", 1, (Write("b", Increment(1)), None))
    final = {"a": GCounter({0: 1}), "b": GCounter({1: 1})}
    for order in ([t1, t2], [t2, t1]):
        rep = check_serializable(order, final, kinds)
        assert rep.ok and set(rep.witness) == {"T1", "T2"}


@pytest.mark.parametrize("n", [1, 4, 8])
def test_serializable_n_increments(n):
    txns = [
        _txn(f"T{i}", i % 3, (Read("r"), i), (Write("r", Increment(i % 3)), None)) for i in range(n)
    ]
    final = GCounter({})
    for t in txns:
        final = update(final, t.ops[1][0].op)
    rep = check_serializable(list(reversed(txns)), {"r": final}, {"r": Kind.GCOUNTER})
    assert rep.ok and rep.witness == tuple(f"T{i}" for i in range(n))


def test_lost_update_is_not_serializable():
    txns = [
        _txn("T1", 1, (Read("r"), 0), (Write("r", Assign(1, 5, 1)), None)),
        _txn("T2", 2, (Read("r"), 0), (Write("r", Assign(1, 6, 2)), None)),
    ]
    # r started as LWW 0 and both writers saw 0
    initial = {"r": LWWRegister(0, 0, 0)}
    final = {"r": LWWRegister(6, 2, 1)}
    assert not check_serializable(txns, final, {"r": Kind.LWW}, initial).ok


def test_serializable_too_large():
    txns = [_txn(f"T{i}", 0, (Read("r"), 0)) for i in range(9)]
    with pytest.raises(TooLarge):
        check_serializable(txns, {"r": bottom("gcounter")}, {"r": Kind.GCOUNTER})


def test_serializable_rejects_wrong_final_state():
    t = _txn("T1", 0, (Write("r", Increment(0)), None))
    assert not check_serializable([t], {"r": GCounter({0: 2})}, {"r": Kind.GCOUNTER}).ok


def test_staleness_fixture_run_clean():
    res = run(load_scenario(SCN / "spry_cdn.scn"))
    assert any(a.source == "fallback" for h in res.history for a in h.accesses)
    assert any(a.source == "refresh" for h in res.history for a in h.accesses)
    assert check_staleness(res.history) == []


def test_staleness_forged_violation():
    rows = read_history(SCN / "controls" / "stale" / "history.tsv")
    got = {(v.op, v.bound) for v in check_staleness(rows)}
    assert got == {(2, "staleness"), (4, "latency"), (5, "staleness")}


def test_staleness_vacuous_without_spry():
    res = run(load_scenario(SCN / "convergence.scn"))
    assert check_staleness(res.history) == []


def test_staleness_policy_override_applies():
    res = run(cap())  # Lasp: reads are served at whatever age
    ages = [a.age for h in res.history for a in h.accesses if a.kind == "read"]
    got = check_staleness(res.history, {"r1": Spry(max_staleness=100)})
    assert len(got) == sum(age > 100 for age in ages) > 0


# -- sweep ---------------------------------------------------------------------------


def test_sweep_table():
    table = sweep(cap(), "partition-duration", [0, 100, 200])
    assert table.column("availability[lasp]") == [1.0, 1.0, 1.0]
    aus = table.column("availability[austere mode=pure]")
    assert all(a >= b for a, b in zip(aus, aus[1:]))
    assert aus[0] == 1.0 and aus[-1] < 1.0
    assert table.to_tsv().splitlines()[0].split("\t") == table.columns()


def test_sweep_empty_and_unknown():
    assert sweep(cap(), "partition-duration", []).records() == []
    with pytest.raises(UnknownParameter):
        sweep(cap(), "latency", [1])


def test_partition_duration_rewrites_faults():
    s = with_partition_duration(cap(), 50)
    assert s.partition_windows() == [(100, 150)]
    assert with_partition_duration(cap(), 0).partition_windows() == []


# -- CLI -----------------------------------------------------------------------------


def test_cli_run_check_sweep(tmp_path, capsys):
    assert cli.main(["run", "--scenario", str(SCN / "cap_demo.scn"), "--out", str(tmp_path)]) == 0
    for kind in ("convergence", "serializable", "staleness"):
        assert cli.main(["check", "--history", str(tmp_path / "history.tsv"), "--kind", kind]) == 0
    assert cli.main([
        "sweep", "--scenario", str(SCN / "cap_demo.scn"), "--param", "partition-duration",
        "--values", "0,100", "--out", str(tmp_path),
    ]) == 0
    assert (tmp_path / "sweep.tsv").read_text().count("\n") == 3
    assert cli.main(["sweep", "--scenario", str(SCN / "cap_demo.scn"), "--param", "nope",
                     "--values", "1", "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_cli_until_and_seed(tmp_path):
    assert cli.main(["run", "--scenario", str(SCN / "cap_demo.scn"), "--seed", "9",
                     "--until", "200", "--out", str(tmp_path)]) == 0
    last = (tmp_path / "trace.txt").read_text().splitlines()[-1]
    assert int(last.split()[0][2:]) <= 200


@pytest.mark.parametrize(
    "control,kind",
    [("corrupted", "convergence"), ("lost_update", "serializable"), ("stale", "staleness")],
)
def test_cli_negative_controls_fail(control, kind, capsys):
    path = SCN / "controls" / control / "history.tsv"
    assert cli.main(["check", "--history", str(path), "--kind", kind]) == 1
    capsys.readouterr()


def test_cli_bad_scenario_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("[nodes]\ncount 2\n[workload]\n5 0 (deref nope)\n")
    assert cli.main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 4:" in capsys.readouterr().err


@pytest.mark.parametrize("path", FIXTURES, ids=lambda p: p.stem)
def test_op_latency_is_sum_of_interposition_waits(path):
    for policy in (None, "lasp", "austere", "spry latency=30", "spry staleness=50"):
        s = load_scenario(path)
        res = run(s if policy is None else s.with_policy(policy))
        for h in res.history:
            if h.status == "completed":
                assert h.latency == sum(a.wait for a in h.accesses), (policy, h)
