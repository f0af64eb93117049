import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from yflow import checkpoint as ckpt_io
from yflow.cli import main
from yflow.diagnostics import displacement_profile, path_lengths
from yflow.evaluation import distribution_metrics, rollout, sample_endpoints, source_points
from yflow.integrate import integrate, uniform_grid
from yflow.training import load_run

TINY = """\
method = {method}
net.hidden_width = 8
net.hidden_layers = 2
net.time_embed_dim = 4
grid.steps = 4
optim.batch_size = 16
optim.iterations = {iterations}
sinkhorn.iterations = 30
eval.samples = 64
"""


def write_cfg(path, method="yflow", iterations=6, extra=""):
    path.write_text(TINY.format(method=method, iterations=iterations) + extra)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_cfg(root / "run.cfg", extra="output.checkpoint_every = 2\n")
    assert main(["train", str(cfg), "--out", str(root / "out")]) == 0
    return root


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_writes_all_artifacts(trained):
    out = trained / "out"
    assert (out / "config.txt").read_text() == (trained / "run.cfg").read_text()
    rows = read_rows(out / "loss.csv")
    assert rows[0] == ["iteration", "total", "action", "sinkhorn", "sobolev"]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 7))
    assert all(r[4] == "" for r in rows[1:])
    assert sorted(p.name for p in out.glob("*.bin")) == ["ckpt_000002.bin", "ckpt_000004.bin", "final.bin"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == 6 and summary["lipschitz_estimate"] > 0
    ck = ckpt_io.load(out / "final.bin")
    assert ck.iteration == 6 and ck.stats["last_total"] == float(rows[-1][1])


def test_zero_iterations(tmp_path):
    cfg = write_cfg(tmp_path / "z.cfg", iterations=0)
    assert main(["train", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "loss.csv").read_text() == "iteration,total,action,sinkhorn,sobolev\n"
    assert [p.name for p in (tmp_path / "o").glob("*.bin")] == ["final.bin"]
    config, net, ck = load_run(tmp_path / "o" / "final.bin")
    assert ck.iteration == 0 and ck.stats == {}
    from yflow.velocity import VelocityNet
    init = VelocityNet.initialize(config.velocity_config, config.seed.init)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net.arrays(), init.arrays()))


@pytest.mark.parametrize("method,extra", [
    ("yflow", ""),
    ("yflow-sobolev", "action.lambda_sobolev = 0.1\n"),
    ("yflow-mm", "action.mm_epsilon = 0.1\naction.mm_gamma1 = 1.0\naction.mm_gamma2 = 1.0\n"),
    ("ot-cfm", "flow.sigma = 0.1\n"),
])
def test_rerun_is_bitwise(tmp_path, method, extra):
    cfg = write_cfg(tmp_path / "c.cfg", method, 4, extra)
    for name in ("a", "b"):
        assert main(["train", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("final.bin", "loss.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_thread_count_does_not_change_results(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", iterations=3)
    for threads in ("1", "4"):
        env = dict(os.environ, YFLOW_THREADS=threads)
        subprocess.run([sys.executable, "-m", "yflow", "train", str(cfg), "--out", str(tmp_path / threads)],
                       check=True, env=env, capture_output=True)
    assert (tmp_path / "1" / "final.bin").read_bytes() == (tmp_path / "4" / "final.bin").read_bytes()


def test_bad_thread_cap_is_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("YFLOW_THREADS", "zero")
    assert main(["train", str(write_cfg(tmp_path / "c.cfg")), "--out", str(tmp_path / "o")]) == 2


def test_sample_at_training_grid_matches_training_endpoints(trained, tmp_path):
    ck = trained / "out" / "final.bin"
    out = tmp_path / "s.csv"
    assert main(["sample", str(ck), "--n", "20", "--steps", "4", "--seed", "3", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["x1", "x2"]
    got = np.array(rows[1:], dtype=float)
    config, net, _ = load_run(ck)
    x0 = source_points(config, 20, 3)
    ref = integrate(net, x0, uniform_grid(config.grid.steps)).endpoints.value
    assert np.array_equal(got, ref)


def test_sample_zero_points(trained, tmp_path):
    out = tmp_path / "e.csv"
    assert main(["sample", str(trained / "out" / "final.bin"), "--n", "0", "--out", str(out)]) == 0
    assert out.read_text() == "x1,x2\n"


def test_sample_rejects_dimension_mismatch(trained):
    _, net, _ = load_run(trained / "out" / "final.bin")
    with pytest.raises(ValueError, match="d = 2"):
        sample_endpoints(net, np.zeros((3, 5)), 2)


def test_export_layout_and_recurrence(trained, tmp_path):
    out = tmp_path / "t.csv"
    n, K = 7, 5
    assert main(["export-traj", str(trained / "out" / "final.bin"), "--n", str(n), "--steps", str(K),
                 "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["particle", "k", "t", "x1", "x2", "speed"]
    data = np.array(rows[1:], dtype=float)
    assert len(data) == n * (K + 1)
    assert [tuple(r) for r in data[:, :2]] == sorted(tuple(r) for r in data[:, :2])
    config, net, _ = load_run(trained / "out" / "final.bin")
    grid = uniform_grid(K)
    for p in range(n):
        block = data[data[:, 0] == p]
        assert np.array_equal(block[:, 2], grid.knots)
        x = block[:, 3:5]
        for k in range(K):
            v = net(x[k : k + 1], grid.knots[k]).value[0]
            assert np.max(np.abs(x[k + 1] - (x[k] + grid.steps[k] * v))) <= 1e-12
            assert abs(block[k, 5] - np.linalg.norm(v)) <= 1e-12


def test_export_zero_field_keeps_particles_still(trained, tmp_path):
    ck = ckpt_io.load(trained / "out" / "final.bin")
    ck.params[-2] = np.zeros_like(ck.params[-2])
    ck.params[-1] = np.zeros_like(ck.params[-1])
    ckpt_io.save(tmp_path / "zero.bin", ck)
    out = tmp_path / "t.csv"
    assert main(["export-traj", str(tmp_path / "zero.bin"), "--n", "4", "--steps", "3", "--out", str(out)]) == 0
    data = np.array(read_rows(out)[1:], dtype=float)
    for p in range(4):
        block = data[data[:, 0] == p, 3:5]
        assert np.all(block == block[0])
    assert np.all(data[:, 5] == 0)


def test_eval_json(trained, tmp_path):
    out = tmp_path / "m.json"
    assert main(["eval", str(trained / "out" / "final.bin"), "--steps", "4", "--seed", "1", "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())
    assert json.loads(json.dumps(metrics)) == metrics
    for key in ("W1", "W2", "MMD", "sinkhorn"):
        assert np.isfinite(metrics[key])
    assert metrics["settings"]["steps"] == 4


def test_eval_against_csv(trained, tmp_path):
    pts = np.random.default_rng(0).normal(size=(30, 2))
    np.savetxt(tmp_path / "d.csv", pts, delimiter=",")
    out = tmp_path / "m.json"
    assert main(["eval", str(trained / "out" / "final.bin"), "--data", str(tmp_path / "d.csv"),
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["settings"]["data"] == str(tmp_path / "d.csv")


def test_target_self_distance_is_small():
    rng = np.random.default_rng(1)
    # two independent draws from one standardized cloud
    a, b = rng.normal(size=(2048, 2)), rng.normal(size=(2048, 2))
    m = distribution_metrics(a, b, seed=0)
    assert m["W1"] < 0.1 and m["MMD"] < 0.05
    same = distribution_metrics(a, a, seed=0)
    assert same["W1"] == 0.0 and same["W2"] == 0.0 and same["MMD"] < 1e-7


def test_metrics_ignore_sample_order():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(300, 2)), rng.normal(size=(300, 2)) + 1
    perm = rng.permutation(300)
    m1, m2 = distribution_metrics(a, b, seed=0), distribution_metrics(a[perm], b[::-1], seed=0)
    for key in ("W1", "W2", "MMD", "sinkhorn"):
        assert m1[key] == m2[key]


def test_displacement_profile_telescopes(trained):
    config, net, _ = load_run(trained / "out" / "final.bin")
    pos = rollout(net, source_points(config, 50, 0), 9).positions
    assert abs(displacement_profile(pos).sum() - path_lengths(pos).mean()) <= 1e-9


def test_compare_self_gives_identical_sides(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", iterations=2)
    out = tmp_path / "cmp.json"
    assert main(["compare", str(cfg), str(cfg), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["A"] == report["B"]
    assert abs(sum(report["A"]["displacement"]) - report["A"]["mean_path_length"]) <= 1e-9
    assert (tmp_path / "cmp_runs" / "A" / "final.bin").exists()


def test_compare_rejects_mismatched_architecture(tmp_path):
    a = write_cfg(tmp_path / "a.cfg")
    b = write_cfg(tmp_path / "b.cfg").read_text().replace("net.hidden_width = 8", "net.hidden_width = 9")
    (tmp_path / "b.cfg").write_text(b)
    assert main(["compare", str(a), str(tmp_path / "b.cfg"), "--out", str(tmp_path / "x.json")]) == 2


@pytest.mark.parametrize("text", ["optim.lr = fast\n", "bogus.key = 1\n", "method = sgd\n"])
def test_invalid_config_exits_2(tmp_path, text, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    assert main(["train", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_inputs_exit_2(tmp_path):
    assert main(["train", str(tmp_path / "nope.cfg")]) == 2
    assert main(["sample", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "s.csv")]) == 2


def test_non_finite_loss_exits_3_with_iteration(tmp_path, capsys):
    # states this large overflow on the first Euler step
    np.savetxt(tmp_path / "s.csv", np.full((4, 2), 1e308), delimiter=",")
    np.savetxt(tmp_path / "t.csv", np.zeros((4, 2)), delimiter=",")
    extra = f"data.kind = csv\ndata.source_csv = {tmp_path / 's.csv'}\ndata.target_csv = {tmp_path / 't.csv'}\n"
    cfg = write_cfg(tmp_path / "c.cfg", iterations=3, extra=extra)
    assert main(["train", str(cfg), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "iteration 1" in err
