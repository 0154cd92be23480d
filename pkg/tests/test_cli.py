import numpy as np
import pytest
import yaml

from subsim_abc import cli
from subsim_abc.io import load_run, read_manifest, read_table
from subsim_abc.models import toy_model, toy_posterior
from subsim_abc.sampler import SubSimRun


def _cfg(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def _run(tmp_path, cfg, command, *extra, out="out"):
    return cli.main([command, "--config", _cfg(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


TOY = {
    "model": {"name": "toy"},
    "data": {"values": [1.0]},
    "sampler": {"n_per_level": 500, "eps_target": 0.01, "master_seed": 5},
}


def _summary(path):
    rows = {}
    for line in path.read_text().splitlines():
        parts = line.split("\t")
        if len(parts) >= 2:
            rows[parts[0]] = parts[1:]
    return rows


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "cfg",
    [
        {"model": {"name": "toy"}, "bogus": 1},
        {"model": {"name": "toy", "colour": "red"}},
        {"model": {"name": "quadratic"}},
        {"model": {"name": "toy"}, "sampler": {"p0": 1.5}},
        {"model": {"name": "toy"}, "sampler": {"proposal_spread": "chains"}},
        {"data": {"values": [1.0]}},
    ],
)
def test_schema_rejects(tmp_path, cfg, capsys):
    assert _run(tmp_path, cfg, "infer") == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    assert cli.main(["infer", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed\n")
    assert cli.main(["infer", "--config", str(bad)]) == cli.EXIT_CONFIG


def test_bad_flags(tmp_path):
    assert _run(tmp_path, TOY, "infer", "--threads", "0") == cli.EXIT_CONFIG
    assert _run(tmp_path, TOY, "infer", "--seed", "-1") == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        cli.main(["fly", "--config", "x"])
    assert exc.value.code == 2


def test_exponent_floats_parse():
    cfg = yaml.load("a: 1e-3\nb: 2\nc: 1.5\n", Loader=cli._Loader)
    assert cfg == {"a": 1e-3, "b": 2, "c": 1.5}
    assert isinstance(cfg["a"], float) and isinstance(cfg["b"], int)


def test_toy_options_checked(tmp_path):
    cfg = {"model": {"name": "toy", "free": ["k1"]}, "data": {"values": [1.0]}}
    assert _run(tmp_path, cfg, "infer") == cli.EXIT_CONFIG
    cfg = {"model": {"name": "bilinear", "class": "M1"}, "data": {"values": [1.0]}}
    assert _run(tmp_path, cfg, "infer") == cli.EXIT_CONFIG  # no motion


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


BILINEAR = {
    "model": {"name": "bilinear", "free": ["k1", "k2", "z_y", "c"]},
    "data": {"motion": {"surrogate": "elcentro", "scale": 0.1}},
}


def test_simulate_bilinear_peak(tmp_path):
    assert _run(tmp_path, BILINEAR, "simulate") == cli.EXIT_OK
    header, arr = read_table(tmp_path / "out" / cli.RESPONSE_FILE)
    assert header == ["step", "time", "ch1"]
    assert np.abs(arr[:, 2]).max() == pytest.approx(0.01875, rel=0.01)
    h, hy = read_table(tmp_path / "out" / cli.HYSTERESIS_FILE)
    assert h == ["deflection1", "force1"] and hy.shape[0] == arr.shape[0]
    assert (tmp_path / "out" / cli.ENERGY_FILE).exists()


def test_simulate_zero_motion(tmp_path):
    (tmp_path / "zero.txt").write_text("".join(f"{0.02 * i!r},0.0\n" for i in range(200)))
    cfg = {**BILINEAR, "data": {"motion": {"file": "zero.txt"}}}
    assert _run(tmp_path, cfg, "simulate") == cli.EXIT_OK
    _, arr = read_table(tmp_path / "out" / cli.RESPONSE_FILE)
    assert np.all(arr[:, 2] == 0.0)


def test_simulate_masing_smoke(tmp_path):
    cfg = {"model": {"name": "masing", "class": "M2"}, "data": {"motion": {"surrogate": "sylmar"}}}
    assert _run(tmp_path, cfg, "simulate") == cli.EXIT_OK
    header, arr = read_table(tmp_path / "out" / cli.RESPONSE_FILE)
    assert header[2:] == ["ch1", "ch2", "ch3"]
    assert np.all(np.isfinite(arr)) and np.abs(arr[:, 2:]).max() > 0


def test_simulate_divergence_exit(tmp_path):
    cfg = {
        "model": {"name": "bilinear", "free": ["k1"], "fixed": {"k2": 1e12, "m": 1.0},
                  "theta": {"k1": 1e12}},
        "data": {"motion": {"surrogate": "elcentro", "scale": 0.1}},
    }
    assert _run(tmp_path, cfg, "simulate") == cli.EXIT_RUNTIME


def test_simulate_rejects_toy(tmp_path):
    assert _run(tmp_path, TOY, "simulate") == cli.EXIT_CONFIG


# ---------------------------------------------------------------------------
# synth and infer
# ---------------------------------------------------------------------------


def test_synth_writes_dataset(tmp_path):
    cfg = {**BILINEAR, "data": {**BILINEAR["data"], "synth": {"noise_ratio": 0.05, "seed": 7}}}
    assert _run(tmp_path, cfg, "synth") == cli.EXIT_OK
    man = read_manifest(tmp_path / "out" / cli.MANIFEST_FILE)
    assert man["command"] == "synth" and len(man["dataset_digest"]) == 64
    assert _run(tmp_path, cfg, "synth", out="again") == cli.EXIT_OK
    a = (tmp_path / "out" / cli.DATASET_FILE).read_bytes()
    assert a == (tmp_path / "again" / cli.DATASET_FILE).read_bytes()


@pytest.fixture(scope="module")
def toy_out(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("toy")
    assert _run(tmp, TOY, "infer") == cli.EXIT_OK
    return tmp


def test_infer_outputs(toy_out):
    out = toy_out / "out"
    for name in (cli.RUN_FILE, cli.SAMPLES_FILE, cli.SUMMARY_FILE, cli.EVIDENCE_FILE, cli.MANIFEST_FILE):
        assert (out / name).exists(), name
    s = _summary(out / cli.SUMMARY_FILE)
    run = load_run(out / cli.RUN_FILE)
    assert int(s["levels"][0]) == run.n_levels
    assert s["stop_reason"][0] == "EpsTarget"


def test_infer_toy_matches_conjugate(toy_out):
    s = _summary(toy_out / "out" / cli.SUMMARY_FILE)
    mean, sd = toy_posterior(toy_model(), [1.0])
    n = int(s["n_posterior"][0])
    got = float(s["theta"][0])
    assert abs(got - mean) < 3 * sd / np.sqrt(n)


def test_manifest_revalidates(toy_out):
    man = read_manifest(toy_out / "out" / cli.MANIFEST_FILE)
    assert cli.validate_config(man["config"]) == man["config"]
    assert man["master_seed"] == 5


def test_infer_deterministic_across_threads(tmp_path, toy_out):
    assert _run(tmp_path, TOY, "infer", "--threads", "4") == cli.EXIT_OK
    for name in (cli.RUN_FILE, cli.SAMPLES_FILE, cli.SUMMARY_FILE, cli.EVIDENCE_FILE):
        assert (tmp_path / "out" / name).read_bytes() == (toy_out / "out" / name).read_bytes()


def test_seed_flag_overrides(tmp_path, toy_out):
    assert _run(tmp_path, TOY, "infer", "--seed", "6") == cli.EXIT_OK
    a = (tmp_path / "out" / cli.SAMPLES_FILE).read_bytes()
    assert a != (toy_out / "out" / cli.SAMPLES_FILE).read_bytes()
    assert read_manifest(tmp_path / "out" / cli.MANIFEST_FILE)["master_seed"] == 6


def test_infer_failure_flushes_levels(tmp_path, monkeypatch):
    def failing(model, data, config, threads, callback):
        run = SubSimRun(model.name, config, [], None, model.param_names, data.digest(), data.size)
        callback(run)
        raise cli.SimulationDivergence(17, "blew up")

    monkeypatch.setattr(cli, "run_abc_subsim", failing)
    assert _run(tmp_path, TOY, "infer") == cli.EXIT_RUNTIME
    assert load_run(tmp_path / "out" / cli.RUN_FILE).n_levels == 0


# ---------------------------------------------------------------------------
# evidence and compare
# ---------------------------------------------------------------------------


def _with(section, **kw):
    return {**TOY, section: kw}


def test_evidence_at_first_tolerance(tmp_path, toy_out):
    run_path = str(toy_out / "out" / cli.RUN_FILE)
    e1 = load_run(run_path).levels[0].tolerance
    assert _run(tmp_path, _with("evidence", run=run_path, eps=[e1]), "evidence") == cli.EXIT_OK
    header, arr = read_table(tmp_path / "out" / cli.EVIDENCE_FILE)
    assert header == ["epsilon", "prob", "log_evidence"]
    assert arr.shape[0] == 1 and arr[0, 1] == pytest.approx(0.2)


def test_evidence_grid_monotone(tmp_path, toy_out):
    run_path = str(toy_out / "out" / cli.RUN_FILE)
    assert _run(tmp_path, _with("evidence", run=run_path, grid=15), "evidence") == cli.EXIT_OK
    _, arr = read_table(tmp_path / "out" / cli.EVIDENCE_FILE)
    assert arr.shape[0] == 15
    assert np.all(np.diff(arr[:, 0]) < 0) and np.all(np.diff(arr[:, 1]) <= 0)


def test_evidence_out_of_range(tmp_path, toy_out):
    run_path = str(toy_out / "out" / cli.RUN_FILE)
    with pytest.warns(UserWarning, match="skipped"):
        code = _run(tmp_path, _with("evidence", run=run_path, eps=[0.5, 1e-9]), "evidence")
    assert code == cli.EXIT_OK
    assert read_table(tmp_path / "out" / cli.EVIDENCE_FILE)[1].shape[0] == 1
    with pytest.warns(UserWarning):
        code = _run(tmp_path, _with("evidence", run=run_path, eps=[1e-9]), "evidence", out="o2")
    assert code == cli.EXIT_CONFIG


def test_evidence_bad_run_file(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"nope" * 20)
    cfg = _with("evidence", run=str(tmp_path / "junk.bin"))
    assert _run(tmp_path, cfg, "evidence") == cli.EXIT_CONFIG


def test_compare_two_copies(tmp_path, toy_out):
    run_path = str(toy_out / "out" / cli.RUN_FILE)
    assert _run(tmp_path, _with("compare", runs=[run_path, run_path]), "compare") == cli.EXIT_OK
    lines = (tmp_path / "out" / cli.COMPARE_FILE).read_text().splitlines()
    assert lines[0].split("\t") == ["model", "final_tolerance", "levels", "log_evidence", "posterior"]
    assert [float(x.split("\t")[-1]) for x in lines[1:]] == [0.5, 0.5]
    header, curve = read_table(tmp_path / "out" / cli.COMPARE_CURVE_FILE)
    assert header == ["epsilon", "toy#1", "toy#2"]
    assert np.all(curve[:, 1:] == 0.5)


def test_compare_refuses_different_data(tmp_path, toy_out):
    other = {**TOY, "data": {"values": [1.5]}}
    assert _run(tmp_path, other, "infer", out="other") == cli.EXIT_OK
    runs = [str(toy_out / "out" / cli.RUN_FILE), str(tmp_path / "other" / cli.RUN_FILE)]
    assert _run(tmp_path, _with("compare", runs=runs), "compare") == cli.EXIT_CONFIG


def test_compare_prior_count_checked(tmp_path, toy_out):
    run_path = str(toy_out / "out" / cli.RUN_FILE)
    cfg = _with("compare", runs=[run_path, run_path], priors=[1.0])
    assert _run(tmp_path, cfg, "compare") == cli.EXIT_CONFIG


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


def test_plot_two_points(tmp_path):
    (tmp_path / "t.tsv").write_text("epsilon\tprob\n1.0\t0.2\n0.1\t0.04\n")
    assert _run(tmp_path, _with("plot", tables=["t.tsv"]), "plot") == cli.EXIT_OK
    svg = (tmp_path / "out" / "t.svg").read_text()
    assert svg.count("<polyline") == 1 and svg.startswith("<svg")


def test_plot_three_series(tmp_path):
    (tmp_path / "c.tsv").write_text("epsilon\tM1\tM2\tM3\n1\t0.3\t0.3\t0.4\n0.1\t0.6\t0.1\t0.3\n")
    assert _run(tmp_path, _with("plot", tables=["c.tsv"]), "plot") == cli.EXIT_OK
    svg = (tmp_path / "out" / "c.svg").read_text()
    assert svg.count("<polyline") == 3
    for name in ("M1", "M2", "M3"):
        assert f"<title>{name}</title>" in svg


@pytest.mark.parametrize("text", ["", "epsilon\tprob\n", "epsilon\tprob\n1\tx\n"])
def test_plot_malformed(tmp_path, text):
    (tmp_path / "t.tsv").write_text(text)
    assert _run(tmp_path, _with("plot", tables=["t.tsv"]), "plot") == cli.EXIT_CONFIG


def test_plot_defaults_to_outputs(tmp_path, toy_out):
    cfg = {**TOY, "output": {"dir": str(toy_out / "out")}}
    assert cli.main(["plot", "--config", _cfg(tmp_path, cfg)]) == cli.EXIT_OK
    assert (toy_out / "out" / "evidence.svg").exists()
