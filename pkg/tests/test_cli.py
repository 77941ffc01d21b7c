import json

import pytest

from robhedge.cli import main
from robhedge.config import ConfigError, ExperimentConfig, build_config, load_config, parse_text

TINY = """
# small settings so every command runs in seconds
grid.n_steps = 8
grid.trade_every = 2
train.batch_size = 64
train.iterations = 5
eval.n_paths = 2000
price.n_paths = 2000
sim.n_paths = 3
sweep.p_grid = [0.9, 1.0]
sweep.eval_paths = 1000
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_defaults_match_reference_parameters():
    cfg = ExperimentConfig()
    m = cfg.market
    assert (m.s0, m.v0, m.mu, m.kappa, m.theta, m.xi, m.rho) == (10, 0.09, 0.08, 3, 0.09, 2, -0.5)
    assert (cfg.option.strike, cfg.option.barrier) == (10, 8.5)
    assert cfg.grid.n_trades == 50 and cfg.robust.epsilon == 0.02 and cfg.robust.order == 1


def test_parse_and_round_trip():
    values = parse_text("a.b = 1  # note\nc.d = true\ne.f = knock_out\ng.h = [0.5, 1]\n")
    assert values == {"a.b": 1, "c.d": True, "e.f": "knock_out", "g.h": [0.5, 1]}
    cfg = build_config({"market.kappa": 1, "run.mode": "robust", "sweep.p_grid": [0.8]})
    assert build_config(parse_text(cfg.to_text())) == cfg
    assert cfg.market.kappa == 1.0 and isinstance(cfg.market.kappa, float)


@pytest.mark.parametrize("text,key", [("market.kapa = 1", "market.kapa"),
                                      ("foo.bar = 1", "foo.bar"),
                                      ("train.iterations = 'many'", "train.iterations"),
                                      ("market.rho = 2", "market.rho"),
                                      ("run.mode = sideways", "run.mode")])
def test_malformed_config_names_the_key(text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        build_config(parse_text(text))


def test_line_without_equals():
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("a.b = 1\nnonsense\n")


def test_error_is_one_json_line(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("market.kapa = 1\n")
    assert run("train", "--config", bad, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and json.loads(err[0])["error"] == "ConfigError"
    assert run("evaluate", "--out", tmp_path / "o") == 2


def test_simulate_outputs(tmp_path, cfg_file):
    out = tmp_path / "sim"
    assert run("simulate", "--config", cfg_file, "--out", out, "--seed", 4) == 0
    assert (out / "paths.csv").read_text().startswith("path_id,step,time,price,variance\n")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["command"] == "simulate"
    assert load_config(out / "config.txt").run.seed == 4


def test_train_evaluate_price_pipeline(tmp_path, cfg_file):
    tr = tmp_path / "train"
    assert run("train", "--config", cfg_file, "--out", tr, "--cost", 0.01) == 0
    head = (tr / "history.csv").read_text().splitlines()[0]
    assert head == "iter,risk_phi,risk_theta,wasserstein,lambda,mu,grad_norm"
    ckpt = tr / "checkpoint.ckpt"
    ev = tmp_path / "eval"
    assert run("evaluate", "--config", cfg_file, "--out", ev, "--checkpoint", ckpt,
               "--cost", 0.01, "--kappa", 1, "--rho", -0.1) == 0
    assert load_config(ev / "config.txt").market.kappa == 1.0
    assert (ev / "pnl.csv").exists() and (ev / "tv.csv").exists()
    # cost-trained policy needs the previous-holding feature
    assert run("evaluate", "--config", cfg_file, "--out", ev, "--checkpoint", ckpt) == 2
    pr = tmp_path / "price"
    assert run("price", "--config", cfg_file, "--out", pr, "--checkpoint", ckpt,
               "--cost", 0.01) == 0
    lines = (pr / "pricing.csv").read_text().splitlines()
    assert lines[0] == "scheme,option,price,cvar_reported" and len(lines) == 4


def test_robust_train_writes_adversary(tmp_path, cfg_file):
    out = tmp_path / "rob"
    assert run("train", "--config", cfg_file, "--out", out, "--mode", "robust",
               "--set", "robust.inner_steps=2", "--epsilon", 0.5) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mode"] == "robust" and "final_lambda" in manifest
    assert '"adversary"' in (out / "checkpoint.ckpt").read_text().splitlines()[0]


def test_rerun_is_byte_identical(tmp_path, cfg_file):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert run("train", "--config", cfg_file, "--out", out) == 0
        assert run("evaluate", "--config", cfg_file, "--out", out,
                   "--checkpoint", out / "checkpoint.ckpt") == 0
        outs.append(out)
    for name in ("history.csv", "checkpoint.ckpt", "pnl.csv", "tv.csv", "config.txt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_rerun_from_echoed_config(tmp_path, cfg_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--config", cfg_file, "--out", a, "--seed", 3, "--lr", 0.002) == 0
    assert run("train", "--config", a / "config.txt", "--out", b) == 0
    assert (a / "checkpoint.ckpt").read_bytes() == (b / "checkpoint.ckpt").read_bytes()


def test_sweep_command(tmp_path, cfg_file):
    out = tmp_path / "sweep"
    assert run("sweep", "--config", cfg_file, "--out", out) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "p,lte,ute,risk" and len(lines) == 3
    assert "phase_transition_p" in json.loads((out / "manifest.json").read_text())
