import json
from pathlib import Path

import pytest

from dezgreedy import cli
from dezgreedy import numkit as nk
from dezgreedy.errors import ConfigError
from dezgreedy.explore import EpsilonSchedule, epsilon_at
from dezgreedy.metrics import read_csv
from dezgreedy.runner import (ALGORITHMS, TABLE_ROWS, DEFAULT_SEEDS, RunConfig, build_trunk, load_config, run,
                              run_seed, sweep, sweep_configs, validate)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = dict(env="tworooms", grid=5, episodes=6, batch=8, buffer=200, policy_update=2, target_update=5,
            architecture=[8], z_max=2, seeds=[1])


def tiny(**kw):
    return RunConfig.from_dict({**TINY, **kw})


# -- configs ----------------------------------------------------------------

def test_table_tworooms_defaults():
    cfg = RunConfig.from_dict({"env": "tworooms", "grid": 50, "algorithm": "DEZ-DQN+GVF"})
    assert (cfg.episodes, cfg.z_max, cfg.gvfs) == (4000, 10, 1)
    assert cfg.seeds == [54334, 82654, 21198, 83554, 29948]


@pytest.mark.parametrize("key", list(TABLE_ROWS))
def test_table_rows_validate(key):
    env, grid = key
    for algo in ALGORITHMS:
        assert validate(RunConfig.from_dict({"env": env, "grid": grid, "algorithm": algo})) == []


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert validate(load_config(path)) == []


def test_violations():
    assert any("z_max" in v for v in validate(tiny(algorithm="EZ-DQN", z_max=0)))
    assert any("shaping" in v for v in validate(tiny(algorithm="DQN+RS", shaping_bonus=None)))
    assert any("beta" in v for v in validate(tiny(beta=0.0)))
    assert any("buffer" in v for v in validate(tiny(buffer=4)))
    assert any("gvfs" in v for v in validate(tiny(algorithm="DEZ-DQN+GVF", gvfs=2)))
    assert validate(tiny()) == []


def test_unknown_key_and_bad_architecture():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**TINY, "lr": 0.1})
    with pytest.raises(ConfigError):
        build_trunk(["lstm(64)"])
    with pytest.raises(ConfigError):
        run_seed(tiny(algorithm="nope"), 1)


def test_build_trunk_parses_table_strings():
    specs = build_trunk(["conv(C=16,F=2)", "maxpool(F=2,S=1)", 60])
    assert [s.kind for s in specs] == ["conv2d", "relu", "maxpool2d", "dense", "relu"]
    assert specs[0] == nk.conv2d(16, 2) and specs[2] == nk.maxpool2d(2, 1)


# -- single runs ------------------------------------------------------------

@pytest.mark.parametrize("algo", list(ALGORITHMS))
def test_algorithm_matrix(algo):
    res = run_seed(tiny(env="subgoal", grid=7, gvfs=2, algorithm=algo, episodes=4), 3)
    spec = ALGORITHMS[algo]
    s = res.summary
    assert s["gvf_heads"] == (2 if spec.gvf_heads else 0)
    reads = s["head_reads"]
    assert reads[0] > 0
    if spec.behaviour == "dez":
        assert sum(reads[1:]) > 0
    else:
        assert sum(reads[1:]) == 0
    assert len(res.records) == 4 and s["aborted"] is None


def test_doorkey_conv_run(tmp_path):
    cfg = tiny(env="doorkey", grid=6, gvfs=2, algorithm="DEZ-DQN+GVF", batch=16, buffer=500, tau=0.05,
               target_update=20, target_unit="steps",
               architecture=["conv(C=4,F=2)", "maxpool(F=2,S=2)", 16], episodes=2)
    res = run_seed(cfg, 0, tmp_path)
    assert res.summary["aborted"] is None
    assert len(res.checkpoints) == 2  # episodes 0 and 1 (middle == last)
    specs, params, shape = nk.load_params(open(res.checkpoints[0], "rb"))
    assert shape == (3, 6, 6) and len(specs) == len(params.layers)


def test_byte_identical_csv(tmp_path):
    a = run_seed(tiny(algorithm="DEZ-DQN+GVF"), 7, tmp_path / "a")
    b = run_seed(tiny(algorithm="DEZ-DQN+GVF"), 7, tmp_path / "b")
    assert Path(a.csv_path).read_bytes() == Path(b.csv_path).read_bytes()
    c = run_seed(tiny(algorithm="DEZ-DQN+GVF"), 8, tmp_path / "c")
    assert Path(a.csv_path).read_bytes() != Path(c.csv_path).read_bytes()


def test_serial_and_parallel_agree(tmp_path):
    cfg = tiny(seeds=[1, 2])
    m1 = run(cfg, tmp_path / "serial")
    m2 = run(cfg, tmp_path / "parallel", workers=2)
    for seed in ("1", "2"):
        assert (Path(m1.outputs[seed]["csv"]).read_bytes() == Path(m2.outputs[seed]["csv"]).read_bytes())


def test_default_seeds_give_five_files(tmp_path):
    man = run(tiny(seeds=DEFAULT_SEEDS, episodes=2), tmp_path)
    assert sorted(int(k) for k in man.outputs) == sorted(DEFAULT_SEEDS)
    assert len(list(tmp_path.glob("*.csv"))) == 5
    data = json.loads(Path(man.path).read_text())
    assert data["code_version"] and data["started"] and data["config"]["grid"] == 5


def test_records_content():
    res = run_seed(tiny(env="subgoal", grid=7, gvfs=2, algorithm="DEZ-DQN+GVF", episodes=5), 2)
    eps = [r.epsilon for r in res.records]
    assert eps[0] == 1.0 and all(a >= b for a, b in zip(eps, eps[1:]))
    assert sum(r.new_states for r in res.records) == res.summary["unique_states"]
    for r in res.records:
        assert 1 <= r.steps <= 70 and r.farthest >= 0
        assert len(r.option_counts) == 3 and len(r.z_counts) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_abort_keeps_partial_outputs(tmp_path):
    cfg = tiny(optimizer="sgd", alpha=1e30, episodes=20)
    res = run_seed(cfg, 1, tmp_path)
    assert res.summary["aborted"] is not None
    assert "non-finite" in res.summary["aborted"]["error"]
    assert len(read_csv(res.csv_path)) == res.summary["episodes_run"] < 20


def test_stop_after_keeps_schedule():
    res = run_seed(tiny(episodes=100), 1, stop_after=3)
    sched = EpsilonSchedule(100)
    assert [r.epsilon for r in res.records] == [epsilon_at(sched, e) for e in range(3)]


@pytest.mark.parametrize("algo", ["DQN+CIR", "DQN+RS"])
def test_auxiliary_reward_runs(algo):
    res = run_seed(tiny(algorithm=algo, eta=0.5, shaping_bonus=0.5), 4)
    assert res.summary["aborted"] is None


# -- sweeps -----------------------------------------------------------------

def test_grid_sweep_with_paired_z(tmp_path):
    cfgs = sweep_configs(tiny(), "grid", [10, 25, 50, 100], [5, 5, 10, 20])
    assert [(c.grid, c.z_max) for c in cfgs] == [(10, 5), (25, 5), (50, 10), (100, 20)]
    with pytest.raises(ConfigError):
        sweep_configs(tiny(), "grid", [10, 25], [5])


def test_beta_sweep_rejects_zero():
    with pytest.raises(ConfigError):
        sweep_configs(tiny(), "beta", [0.5, 0.0])


def test_single_value_sweep_matches_run(tmp_path):
    mans = sweep(tiny(algorithm="EZ-DQN"), "z_max", [2], tmp_path / "sw")
    direct = run(tiny(algorithm="EZ-DQN"), tmp_path / "run")
    a = read_csv(mans[0].outputs["1"]["csv"])
    b = read_csv(direct.outputs["1"]["csv"])
    assert [(r.reward, r.steps, r.new_states) for r in a] == [(r.reward, r.steps, r.new_states) for r in b]
    table = (tmp_path / "sw" / "tworooms5_ez-dqn_sweep_z_max.csv").read_text().splitlines()
    assert table[0].startswith("value,z_max") and len(table) == 2


# -- CLI --------------------------------------------------------------------

def _write_cfg(tmp_path, **kw):
    import yaml
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({**TINY, **kw}))
    return str(path)


def test_cli_validate(tmp_path, capsys):
    assert cli.main(["validate", "--config", _write_cfg(tmp_path)]) == 0
    assert "ok" in capsys.readouterr().out
    assert cli.main(["validate", "--config", _write_cfg(tmp_path, algorithm="EZ-DQN", z_max=0)]) == 1
    assert "violation" in capsys.readouterr().out


def test_cli_run_and_errors(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", _write_cfg(tmp_path), "--out", str(out), "--episodes", "3"]) == 0
    manifest = json.loads(Path(capsys.readouterr().out.strip()).read_text())
    assert manifest["config"]["episodes"] == 3
    assert cli.main(["run", "--config", _write_cfg(tmp_path, foo=1), "--out", str(out)]) == 2


def test_cli_sweep(tmp_path, capsys):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", _write_cfg(tmp_path), "--axis", "beta", "--values", "1.0", "0.5",
                     "--out", str(out)]) == 0
    assert len(list(out.glob("*_sweep_beta.csv"))) == 1


def test_default_out_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DEZGREEDY_OUT", str(tmp_path / "envout"))
    man = run(tiny(episodes=2))
    assert Path(man.path).parent == tmp_path / "envout"
