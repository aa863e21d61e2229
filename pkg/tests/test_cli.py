import json

import pytest

from vformation.cli import TrajectoryFile, execute, main, scenario_label
from vformation.config import ConfigErrors, emit, load, validate_config
from vformation.errors import ConfigurationError

FULL = """
[experiment]
mode = dampc
seed = 12
runs = 3

[flock]
bird_count = 5
accel_ratio = 0.8

[dampc]
k_min = 3
k_max = 5

[game]
attacked_count = 2
magnitude_bound = 0.75
"""


def test_round_trip_is_identity():
    c = validate_config(FULL)
    text = emit(c)
    assert validate_config(text) == c
    assert emit(validate_config(text)) == text


def test_defaults_parse():
    c = validate_config("")
    assert c.mode == "ares" and c.flock.bird_count == 7


def test_digest_tracks_content():
    a = validate_config(FULL)
    b = validate_config(FULL.replace("seed = 12", "seed = 13"))
    assert a.digest() == validate_config(emit(a)).digest()
    assert a.digest() != b.digest()


def test_rho_out_of_range():
    with pytest.raises(ConfigErrors) as err:
        validate_config("[flock]\naccel_ratio = 1.2\n")
    assert any(e.startswith("flock.accel_ratio") for e in err.value.errors)


def test_attack_count_equal_to_flock():
    with pytest.raises(ConfigErrors) as err:
        validate_config("[flock]\nbird_count = 5\n[game]\nattacked_count = 5\n")
    assert any(e.startswith("game.attacked_count") for e in err.value.errors)


def test_all_errors_reported_together():
    text = """
[flock]
bird_count = 3
accel_ratio = 1.5
[ares]
threshold = -1
[dampc]
k_max = 9
[smc]
epsilon = 2
[game]
attacked_count = 3
[bogus]
x = 1
"""
    with pytest.raises(ConfigErrors) as err:
        validate_config(text)
    fields = {e.split(":")[0] for e in err.value.errors}
    assert {"flock.accel_ratio", "ares.threshold", "dampc.k_max", "smc.epsilon",
            "game.attacked_count", "bogus"} <= fields


def test_unknown_key_and_bad_number():
    with pytest.raises(ConfigErrors) as err:
        validate_config("[pso]\nparticle_count = many\ncolour = red\n")
    fields = {e.split(":")[0] for e in err.value.errors}
    assert fields == {"pso.particle_count", "pso.colour"}


def test_removed_birds_checked():
    with pytest.raises(ConfigErrors):
        validate_config("[flock]\nbird_count = 3\n[experiment]\nremoved_birds = 1, 4\n")


def test_load(tmp_path):
    p = tmp_path / "x.ini"
    p.write_text(FULL)
    assert load(p) == validate_config(FULL)


# -- trajectories -------------------------------------------------------------


def test_ares_trajectory_replays_exactly():
    c = validate_config("[flock]\nbird_count = 3\n")
    art = execute(c, "ares", 3)
    traj = TrajectoryFile.from_text(art.trajectory.to_text())
    assert traj.replay_error() == 0.0
    assert traj.to_text() == art.trajectory.to_text()
    assert len(traj.steps) > 1


def test_game_trajectory_carries_disturbances():
    c = validate_config(
        "[flock]\nbird_count = 5\n[game]\nattack_rounds = 2\nbudget = 6\nh_max = 2\n"
    )
    art = execute(c, "game-rdg", 1)
    traj = TrajectoryFile.from_text(art.trajectory.to_text())
    assert traj.replay_error() <= 1e-9
    assert any(abs(st.disturbance).sum() > 0 for st in traj.steps)


def test_malformed_trajectory():
    with pytest.raises(ConfigurationError):
        TrajectoryFile.from_text("birds 3\nstep 0 level 1 horizon 0\n1 2 3\n")


def test_scenario_labels():
    c = validate_config("[experiment]\nremoved_birds = 2, 3\n[game]\nattacked_count = 2\n")
    assert scenario_label(c, "game-brg") == "brg birds 2,3"
    c = validate_config("[game]\nmagnitude_bound = 0.5\n")
    assert scenario_label(c, "game-rdg") == "rdg R=1 M=0.5"


# -- command line -------------------------------------------------------------


def test_cli_ares_writes_files(tmp_path):
    cfg = _write(tmp_path, "[flock]\nbird_count = 3\n")
    assert main(["ares", "--seed", "3", "--out", str(tmp_path), "--runs", "2", "--config", str(cfg)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["runs"] == 2 and summary["seed"] == 3
    traj = TrajectoryFile.from_text((tmp_path / "trajectory.txt").read_text())
    assert traj.seed == 3 and traj.digest == summary["digest"]
    assert traj.replay_error() == 0.0
    for name in ("ledger.csv", "runs.csv", "config.ini"):
        assert summary["digest"] in (tmp_path / name).read_text().splitlines()[0]


def test_cli_smc_batch(tmp_path):
    cfg = tmp_path / "b.ini"
    cfg.write_text("[experiment]\ntarget = ares\n[flock]\nbird_count = 3\n[smc]\nsample_count = 20\n")
    assert main(["smc-batch", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "1"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["runs"] == 20 and 0 <= summary["estimate"] <= 1
    assert summary["estimate"] == summary["successes"] / 20
    assert summary["guaranteed"] is False
    rows = (tmp_path / "o" / "runs.csv").read_text().strip().splitlines()
    assert len(rows) == 2 + 20


def test_cli_game_brg_labelled(tmp_path):
    cfg = tmp_path / "g.ini"
    cfg.write_text("[experiment]\nremoved_birds = 2, 3\n[game]\nattacked_count = 2\nbudget = 4\n"
                   "attack_rounds = 1\nh_max = 1\n")
    assert main(["game-brg", "--config", str(cfg), "--out", str(tmp_path / "o"), "--runs", "1"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["scenario"] == "brg birds 2,3"
    assert {"estimate", "avg_duration", "avg_horizon"} <= summary.keys()


def test_cli_rerun_is_bitwise_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["dampc", "--seed", "5", "--runs", "2", "--out", str(tmp_path / d),
                     "--config", str(_write(tmp_path, "[flock]\nbird_count = 3\n"))]) == 0
    for name in ("summary.json", "runs.csv", "ledger.csv", "trajectory.txt", "config.ini"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


def test_cli_usage_error(tmp_path, capsys):
    cfg = _write(tmp_path, "[flock]\naccel_ratio = 1.2\n")
    assert main(["ares", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "accel_ratio" in capsys.readouterr().err


def test_cli_unknown_mode():
    with pytest.raises(SystemExit) as err:
        main(["fly"])
    assert err.value.code == 2
