"""Command-line client: parsing, overrides, end-to-end subcommand flows.

All flows run against the in-process service, so these are full-stack tests
without any network.
"""

import json

import pytest

from poisonlab import cli

TINY_TRAIN = {
    "dataset": {"kind": "two-moons", "n_labeled": 12, "n_unlabeled": 500,
                "n_test": 40, "seed": 0},
    "trainer": {"epochs": 10, "hidden": [16], "warmup_frac": 0.0},
}
TINY_TRIAL = {**TINY_TRAIN,
              "attack": {"budget_frac": 0.008, "rehearsal_epochs": 0,
                         "density_ladder": False},
              "defenses": ["collinear"], "seed": 0, "cell": "cli"}


def write_json(path, tree):
    path.write_text(json.dumps(tree))
    return str(path)


def run_cli(*argv):
    cli.main(list(argv))


def test_parser_has_all_subcommands():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions
               if a.dest == "command")
    assert set(sub.choices) == {"train", "attack", "trial", "matrix",
                                "defend", "report", "serve"}


def test_set_override_parses_paths_and_json():
    tree = cli._apply_sets({}, ["trainer.epochs=20", "cell=abc",
                                "trainer.hidden=[8,4]"])
    assert tree == {"trainer": {"epochs": 20, "hidden": [8, 4]},
                    "cell": "abc"}
    with pytest.raises(SystemExit):
        cli._apply_sets({}, ["no-equals-sign"])


def test_train_subcommand(tmp_path, capsys):
    cfg = write_json(tmp_path / "train.json", TINY_TRAIN)
    run_cli("train", "--config", cfg)
    out = capsys.readouterr().out
    assert "final test acc" in out and "fixmatch-like" in out


def test_train_set_overrides(tmp_path, capsys):
    cfg = write_json(tmp_path / "train.json", TINY_TRAIN)
    run_cli("train", "--config", cfg, "--set", "trainer.method=pi-model",
            "--set", "trainer.epochs=5", "--json")
    out = json.loads(capsys.readouterr().out)
    assert out["method"] == "pi-model" and out["epochs"] == 5


def test_error_paths_exit_with_message(tmp_path, capsys):
    cfg = write_json(tmp_path / "train.json", TINY_TRAIN)
    with pytest.raises(SystemExit) as exc:
        run_cli("train", "--config", cfg, "--set", "trainer.method=bogus")
    assert "422" in str(exc.value)


@pytest.fixture(scope="module")
def cli_run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_json(base / "trial.json", TINY_TRIAL)
    outdir = base / "run0"
    run_cli("trial", "--config", cfg, "--outdir", str(outdir))
    return outdir


def test_trial_writes_artifacts(cli_run_dir, capsys):
    assert (cli_run_dir / "result.json").exists()
    result = json.loads((cli_run_dir / "result.json").read_text())
    assert result["planted"] == list(range(500, 504))


def test_defend_subcommand_reads_artifacts(cli_run_dir, capsys):
    run_cli("defend", str(cli_run_dir / "dataset.txt"),
            "--trace", str(cli_run_dir / "trace.txt"),
            "--defense", "collinear", "--defense", "influence")
    out = capsys.readouterr().out
    assert "collinear: 4 flagged" in out
    assert "[500, 501, 502, 503]" in out
    assert "influence:" in out


def test_defend_default_defense_is_collinear(cli_run_dir, capsys):
    run_cli("defend", str(cli_run_dir / "dataset.txt"))
    out = capsys.readouterr().out
    assert out.startswith("collinear:")


def test_report_subcommand(cli_run_dir, tmp_path, capsys):
    csv_path = tmp_path / "rows.csv"
    run_cli("report", str(cli_run_dir), "--csv", str(csv_path))
    out = capsys.readouterr().out
    assert "cli 0/1" in out
    assert csv_path.read_text().splitlines()[0].startswith("run,cell")


def test_attack_subcommand(tmp_path, capsys):
    cfg = write_json(tmp_path / "attack.json",
                     {**TINY_TRAIN, "attack": TINY_TRIAL["attack"]})
    out_file = tmp_path / "poison.txt"
    run_cli("attack", "--config", cfg, "--out", str(out_file))
    assert out_file.exists()
    assert "4 points" in capsys.readouterr().out


def test_matrix_subcommand(tmp_path, capsys):
    cfg = write_json(tmp_path / "matrix.json",
                     {"trials": [TINY_TRIAL,
                                 {**TINY_TRIAL, "attack": None,
                                  "cell": "control"}]})
    run_cli("matrix", cfg)
    out = capsys.readouterr().out
    assert "cli 0/1" in out and "control 0/1" in out
