import argparse

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tess.cli import build_parser, resolve_config
from tess.config import SCHEMA, RunConfig, parse_assignments, parse_text
from tess.errors import ConfigError


def test_every_key_has_a_default():
    cfg = RunConfig.default()
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["optim.lr"] == 0.001
    assert (cfg["trace.lambda_pre"], cfg["trace.lambda_post"]) == (0.5, 0.2)
    assert cfg["sched.patience"] == 5 and cfg["sched.factor"] == 0.5


def test_round_trip_is_stable():
    cfg = RunConfig.from_text("optim.lr = 0.0005\ntrace.alpha_post = -1\nmetrics.wall_time = yes\n")
    text = cfg.to_text()
    again = RunConfig.from_text(text)
    assert again == cfg
    assert again.to_text() == text


@settings(max_examples=30)
@given(st.floats(1e-6, 1.0), st.integers(0, 10), st.sampled_from([-1.0, 0.0, 1.0]))
def test_round_trip_property(lr, t_l, alpha):
    cfg = RunConfig.default().merged({"optim.lr": lr, "learn.t_l": t_l, "trace.alpha_post": alpha})
    assert RunConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize(
    "text, line",
    [
        ("optim.lr = 0.1\nbogus.key = 1\n", 2),
        ("# comment\n\ntrain.epochs = many\n", 3),
        ("trace.alpha_post = 0.5\n", 1),
        ("learn.update_mode = sometimes", 1),
        ("train.batch_size = 0", 1),
        ("just some words", 1),
    ],
)
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"cfg.txt:{line}:"):
        parse_text(text, "cfg.txt")


def test_missing_file():
    with pytest.raises(ConfigError):
        RunConfig.from_file("/nonexistent/config.txt")


def test_assignments():
    assert parse_assignments(["a.b=1", "c.d = x "]) == {"a.b": "1", "c.d": " x "}
    with pytest.raises(ConfigError):
        parse_assignments(["novalue"])


def args_for(*argv) -> argparse.Namespace:
    return build_parser().parse_args(["train", *argv])


@pytest.mark.parametrize(
    "file_seed, env_seed, cli_seed, expected",
    [
        (None, None, None, 0),
        (5, None, None, 5),
        (5, "9", None, 9),
        (None, "9", None, 9),
        (5, "9", 11, 11),
        (None, None, 11, 11),
        (5, None, 11, 11),
    ],
)
def test_seed_precedence(tmp_path, monkeypatch, file_seed, env_seed, cli_seed, expected):
    argv = []
    if file_seed is not None:
        path = tmp_path / "c.txt"
        path.write_text(f"train.seed = {file_seed}\ntrain.epochs = 3\n")
        argv += ["--config", str(path)]
    if env_seed is None:
        monkeypatch.delenv("TESS_SEED", raising=False)
    else:
        monkeypatch.setenv("TESS_SEED", env_seed)
    if cli_seed is not None:
        argv += ["--seed", str(cli_seed)]
    assert resolve_config(args_for(*argv))["train.seed"] == expected


def test_field_wise_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv("TESS_SEED", raising=False)
    path = tmp_path / "c.txt"
    path.write_text("optim.lr = 0.01\ntrain.epochs = 7\ntrace.alpha_post = 0\n")
    cfg = resolve_config(args_for("--config", str(path), "--epochs", "2", "--set", "sched.patience=3"))
    assert cfg["optim.lr"] == 0.01          # file beats default
    assert cfg["train.epochs"] == 2         # flag beats file
    assert cfg["trace.alpha_post"] == 0.0   # untouched file value survives
    assert cfg["sched.patience"] == 3       # --set applies
    assert cfg["train.batch_size"] == 32    # default


def test_bad_env_seed_is_config_error(monkeypatch):
    monkeypatch.setenv("TESS_SEED", "abc")
    with pytest.raises(ConfigError):
        resolve_config(args_for())
