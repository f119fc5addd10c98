import json

import pytest

from hiercap.cli import main


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = main(["gen-data", "--out-dir", str(data), "--seed", "3",
               "--n-train", "30", "--n-val", "8", "--n-test", "8",
               "--caption-style", "short"])
    assert rc == 0
    config = root / "config.json"
    config.write_text(json.dumps({
        "data_dir": str(data), "hidden": 16, "embed": 8, "attn_hidden": 8,
        "disc_embed": 8, "disc_hidden": 12, "disc_out": 8,
        "batch": 8, "adv_batch": 4, "mle_epochs": 1, "d_pretrain_steps": 4,
        "adv_steps": 2, "rollout_n": 2, "fake_pool_size": 20,
        "probe_scenes": 2, "max_gen_len": 12,
    }))
    return root, data, config


def test_gen_data_outputs(cli_env):
    _, data, _ = cli_env
    for name in ("scenes.train.jsonl", "scenes.val.jsonl",
                 "scenes.test.jsonl", "vocab.json"):
        assert (data / name).exists()


def test_train_all_and_evaluate(cli_env, capsys):
    root, _, config = cli_env
    out = root / "run"
    rc = main(["train-all", "--config", str(config), "--out-dir", str(out)])
    assert rc == 0
    assert (out / "ledger.csv").exists()
    ckpt = out / "checkpoints" / "final.ckpt"
    assert ckpt.exists()
    rc = main(["evaluate", "--config", str(config), "--out-dir", str(out),
               "--checkpoint", str(ckpt), "--split", "test"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out.strip().split("\n", 1)[-1]
                        if False else open(out / "report.test.json").read())
    assert set(report) == {"bleu_1", "bleu_2", "bleu_3", "bleu_4",
                           "meteor", "cider", "rouge_l"}


def test_generate_emits_captions(cli_env, capsys):
    root, _, config = cli_env
    trace = root / "trace.jsonl"
    rc = main(["generate", "--config", str(config), "--out-dir", str(root / "g"),
               "--split", "test", "--count", "3", "--trace", str(trace)])
    assert rc == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert len(lines) == 3
    assert all("id" in l and "caption" in l for l in lines)
    assert trace.exists()


def test_score_subcommand(cli_env, tmp_path, capsys):
    cands = tmp_path / "cands.jsonl"
    refs = tmp_path / "refs.jsonl"
    cands.write_text(json.dumps({"caption": "a red circle sits there"}) + "\n")
    refs.write_text(json.dumps({"refs": ["a red circle sits there"]}) + "\n")
    rc = main(["score", "--candidates", str(cands), "--references", str(refs)])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["bleu_4"] == 1.0


def test_config_error_exit_code(cli_env, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense_key": True}))
    rc = main(["train-all", "--config", str(bad)])
    assert rc == 2
    bad.write_text(json.dumps({"d_steps_per_g": 4}))
    rc = main(["train-all", "--config", str(bad)])
    assert rc == 2


def test_data_error_exit_code(cli_env, tmp_path):
    _, _, config = cli_env
    rc = main(["evaluate", "--config", str(config),
               "--data-dir", str(tmp_path / "missing"),
               "--out-dir", str(tmp_path / "out")])
    assert rc == 3
