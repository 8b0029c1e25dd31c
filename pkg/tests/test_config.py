import pytest

from unicorn_crs.config import ConfigError, RunConfig, read_config_file, resolve


class TestDefaults:
    def test_published_defaults(self):
        c = RunConfig()
        assert (c.dim, c.hidden, c.gcn_layers, c.tf_layers) == (64, 100, 2, 1)
        assert (c.k_p, c.k_v, c.max_turn, c.rec_size) == (10, 10, 15, 10)
        assert (c.buffer_capacity, c.batch_size, c.lr, c.l2) == (50_000, 128, 1e-4, 1e-6)
        assert (c.gamma, c.tau) == (0.999, 0.01)
        assert (c.rec_suc, c.rec_fail, c.ask_suc, c.ask_fail, c.quit) == (1.0, -0.1, 0.01, -0.1, -0.3)

    def test_derived_configs(self):
        c = RunConfig(dim=16, seed=3, quit=-0.5)
        assert c.agent_config().dim == 16
        assert c.transe_config().seed == 3
        assert c.env_config().rewards.quit == -0.5


class TestPrecedence:
    def test_file_then_env_then_flags(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# comment\nseed = 5\nepisodes = 20  # trailing\npositional = false\n")
        assert resolve(str(f), {}, {}).seed == 5
        assert resolve(str(f), {}, {"UNICORN_SEED": "9"}).seed == 9
        c = resolve(str(f), {"seed": "11", "episodes": None}, {"UNICORN_SEED": "9"})
        assert c.seed == 11 and c.episodes == 20 and c.positional is False

    def test_kebab_keys(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("k-p = 4\n")
        assert read_config_file(f) == {"k_p": 4}

    @pytest.mark.parametrize("text", ["nonsense\n", "bogus = 1\n", "seed = abc\n", "positional = maybe\n"])
    def test_errors(self, tmp_path, text):
        f = tmp_path / "bad.cfg"
        f.write_text(text)
        with pytest.raises(ConfigError):
            resolve(str(f), {}, {})


class TestHash:
    def test_paths_excluded(self):
        a = RunConfig(data_dir="x", out_dir="y")
        b = RunConfig(data_dir="z", out_dir="w", checkpoint="c")
        assert a.content_hash() == b.content_hash()
        assert RunConfig(seed=1).content_hash() != RunConfig(seed=2).content_hash()

    def test_echo(self):
        e = RunConfig().echo()
        assert set(e) == {"config", "config_hash"}
        assert "data_dir" not in e["config"]
        assert len(e["config_hash"]) == 16
