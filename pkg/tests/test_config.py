"""Tests for TOML run-configuration parsing and section wiring."""

import pytest

from emoalign.config import ConfigError, RunConfig, load_run_config, parse_run_config
from emoalign.evaluation import FOUR_CLASSES
from emoalign.trainer import StageFilter, TrainConfig


# ---------------------------------------------------------------------------
# defaults
# ---------------------------------------------------------------------------


class TestDefaults:
    def test_none_path_yields_pure_defaults(self):
        # [TRIVIAL]
        assert load_run_config(None).to_dict() == RunConfig().to_dict()

    def test_empty_document_yields_pure_defaults(self):
        # [TRIVIAL]
        assert parse_run_config({}).to_dict() == RunConfig().to_dict()

    def test_to_dict_exposes_all_eight_sections(self):
        # [TRIVIAL] The loss table is surfaced at the top level even though
        # it is stored inside the train config.
        assert set(RunConfig().to_dict()) == {
            "frontend", "encoder", "qformer", "decoder",
            "loss", "train", "eval", "synth",
        }

    def test_default_wiring_is_consistent(self):
        # [TRIVIAL] Out of the box the widths already line up.
        cfg = RunConfig()
        assert cfg.encoder.n_mels == cfg.frontend.n_mels
        assert cfg.qformer.d_enc == cfg.encoder.d_model
        assert cfg.decoder.d_conn == cfg.qformer.d_model


# ---------------------------------------------------------------------------
# strict key checking
# ---------------------------------------------------------------------------


class TestUnknownNames:
    def test_unknown_section_is_rejected(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match=r"unknown section \[nope\]"):
            parse_run_config({"nope": {}})

    def test_section_must_be_a_table(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match=r"\[encoder\] must be a table"):
            parse_run_config({"encoder": 5})

    def test_unknown_key_names_dotted_path(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match="unknown key encoder.bogus"):
            parse_run_config({"encoder": {"bogus": 1}})

    def test_loss_cannot_be_set_from_train_table(self):
        # [DERIVED] The loss settings live in their own [loss] section; the
        # train table only accepts scalar optimizer settings.
        with pytest.raises(ConfigError, match="unknown key train.loss"):
            parse_run_config({"train": {"loss": {"margin": 0.3}}})


# ---------------------------------------------------------------------------
# loss aliases
# ---------------------------------------------------------------------------


class TestLossAliases:
    def test_m_is_margin(self):
        # [TRIVIAL]
        cfg = parse_run_config({"loss": {"m": 0.3}})
        assert cfg.train.loss.margin == 0.3

    def test_lambda_is_ce_weight(self):
        # [TRIVIAL]
        cfg = parse_run_config({"loss": {"lambda": 2.0}})
        assert cfg.train.loss.ce_weight == 2.0

    def test_alias_and_target_together_rejected(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match="loss.m and loss.margin"):
            parse_run_config({"loss": {"m": 0.3, "margin": 0.3}})

    def test_canonical_names_still_work(self):
        # [TRIVIAL]
        cfg = parse_run_config({"loss": {"margin": 0.4, "ce_weight": 3.0}})
        assert cfg.train.loss.margin == 0.4
        assert cfg.train.loss.ce_weight == 3.0

    def test_loss_is_attached_to_train_config(self):
        # [TRIVIAL]
        cfg = parse_run_config({"loss": {"margin": 0.4}, "train": {"steps": 3}})
        assert cfg.train.loss.margin == 0.4
        assert cfg.train.steps == 3


# ---------------------------------------------------------------------------
# width auto-wiring
# ---------------------------------------------------------------------------


class TestAutoWiring:
    def test_encoder_follows_frontend_mels(self):
        # [DERIVED] Unset encoder.n_mels is wired from frontend.n_mels.
        cfg = parse_run_config({"frontend": {"n_mels": 32}})
        assert cfg.encoder.n_mels == 32

    def test_qformer_follows_encoder_width(self):
        # [DERIVED]
        cfg = parse_run_config({"encoder": {"d_model": 32}})
        assert cfg.qformer.d_enc == 32

    def test_decoder_follows_qformer_width(self):
        # [DERIVED]
        cfg = parse_run_config({"qformer": {"d_model": 32}})
        assert cfg.decoder.d_conn == 32

    def test_explicit_value_beats_wiring(self):
        # [DERIVED] An explicit downstream width is honored verbatim.
        cfg = parse_run_config({"frontend": {"n_mels": 32}, "encoder": {"n_mels": 48}})
        assert cfg.encoder.n_mels == 48

    def test_wiring_chains_through_all_three_hops(self):
        # [DERIVED] A single encoder width change propagates to the
        # connector input only; connector output stays default.
        cfg = parse_run_config({"encoder": {"d_model": 32}})
        assert cfg.qformer.d_enc == 32
        assert cfg.qformer.d_model == 64
        assert cfg.decoder.d_conn == 64


# ---------------------------------------------------------------------------
# dataclass validation surfaces as ConfigError
# ---------------------------------------------------------------------------


class TestValidationWrapping:
    def test_encoder_value_error_is_wrapped(self):
        # [DERIVED] 63 is not divisible by the default 4 heads.
        with pytest.raises(ConfigError, match=r"\[encoder\]"):
            parse_run_config({"encoder": {"d_model": 63}})

    def test_eval_classes_restricted_to_4_or_7(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match=r"\[eval\].*classes"):
            parse_run_config({"eval": {"classes": 5}})

    def test_eval_holdout_must_differ_from_anchor(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match=r"\[eval\]"):
            parse_run_config({"eval": {"holdout_language": "en", "anchor_language": "en"}})

    def test_eval_restrict_property(self):
        # [TRIVIAL]
        assert parse_run_config({"eval": {"classes": 4}}).eval.restrict == FOUR_CLASSES
        assert parse_run_config({"eval": {"classes": 7}}).eval.restrict is None

    def test_synth_value_error_is_wrapped(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match=r"\[synth\]"):
            parse_run_config({"synth": {"per_cell": 0}})

    def test_train_value_error_is_wrapped(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match=r"\[train\]"):
            parse_run_config({"train": {"batch_size": 1}})

    def test_lists_become_tuples(self):
        # [TRIVIAL] TOML arrays arrive as lists; configs store tuples.
        cfg = parse_run_config({"synth": {"languages": ["en", "fr"]}})
        assert cfg.synth.languages == ("en", "fr")


# ---------------------------------------------------------------------------
# stage filter tables
# ---------------------------------------------------------------------------


class TestStageFilterTables:
    def test_stage_tables_must_be_tables(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match="must be tables"):
            parse_run_config({"train": {"stage1": 5}})

    def test_any_lifts_a_constraint(self):
        # [DERIVED] The default stage-1 filter pins synthetic=False; the
        # "any" sentinel clears it to match-everything (None).
        cfg = parse_run_config({"train": {"stage1": {"synthetic": "any"}}})
        assert cfg.train.stage1.synthetic is None

    def test_unset_stage_fields_keep_their_defaults(self):
        # [DERIVED] Overriding one field leaves the rest of the default
        # stage filter intact.
        default = TrainConfig()
        cfg = parse_run_config({"train": {"stage1": {"synthetic": "any"}}})
        assert cfg.train.stage1.languages == default.stage1.languages
        assert cfg.train.stage1.split == default.stage1.split
        assert cfg.train.stage2 == default.stage2

    def test_language_list_is_applied(self):
        # [TRIVIAL]
        cfg = parse_run_config(
            {"train": {"stage2": {"languages": ["de", "it"], "datasets": ["synthetic"]}}}
        )
        assert cfg.train.stage2.languages == ("de", "it")
        assert cfg.train.stage2.datasets == ("synthetic",)

    def test_any_clears_language_list(self):
        # [TRIVIAL]
        cfg = parse_run_config({"train": {"stage1": {"languages": "any"}}})
        assert cfg.train.stage1.languages is None

    def test_split_scalar(self):
        # [TRIVIAL]
        cfg = parse_run_config({"train": {"stage1": {"split": "dev"}}})
        assert cfg.train.stage1.split == "dev"

    def test_unknown_stage_key_rejected(self):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match="unknown key train.stage1.bogus"):
            parse_run_config({"train": {"stage1": {"bogus": 1}}})

    @pytest.mark.parametrize(
        "table, message",
        [
            ({"languages": "en"}, "train.stage1.languages must be a list of strings"),
            ({"languages": [1, 2]}, "train.stage1.languages must be a list of strings"),
            ({"datasets": 7}, "train.stage1.datasets must be a list of strings"),
            ({"synthetic": "yes"}, "train.stage1.synthetic must be a boolean"),
            ({"split": 5}, "train.stage1.split must be a string"),
        ],
    )
    def test_stage_value_shape_errors(self, table, message):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match=message):
            parse_run_config({"train": {"stage1": table}})

    def test_resulting_filters_are_stage_filters(self):
        # [TRIVIAL]
        cfg = parse_run_config({"train": {"stage1": {"synthetic": "any"}}})
        assert isinstance(cfg.train.stage1, StageFilter)
        assert isinstance(cfg.train.stage2, StageFilter)


# ---------------------------------------------------------------------------
# real TOML files
# ---------------------------------------------------------------------------


TOML_DOC = """
[frontend]
n_mels = 32

[encoder]
d_model = 32
n_layers = 1

[loss]
m = 0.3
lambda = 2.0

[train]
steps = 7
batch_size = 4
seed = 11

[train.stage1]
synthetic = "any"
languages = ["en", "fr"]

[eval]
classes = 4
holdout_language = "de"

[synth]
per_cell = 2
languages = ["en", "fr"]
"""


class TestTomlFiles:
    def test_full_document_round_trip(self, tmp_path):
        # [DERIVED] Every section lands where it should, aliases resolve,
        # and unset widths follow the wiring rules.
        path = tmp_path / "run.toml"
        path.write_text(TOML_DOC)
        cfg = load_run_config(path)
        assert cfg.frontend.n_mels == 32
        assert cfg.encoder.n_mels == 32
        assert cfg.encoder.d_model == 32
        assert cfg.encoder.n_layers == 1
        assert cfg.qformer.d_enc == 32
        assert cfg.train.loss.margin == 0.3
        assert cfg.train.loss.ce_weight == 2.0
        assert cfg.train.steps == 7
        assert cfg.train.batch_size == 4
        assert cfg.train.seed == 11
        assert cfg.train.stage1.synthetic is None
        assert cfg.train.stage1.languages == ("en", "fr")
        assert cfg.eval.classes == 4
        assert cfg.eval.holdout_language == "de"
        assert cfg.synth.per_cell == 2
        assert cfg.synth.languages == ("en", "fr")

    def test_string_paths_accepted(self, tmp_path):
        # [TRIVIAL]
        path = tmp_path / "run.toml"
        path.write_text("[train]\nsteps = 3\n")
        assert load_run_config(str(path)).train.steps == 3

    def test_missing_file_is_config_error(self, tmp_path):
        # [TRIVIAL]
        with pytest.raises(ConfigError, match="config file not found"):
            load_run_config(tmp_path / "absent.toml")

    def test_invalid_toml_is_config_error(self, tmp_path):
        # [TRIVIAL]
        path = tmp_path / "broken.toml"
        path.write_text("= nope\n")
        with pytest.raises(ConfigError, match="broken.toml"):
            load_run_config(path)

    def test_loaded_config_survives_to_dict(self, tmp_path):
        # [TRIVIAL] to_dict is pure data (JSON-friendly) for report headers.
        import json

        path = tmp_path / "run.toml"
        path.write_text(TOML_DOC)
        blob = json.dumps(load_run_config(path).to_dict(), sort_keys=True)
        assert '"classes": 4' in blob
