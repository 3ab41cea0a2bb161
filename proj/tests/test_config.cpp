#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "dim/config.hpp"
#include "doctest.h"

using namespace dim;

TEST_CASE("parses a full config") {
    const std::string text = R"(
# experiment
mode = global_dim
output_dir = /tmp/run1
seed = 9

dataset.num_identities = 20
dataset.samples_per_identity = 6
dataset.input_dim = 16
dataset.seed = 4

train.epochs = 10
train.decay_epoch = 8
train.base_lr = 0.25
objective.beta = 0.05
objective.sampling = labeled
model.d_z = 32
model.backbone_hidden = 16,24
)";
    auto cfg = ExperimentConfig::parse_text(text, "inline");
    cfg.validate();
    CHECK(cfg.mode == RunMode::GlobalDim);
    CHECK(cfg.output_dir == "/tmp/run1");
    CHECK(cfg.seed == 9);
    CHECK(cfg.dataset.num_identities == 20);
    CHECK(cfg.epochs == 10);
    CHECK(cfg.resolved_base_lr() == 0.25);
    CHECK(cfg.objective.beta == 0.05);
    CHECK(cfg.objective.sampling == Sampling::Labeled);
    CHECK(cfg.d_z == 32);
    CHECK(cfg.backbone_hidden == std::vector<std::size_t>{16, 24});
}

TEST_CASE("unknown keys are rejected with the line number") {
    const std::string text = "mode = baseline\noutput_dir = /tmp/x\ntrain.lr = 0.1\n";
    try {
        ExperimentConfig::parse_text(text, "bad.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line == 3);
        CHECK(std::string(e.what()).find("bad.cfg:3") != std::string::npos);
        CHECK(std::string(e.what()).find("train.lr") != std::string::npos);
    }
}

TEST_CASE("malformed values and lines") {
    CHECK_THROWS_AS(ExperimentConfig::parse_text(
                        "mode = baseline\noutput_dir = x\ntrain.epochs = ten\n", "f"),
                    ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::parse_text("mode = baseline\noutput_dir = x\nnonsense\n", "f"),
        ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse_text("mode = warp\noutput_dir = x\n", "f"),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse_text("output_dir = x\n", "f"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse_text("mode = baseline\n", "f"), ConfigError);
}

TEST_CASE("tf_dim requires a source checkpoint") {
    auto cfg = ExperimentConfig::parse_text("mode = tf_dim\noutput_dir = /tmp/y\n", "f");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.tf_source_checkpoint = "source.ckpt";
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("per-mode learning-rate defaults") {
    auto parse_mode = [](const std::string& mode) {
        return ExperimentConfig::parse_text("mode = " + mode + "\noutput_dir = /tmp/z\n",
                                            "f");
    };
    CHECK(parse_mode("global_dim").resolved_base_lr() == 0.3);
    CHECK(parse_mode("local_dim").resolved_base_lr() == 0.02);
    auto tf = parse_mode("tf_dim");
    CHECK(tf.resolved_base_lr() == 0.00005);
    CHECK(parse_mode("baseline").resolved_base_lr() == 0.3);

    auto part_base = ExperimentConfig::parse_text(
        "mode = baseline\nmodel.arch = part\noutput_dir = /tmp/z\n", "f");
    CHECK(part_base.resolved_base_lr() == 0.02);
}

TEST_CASE("baseline mode zeroes both info-max weights") {
    auto cfg = ExperimentConfig::parse_text(
        "mode = baseline\noutput_dir = /tmp/z\nobjective.beta = 0.5\n", "f");
    auto tc = cfg.train_config();
    CHECK(tc.objective.beta == 0.0);
    CHECK(tc.objective.lambda == 0.0);

    auto live = ExperimentConfig::parse_text(
        "mode = global_dim\noutput_dir = /tmp/z\nobjective.beta = 0.5\n", "f");
    CHECK(live.train_config().objective.beta == 0.5);
}

TEST_CASE("discriminator input dim follows arch and pair_input") {
    auto g = ExperimentConfig::parse_text("mode = global_dim\noutput_dir = /tmp\n", "f");
    CHECK(g.discriminator_config().input_dim == g.d_u + g.d_z);

    auto l = ExperimentConfig::parse_text("mode = local_dim\noutput_dir = /tmp\n", "f");
    CHECK(l.discriminator_config().input_dim == l.map_channels + l.d_z);

    auto e = ExperimentConfig::parse_text(
        "mode = global_dim\nmodel.pair_input = embedding\noutput_dir = /tmp\n", "f");
    CHECK(e.discriminator_config().input_dim == 2 * e.d_z);
}

TEST_CASE("domain shift keys populate the optional block") {
    auto cfg = ExperimentConfig::parse_text(
        "mode = baseline\noutput_dir = /tmp\ndataset.shift.rotation_angle = 45\n", "f");
    REQUIRE(cfg.dataset.domain_shift.has_value());
    CHECK(cfg.dataset.domain_shift->rotation_angle_deg == 45.0);
    CHECK(cfg.dataset.domain_shift->mean_shift == 0.5);  // block default
}

TEST_CASE("resolved echo covers the reproduction surface") {
    auto cfg = ExperimentConfig::parse_text(
        "mode = local_dim\noutput_dir = /tmp/e\nobjective.lambda = 0.03\n", "f");
    auto kv = cfg.resolved_kv();
    auto find = [&](const std::string& key) -> std::string {
        for (const auto& [k, v] : kv)
            if (k == key) return v;
        return "<missing>";
    };
    CHECK(find("mode") == "local_dim");
    CHECK(find("objective.lambda") == "0.03");
    CHECK(find("train.base_lr") == "0.02");
    CHECK(find("model.arch") == "part");
    CHECK(find("dataset.num_identities") == "50");
    CHECK(find("model.share_discriminators") == "true");
}
