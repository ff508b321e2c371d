#include <cstring>
#include <filesystem>
#include <fstream>

#include "cada/checkpoint.hpp"
#include "cada/config.hpp"
#include "helpers.hpp"

using namespace cada;
using namespace cada::test;

namespace fs = std::filesystem;

namespace {

const char* kToy = R"(# toy
model.variant = d
model.stem_width = 8
model.expansion = 2
model.num_classes = 3
model.input_hw = 16
model.blocks = 1,1
model.widths = 4,8
model.strides = 1,2
model.filter = cada, cadasp
model.ch = 2
model.b = 3,2
model.G = 3

train.epochs = 2
run.seed = 11
)";

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config(kToy);
  REQUIRE(c.model.stages.size() == 2);
  CHECK(c.model.stages[0].filter == FilterKind::kCada);
  CHECK(c.model.stages[1].filter == FilterKind::kCadaSp);
  CHECK(c.model.stages[1].num_bases == 2);
  CHECK(c.model.stages[1].channels_per_head == 2);
  CHECK(c.train.epochs == 2);
  CHECK(c.run.seed == 11);

  const ExperimentConfig again = parse_config(to_text(c));
  CHECK(to_text(again) == to_text(c));

  ExperimentConfig o = c;
  apply_overrides(o, {"train.base_lr=0.05", "model.b=4"});
  CHECK(o.train.base_lr == 0.05);
  CHECK(o.model.stages[0].num_bases == 4);
  CHECK(o.model.stages[1].num_bases == 4);
}

TEST_CASE("config errors carry key and line") {
  auto expect = [](const std::string& text, const std::string& key, int line) {
    try {
      parse_config(text);
      FAIL("expected ConfigParseError");
    } catch (const ConfigParseError& e) {
      CHECK(e.key() == key);
      CHECK(e.line() == line);
    }
  };
  expect("model.variant = d\n\nmodel.colour = 3\n", "model.colour", 3);
  expect("train.epochs = many\n", "train.epochs", 1);
  expect("model.blocks = 1,1\nmodel.b = 1,2,3\n", "model.b", 2);
  expect("# comment\nno equals sign\n", "no equals sign", 2);

  ExperimentConfig c;
  try {
    apply_overrides(c, {"data.kind=imagenet"});
    FAIL("expected ConfigParseError");
  } catch (const ConfigParseError& e) {
    CHECK(e.key() == "data.kind");
    CHECK(e.line() == 0);
  }
  CHECK_THROWS_AS(parse_config("model.variant = e\n"), ConfigError);
}

TEST_CASE("every key round-trips") {
  const std::string text = to_text(ExperimentConfig{});
  for (const auto& k : config_keys()) {
    CAPTURE(k);
    CHECK(text.find(k + " = ") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  const ExperimentConfig cfg = parse_config(kToy);
  Model<float> a(cfg.model, true, 4);
  Rng rng(61);
  const auto x = random_tensor({2, 3, 16, 16}, rng).cast<float>();
  a.forward(x, Mode::kTrain);  // moves running statistics away from their defaults
  const auto before = a.forward(x, Mode::kEval);

  const auto path = fs::temp_directory_path() / "cada_test_ckpt.bin";
  write_checkpoint(capture(a, to_text(cfg)), path);
  const Checkpoint ck = read_checkpoint(path);
  CHECK(ck.version == kCheckpointVersion);
  CHECK(ck.config_text == to_text(cfg));

  Model<float> b(parse_config(ck.config_text).model, false);
  restore(b, ck);
  const auto after = b.forward(x, Mode::kEval);
  CHECK(std::memcmp(before.ptr(), after.ptr(), before.size() * sizeof(float)) == 0);

  // Bank storage survives bit-exactly.
  const auto ba = a.attention_layers()[0]->bank(), bb = b.attention_layers()[0]->bank();
  CHECK(std::equal(ba.weight_storage().begin(), ba.weight_storage().end(), bb.weight_storage().begin()));

  // Version mismatch.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v[4] = {2, 0, 0, 0};
    f.write(v, 4);
  }
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointVersionError);

  // Architecture mismatch.
  ExperimentConfig other = cfg;
  apply_overrides(other, {"model.b=5"});
  Model<float> c(other.model, false);
  CHECK_THROWS_AS(restore(c, ck), IoError);

  fs::remove(path);
  CHECK_THROWS_AS(read_checkpoint(path), IoError);
}
