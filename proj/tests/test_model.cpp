#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "ltm/error.hpp"
#include "ltm/io.hpp"
#include "ltm/masking.hpp"
#include "ltm/model/checkpoint.hpp"
#include "ltm/model/encoder.hpp"
#include "ltm/model/heads.hpp"
#include "ltm/model/optimizer.hpp"
#include "ltm/model/pretrain.hpp"
#include "ltm/rng.hpp"
#include "oracles.hpp"

using namespace ltm;
using namespace ltm::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_ff = 16;
  c.max_len = 6;
  c.dropout_rate = 0.0;
  return c;
}

// Weights of order one so that every term of the gradient is exercised.
Parameters<double> rough_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = Parameters<double>::zeros(c);
  Rng rng(seed);
  p.for_each([&](const std::string& name, Mat<double>& m) {
    const bool gain = name.ends_with(".gain");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (gain ? 1.0 : 0.0) + 0.5 * rng.normal();
  });
  return p;
}

// two sequences of 6; the second has two pad positions; segment 1 never used
Batch tiny_batch() {
  Batch b;
  b.batch_size = 2;
  b.seq_len = 6;
  b.ids = {5, 6, 4, 7, 8, 4, 9, 4, 10, 5, 0, 0};
  b.segments.assign(12, 0);
  b.attention = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  return b;
}

const std::vector<int> kTinyLabels{-100, -100, 7, -100, -100, 6, -100, 9, -100, -100, -100, -100};

double loss_of(const Parameters<double>& p, const ModelConfig& c, const Batch& b) {
  return mtm_loss(forward(p, c, b), kTinyLabels);
}

std::vector<masking::MaskedChunk> toy_chunks(std::size_t n, std::size_t len, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<masking::MaskedChunk> out;
  for (std::size_t i = 0; i < n; ++i) {
    masking::MaskedChunk c;
    for (std::size_t t = 0; t < len; ++t) {
      const int id = 5 + static_cast<int>(rng.below(vocab - 5));
      const bool masked = t % 4 == 1;
      c.input_ids.push_back(masked ? tok::kMaskId : id);
      c.labels.push_back(masked ? id : masking::kIgnoreLabel);
      c.attention_mask.push_back(1);
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

TEST_CASE("finite differences agree with backprop on every parameter family") {
  const auto c = tiny_config();
  const auto batch = tiny_batch();
  auto p = rough_params(c, 3);
  auto grads = Parameters<double>::zeros(c);
  mtm_gradients(p, c, batch, kTinyLabels, grads);

  std::map<std::string, Mat<double>*> gmap;
  grads.for_each([&](const std::string& name, Mat<double>& g) { gmap[name] = &g; });

  const double h = 1e-3;
  double worst = 0.0;
  std::size_t families = 0;
  Rng pick(4);
  p.for_each([&](const std::string& name, Mat<double>& m) {
    ++families;
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(m.size()));
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > 50) {
      pick.shuffle(std::span(coords));
      coords.resize(50);
    }
    for (auto i : coords) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double up = loss_of(p, c, batch);
      m.data()[i] = keep - h;
      const double down = loss_of(p, c, batch);
      m.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double an = gmap.at(name)->data()[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
      worst = std::max(worst, rel);
      CHECK_MESSAGE(rel < 1e-3, name << "[" << i << "] analytic " << an << " numeric " << fd);
    }
  });
  CHECK(families == 3 + 16 + 1);
  CHECK(worst < 1e-3);
}

TEST_CASE("unused segment row gets zero gradient; loss scale is linear") {
  const auto c = tiny_config();
  const auto p = rough_params(c, 5);
  auto g1 = Parameters<double>::zeros(c);
  auto g2 = Parameters<double>::zeros(c);
  mtm_gradients(p, c, tiny_batch(), kTinyLabels, g1, 1.0);
  mtm_gradients(p, c, tiny_batch(), kTinyLabels, g2, 2.0);
  CHECK(g1.segment_embedding.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g1.segment_embedding.row(0).cwiseAbs().maxCoeff() > 0.0);
  std::vector<Mat<double>*> a, b;
  g1.for_each([&](const std::string&, Mat<double>& m) { a.push_back(&m); });
  g2.for_each([&](const std::string&, Mat<double>& m) { b.push_back(&m); });
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(((*a[i]) * 2.0 - *b[i]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pad content never reaches real positions") {
  const auto c = tiny_config();
  const auto p = init_params(c, 9);
  auto b = tiny_batch();
  const Mat<float> h1 = encoder_forward(p, c, b);
  b.ids[10] = 7;
  b.ids[11] = 3;
  b.segments[10] = 1;
  const Mat<float> h2 = encoder_forward(p, c, b);
  for (Eigen::Index r = 0; r < 10; ++r) CHECK((h1.row(r).array() == h2.row(r).array()).all());
}

TEST_CASE("attention rows are distributions over real keys") {
  const auto c = tiny_config();
  const auto p = rough_params(c, 2);
  ForwardCache<double> cache;
  encoder_forward(p, c, tiny_batch(), &cache);
  const auto& probs = cache.layers[0].probs;
  REQUIRE(probs.size() == 2);
  for (const auto& m : probs) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) CHECK(std::abs(m.row(r).sum() - 1.0) < 1e-6);
  }
  CHECK(probs[1].col(4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(probs[1].col(5).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initialization statistics") {
  ModelConfig c;
  c.vocab_size = 500;
  const auto p = init_params(c, 1);
  const auto& w = p.token_embedding;
  const double mean = w.cast<double>().mean();
  const double sd = std::sqrt((w.cast<double>().array() - mean).square().mean());
  CHECK(std::abs(mean) < 1e-3);
  // N(0, 0.02) truncated at 2 sigma has sd 0.02 * 0.8796
  CHECK(sd == doctest::Approx(0.02 * 0.8796).epsilon(0.02));
  CHECK(w.cwiseAbs().maxCoeff() <= 0.04f);
  CHECK((p.layers[0].ln1_gain.array() == 1.0f).all());
  CHECK((p.layers[0].bq.array() == 0.0f).all());
  CHECK(decays("layer0.attention.query.weight"));
  CHECK_FALSE(decays("layer0.attention.query.bias"));
  CHECK_FALSE(decays("layer0.ffn.norm.gain"));
  CHECK_FALSE(decays("mtm.bias"));
}

TEST_CASE("cross-entropy values") {
  Mat<double> uniform = Mat<double>::Zero(3, 11);
  CHECK(mtm_loss(uniform, std::vector<int>{1, -100, 4}) == doctest::Approx(std::log(11.0)).epsilon(1e-12));

  Mat<double> sure = Mat<double>::Zero(2, 5);
  sure(0, 2) = 200.0;
  sure(1, 0) = 200.0;
  CHECK(mtm_loss(sure, std::vector<int>{2, 0}) < 1e-12);

  // hand oracle on three positions
  Mat<double> l(3, 3);
  l << 1.0, 2.0, 3.0, 0.5, -0.5, 0.0, -1.0, 4.0, 1.0;
  const std::vector<int> y{0, 1, 1};
  double expect = 0.0;
  for (int r = 0; r < 3; ++r) {
    double z = 0.0;
    for (int k = 0; k < 3; ++k) z += std::exp(l(r, k));
    expect += std::log(z) - l(r, y[static_cast<std::size_t>(r)]);
  }
  CHECK(mtm_loss(l, y) == doctest::Approx(expect / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(mtm_loss(l, std::vector<int>{-100, -100, -100}), InputError);
}

TEST_CASE("perplexity of uniform and perfect predictors") {
  ModelConfig c = tiny_config();
  c.vocab_size = 40;
  c.max_len = 16;
  auto p = init_params(c, 1);
  const auto data = toy_chunks(5, 16, 40, 2);
  p.token_embedding.setZero();
  p.mtm_bias.setZero();
  CHECK(perplexity(p, c, data, 2) == doctest::Approx(40.0).epsilon(1e-6));

  std::vector<masking::MaskedChunk> same = data;
  for (auto& ch : same) {
    for (auto& l : ch.labels) {
      if (l != masking::kIgnoreLabel) l = 9;
    }
  }
  p.mtm_bias(0, 9) = 100.0f;
  CHECK(perplexity(p, c, same, 2) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("two hundred steps on a fixed batch cut the loss by 90%") {
  ModelConfig c = tiny_config();
  c.vocab_size = 30;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ff = 64;
  c.max_len = 16;
  auto state = TrainState::fresh(c, 4);
  const auto batch = toy_chunks(8, 16, 30, 6);
  const double first = train_step(state, batch, 1e-3, 1.0, 0.0).loss;
  double last = first;
  for (int i = 1; i < 200; ++i) last = train_step(state, batch, 1e-3, 1.0, 0.0).loss;
  std::vector<int> labels;
  const Batch b = make_mtm_batch(batch, labels);
  last = mtm_loss(forward(state.params, c, b), labels);
  CHECK(state.step() == 200);
  CHECK(last < 0.1 * first);
}

TEST_CASE("optimizer: zero gradient, decay and clipping") {
  Mat<float> w = Mat<float>::Constant(2, 3, 0.5f);
  Mat<float> g = Mat<float>::Zero(2, 3);
  {
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    const Mat<float> before = w;
    const std::vector<ParamRef> refs{{"x.weight", &w, &g}};
    opt.step(refs, 1e-2, 1.0);
    CHECK(opt.steps() == 1);
    CHECK((w.array() == before.array()).all());
  }
  {
    // decoupled decay alone shrinks by (1 - lr * wd)
    AdamW opt;
    Mat<float> v = Mat<float>::Constant(1, 2, 1.0f);
    Mat<float> b = Mat<float>::Constant(1, 2, 1.0f);
    Mat<float> gz = Mat<float>::Zero(1, 2);
    const std::vector<ParamRef> refs{{"x.weight", &v, &gz}, {"x.bias", &b, &gz}};
    opt.step(refs, 0.1, 0.0);
    CHECK(v(0, 0) == doctest::Approx(1.0 - 0.1 * 0.01));
    CHECK(b(0, 0) == 1.0f);
  }
  {
    // norm 10 clipped to 1: the first moment holds (1 - beta1) * 0.1 * g
    AdamW opt;
    Mat<float> x = Mat<float>::Zero(1, 2);
    Mat<float> gx(1, 2);
    gx << 6.0f, 8.0f;
    const std::vector<ParamRef> refs{{"x.bias", &x, &gx}};
    const double norm = opt.step(refs, 1e-3, 1.0);
    CHECK(norm == doctest::Approx(10.0));
    const auto& m = opt.moments().at("x.bias").first;
    CHECK(m(0, 0) == doctest::Approx(0.1 * 0.6));
    CHECK(m(0, 1) == doctest::Approx(0.1 * 0.8));
  }
  {
    AdamW opt;
    Mat<float> x = Mat<float>::Zero(1, 1);
    Mat<float> gx = Mat<float>::Constant(1, 1, std::nanf(""));
    const std::vector<ParamRef> refs{{"x.bias", &x, &gx}};
    CHECK_THROWS_AS(opt.step(refs, 1e-3, 1.0), TrainingError);
  }
}

TEST_CASE("learning-rate schedule") {
  const LinearSchedule s{1e-4, 100, 0.05};
  CHECK(s.at(0) == doctest::Approx(1e-4 / 5));
  CHECK(s.at(4) == doctest::Approx(1e-4));
  CHECK(s.at(5) == doctest::Approx(1e-4));
  CHECK(s.at(6) < 1e-4);
  CHECK(s.at(99) > 0.0);
  CHECK(s.at(100) == doctest::Approx(0.0));
}

TEST_CASE("training is deterministic and detects non-finite loss") {
  ModelConfig c = tiny_config();
  c.vocab_size = 30;
  c.max_len = 16;
  c.dropout_rate = 0.1;
  const auto batch = toy_chunks(4, 16, 30, 1);
  auto a = TrainState::fresh(c, 11);
  auto b = TrainState::fresh(c, 11);
  for (int i = 0; i < 5; ++i) {
    train_step(a, batch, 1e-3, 1.0, 0.1);
    train_step(b, batch, 1e-3, 1.0, 0.1);
  }
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));

  a.params.layers[0].w1(0, 0) = std::nanf("");
  CHECK_THROWS_AS(train_step(a, batch, 1e-3, 1.0, 0.0), TrainingError);
}

TEST_CASE("checkpoint round trip") {
  ModelConfig c = tiny_config();
  c.vocab_size = 30;
  c.max_len = 16;
  auto state = TrainState::fresh(c, 2);
  const auto batch = toy_chunks(4, 16, 30, 3);
  for (int i = 0; i < 3; ++i) train_step(state, batch, 1e-3, 1.0, 0.0);

  const auto dir = std::filesystem::temp_directory_path() / "ltm_test_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(state, dir / "a.ckpt");
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "b.ckpt");
  CHECK(io::read_text(dir / "a.ckpt") == io::read_text(dir / "b.ckpt"));
  CHECK(loaded.step() == 3);
  CHECK(perplexity(loaded.params, loaded.config, batch) == perplexity(state.params, state.config, batch));

  ModelConfig other = c;
  other.vocab_size = 31;
  try {
    load_checkpoint(dir / "a.ckpt", &other);
    FAIL("expected a shape error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("shape") != std::string::npos);
  }
  auto bytes = io::read_text(dir / "a.ckpt");
  bytes[8] = 9;  // version
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(model_config_from_json(to_json(ModelConfig{})) == ModelConfig{});
}
