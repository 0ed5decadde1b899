#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vit3d/checkpoint.hpp"
#include "vit3d/mixup.hpp"
#include "vit3d/optim.hpp"
#include "vit3d/schedule.hpp"
#include "vit3d/train.hpp"

using namespace vit3d;

namespace {

LabeledSet synth_set(int n_per_class, double effect, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_per_class = n_per_class;
  spec.dims = {16, 16, 16};
  spec.effect_size = effect;
  spec.seed = seed;
  auto [vols, manifest] = generate_synthetic(spec);
  return select_split(vols, manifest, Split::Train);
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.lr = 1e-3;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_SUITE("schedule") {
  TEST_CASE("warmup then cosine, exhaustively") {
    for (int W : {1, 5, 10, 15}) {
      for (int T = W + 1; T <= 50; ++T) {
        const ScheduleConfig s{W, T, 1e-5, 10};
        const double base = 3e-4;
        const auto ws = s.warmup_steps();
        const auto ts = s.total_steps();
        CHECK(lr_at(ws - 1, s, base) == base);
        CHECK(lr_at(ts - 1, s, base) == doctest::Approx(1e-5).epsilon(1e-12));
        for (std::int64_t k = 1; k < ws; ++k) CHECK(lr_at(k, s, base) > lr_at(k - 1, s, base));
        for (std::int64_t k = ws + 1; k < ts; ++k) CHECK(lr_at(k, s, base) <= lr_at(k - 1, s, base));
        // Cosine midpoint when the decay span has an integer middle.
        if ((ts - ws - 1) % 2 == 0) {
          CHECK(lr_at(ws + (ts - ws - 1) / 2, s, base) == doctest::Approx((base + 1e-5) / 2).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("contract violations") {
    CHECK_THROWS_AS((ScheduleConfig{10, 10, 0, 1}.validate()), ConfigError);
    const ScheduleConfig s{1, 3, 0, 2};
    CHECK_THROWS_AS(lr_at(6, s, 1.0), ContractError);
    CHECK_THROWS_AS(lr_at(-1, s, 1.0), ContractError);
    const ScheduleConfig one{1, 2, 0, 1};
    CHECK(lr_at(1, one, 0.5) == 0.5);
  }

  TEST_CASE("layer-wise learning rates") {
    const auto cfg = testing::tiny_config();
    CHECK(layerwise_lr("head.weight", cfg, 0.5, 1.0) == 1.0);
    CHECK(layerwise_lr("block1.ln1.weight", cfg, 0.5, 1.0) == 0.5);
    CHECK(layerwise_lr("block0.ln1.weight", cfg, 0.5, 1.0) == 0.25);
    CHECK(layerwise_lr("patch_embed.weight", cfg, 0.5, 1.0) == 0.125);
    const auto mult = layerwise_multipliers(cfg, 1.0);
    CHECK(std::all_of(mult.begin(), mult.end(), [](double m) { return m == 1.0; }));
  }
}

TEST_SUITE("optim") {
  TEST_CASE("two Adam steps match a hand computation") {
    ParamStore<float> params;
    params.insert("w", Tensor<float>::full({2}, 1.0f));
    NamedTensors<float> g1, g2;
    g1.insert("w", Tensor<float>::full({2}, 0.5f));
    g2.insert("w", Tensor<float>::full({2}, -1.0f));
    AdamState state;
    OptimizerConfig opt;
    adam_step(params, g1, state, opt, 0.1);
    adam_step(params, g2, state, opt, 0.1);
    double w = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      const double g = t == 1 ? 0.5 : -1.0;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t));
      const double vh = v / (1 - std::pow(0.999, t));
      w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(state.step == 2);
    CHECK(params.at("w")[0] == doctest::Approx(w).epsilon(1e-6));
  }

  TEST_CASE("weight decay modes and exclusions") {
    ParamStore<float> params;
    params.insert("block0.attn.qkv.weight", Tensor<float>::full({2}, 2.0f));
    params.insert("block0.attn.qkv.bias", Tensor<float>::full({2}, 2.0f));
    NamedTensors<float> zero;
    zero.insert("block0.attn.qkv.weight", Tensor<float>::zeros({2}));
    zero.insert("block0.attn.qkv.bias", Tensor<float>::zeros({2}));
    OptimizerConfig opt;
    opt.weight_decay = 0.1;
    auto p = params;
    AdamState s;
    adam_step(p, zero, s, opt, 0.5);
    CHECK(p.at("block0.attn.qkv.weight")[0] == doctest::Approx(2.0 * (1 - 0.05)));
    CHECK(p.at("block0.attn.qkv.bias")[0] == 2.0f);

    // L2: the decay enters the gradient, so the first step is ~lr * sign.
    opt.decay_mode = WeightDecayMode::L2;
    p = params;
    AdamState s2;
    adam_step(p, zero, s2, opt, 0.5);
    CHECK(p.at("block0.attn.qkv.weight")[0] == doctest::Approx(1.5).epsilon(1e-5));
    CHECK(p.at("block0.attn.qkv.bias")[0] == 2.0f);
  }

  TEST_CASE("zero learning rate leaves parameters untouched") {
    CounterRng rng(1);
    ParamStore<float> params;
    params.insert("a", testing::random_tensor<float>({3, 3}, rng));
    NamedTensors<float> g;
    g.insert("a", testing::random_tensor<float>({3, 3}, rng));
    auto p = params;
    AdamState s;
    adam_step(p, g, s, OptimizerConfig{}, 0.0);
    CHECK(p.bit_equal(params));
  }

  TEST_CASE("mismatched gradients are rejected") {
    ParamStore<float> params;
    params.insert("a", Tensor<float>::zeros({2}));
    NamedTensors<float> g;
    g.insert("a", Tensor<float>::zeros({3}));
    AdamState s;
    CHECK_THROWS_AS(adam_step(params, g, s, OptimizerConfig{}, 0.1), ContractError);
    NamedTensors<float> h;
    h.insert("b", Tensor<float>::zeros({2}));
    AdamState s2;
    CHECK_THROWS_AS(adam_step(params, h, s2, OptimizerConfig{}, 0.1), ContractError);
  }
}

TEST_SUITE("mixup") {
  TEST_CASE("endpoint lambdas reproduce inputs bitwise") {
    const auto a = testing::random_volume({4, 5, 6}, 1);
    const auto b = testing::random_volume({4, 5, 6}, 2);
    CHECK((mix_volumes(a, b, 1.0).data == a.data).all());
    CHECK((mix_volumes(a, b, 0.0).data == b.data).all());
    const auto m = mix_volumes(a, b, 0.3);
    CHECK((m.data >= a.data.min(b.data)).all());
    CHECK((m.data <= a.data.max(b.data)).all());
    CHECK((m.data - (0.3f * a.data + 0.7f * b.data)).abs().maxCoeff() < 1e-6f);
  }

  TEST_CASE("equal-label mixed loss equals plain cross-entropy") {
    CounterRng rng(3);
    Tape<double> tape;
    auto logits = tape.constant(testing::random_tensor<double>({4, 2}, rng));
    const std::vector<int> y{0, 1, 1, 0};
    const double ce = cross_entropy_from_logits(logits, y).value()[0];
    for (double lam : {0.0, 0.17, 0.5, 0.93, 1.0}) {
      CHECK(std::abs(mixup_loss(logits, y, y, lam).value()[0] - ce) < 1e-6);
    }
  }

  TEST_CASE("batch pairing and the single-sample case") {
    std::vector<Volume> x;
    std::vector<int> y;
    for (int i = 0; i < 6; ++i) {
      x.push_back(Volume({2, 2, 2}, {1, 1, 1}, Eigen::ArrayXf::Constant(8, static_cast<float>(i))));
      y.push_back(i % 2);
    }
    CounterRng rng(4);
    const auto mb = mixup_batch_with(x, y, 0.25, rng);
    CHECK(mb.labels_a == y);
    for (int i = 0; i < 6; ++i) {
      // Recover the partner from the mixed constant value.
      const double partner = (mb.volumes[i].data[0] - 0.25 * i) / 0.75;
      const int j = static_cast<int>(std::lround(partner));
      CHECK(std::abs(partner - j) < 1e-5);
      CHECK(mb.labels_b[i] == y[j]);
    }
    CounterRng rng2(5);
    const auto one = mixup_batch(std::span<const Volume>(x.data(), 1), std::span<const int>(y.data(), 1),
                                 MixupConfig{}, rng2);
    CHECK(one.lambda == 1.0);
    CHECK((one.volumes[0].data == x[0].data).all());
  }

  TEST_CASE("lambda follows Beta(alpha, alpha) moments") {
    for (double alpha : {0.2, 1.0}) {
      MixupConfig cfg{alpha, 0.5};
      CounterRng rng(6);
      const int n = 100000;
      double s1 = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        const double l = sample_lambda(cfg, rng);
        REQUIRE(l >= 0.0);
        REQUIRE(l <= 1.0);
        s1 += l;
        s2 += l * l;
      }
      const double mean = s1 / n;
      const double var = s2 / n - mean * mean;
      const double v = 1.0 / (4.0 * (2 * alpha + 1));
      const double mu4 = v * v * (3.0 - 6.0 / (2 * alpha + 3));
      CHECK(std::abs(mean - 0.5) < 3 * std::sqrt(v / n));
      CHECK(std::abs(var - v) < 3 * std::sqrt((mu4 - v * v) / n));
    }
  }
}

TEST_SUITE("training") {
  TEST_CASE("config text round trip and unknown keys") {
    TrainConfig tc;
    tc.lr = 1.25e-4;
    tc.mixup.alpha = 0.4;
    tc.use_mixup = false;
    tc.decay_mode = WeightDecayMode::L2;
    const auto back = parse_train_config(train_config_text(tc));
    CHECK(back.lr == tc.lr);
    CHECK(back.mixup.alpha == 0.4);
    CHECK_FALSE(back.use_mixup);
    CHECK(back.decay_mode == WeightDecayMode::L2);
    CHECK(train_config_text(back) == train_config_text(tc));
    CHECK_THROWS_AS(parse_train_config("learning_rate = 3\n"), ConfigError);
    CHECK(parse_train_config("epochs = 4\nlr = 0.5\n").epochs == 4);
  }

  TEST_CASE("zero learning rate and zero epochs keep the initial parameters") {
    const auto cfg = testing::tiny_config();
    const auto init = init_params(cfg, 1);
    const auto data = synth_set(8, 3.0, 1);
    auto tc = quick_config(1);
    tc.lr = 0.0;
    tc.epochs = 2;
    const auto r = train(cfg, init, data, data, tc);
    CHECK(r.params.bit_equal(init));
    CHECK(r.history.size() == 2);
    tc.epochs = 0;
    const auto r0 = train(cfg, init, data, data, tc);
    CHECK(r0.params.bit_equal(init));
    CHECK(r0.history.empty());
  }

  TEST_CASE("training is deterministic") {
    const auto cfg = testing::tiny_config();
    const auto data = synth_set(8, 3.0, 2);
    const auto a = train(cfg, init_params(cfg, 2), data, data, quick_config(2));
    const auto b = train(cfg, init_params(cfg, 2), data, data, quick_config(2));
    CHECK(a.params.bit_equal(b.params));
    CHECK(history_csv(a.history) == history_csv(b.history));
    const auto c = train(cfg, init_params(cfg, 2), data, data, quick_config(3));
    CHECK(history_csv(a.history) != history_csv(c.history));
  }

  TEST_CASE("loss decreases on an easy problem") {
    const auto cfg = testing::tiny_config();
    int decreased = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto data = synth_set(16, 3.0, 10 + seed);
      auto tc = quick_config(seed);
      tc.epochs = 4;
      tc.use_mixup = false;
      const auto r = train(cfg, init_params(cfg, seed), data, data, tc);
      if (r.history.back().train_loss < r.history.front().train_loss) ++decreased;
    }
    CHECK(decreased == 3);
  }

  TEST_CASE("input validation") {
    const auto cfg = testing::tiny_config();
    const auto data = synth_set(4, 1.0, 3);
    LabeledSet one_class;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] == 0) one_class.push_back(data.volumes[i], 0, data.subjects[i]);
    }
    CHECK_THROWS_AS(train(cfg, init_params(cfg, 0), data, one_class, quick_config(0)), ContractError);
    auto big = cfg;
    big.input_dim = 32;
    CHECK_THROWS_AS(train(big, init_params(big, 0), data, data, quick_config(0)), ConfigError);
    auto bad = quick_config(0);
    bad.batch_size = 0;
    CHECK_THROWS_AS(train(cfg, init_params(cfg, 0), data, data, bad), ConfigError);
  }

  TEST_CASE("finetune without epochs returns the source backbone") {
    const auto cfg = testing::tiny_config();
    const auto src = init_params(cfg, 4);
    testing::TempDir dir;
    save_checkpoint(dir.path() / "src.vtck", cfg, src);
    FinetuneConfig ft;
    ft.source_checkpoint = (dir.path() / "src.vtck").string();
    ft.reinit_head = false;
    CHECK(finetune_init(ft, cfg, 0).bit_equal(src));
    ft.reinit_head = true;
    const auto re = finetune_init(ft, cfg, 0);
    CHECK(re.at("block0.mlp.fc1.weight").bit_equal(src.at("block0.mlp.fc1.weight")));
    CHECK_FALSE(re.at("head.weight").bit_equal(src.at("head.weight")));

    // With no decay and lr_scale 1, finetuning is training from the loaded weights.
    ft.reinit_head = false;
    ft.layerwise_decay = 1.0;
    const auto data = synth_set(8, 3.0, 5);
    const auto tc = quick_config(6);
    const auto a = finetune(ft, cfg, data, data, tc);
    const auto b = train(cfg, src, data, data, tc);
    CHECK(a.params.bit_equal(b.params));

    auto three = cfg;
    three.n_classes = 3;
    const auto head3 = finetune_init(ft, three, 0);
    CHECK(head3.at("head.weight").shape() == Shape{32, 3});
  }

  TEST_CASE("predicted scores are probabilities") {
    const auto cfg = testing::tiny_config();
    const auto data = synth_set(5, 1.0, 7);
    const auto s = predict_scores(cfg, init_params(cfg, 0), data.volumes, 3);
    REQUIRE(s.size() == data.size());
    for (double x : s) CHECK((x > 0.0 && x < 1.0));
    const auto t = predict_scores(cfg, init_params(cfg, 0), data.volumes, 16);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(t[i] - s[i]) < 1e-6);
  }
}
