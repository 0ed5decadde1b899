#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vit3d/forest.hpp"
#include "vit3d/glcm.hpp"
#include "vit3d/metrics.hpp"

using namespace vit3d;

namespace {

Volume from_values(Dims3 dims, std::vector<float> values) {
  return Volume(dims, {1, 1, 1}, Eigen::Map<Eigen::ArrayXf>(values.data(), static_cast<Eigen::Index>(values.size())));
}

std::pair<Eigen::MatrixXd, std::vector<int>> blobs(int n, double gap, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::MatrixXd x(n, 3);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2;
    for (int c = 0; c < 3; ++c) x(i, c) = rng.normal() + (c == 0 ? gap * (i % 2) : 0.0);
  }
  return {x, y};
}

}  // namespace

TEST_SUITE("glcm") {
  TEST_CASE("thirteen unique directions") {
    const auto& d = glcm_directions();
    for (std::size_t a = 0; a < 13; ++a) {
      CHECK(d[a] != (Offset3{0, 0, 0}));
      for (std::size_t b = 0; b < 13; ++b) {
        if (a != b) CHECK(d[a] != (Offset3{-d[b][0], -d[b][1], -d[b][2]}));
        if (a != b) CHECK(d[a] != d[b]);
      }
    }
  }

  TEST_CASE("constant volume") {
    const auto v = from_values({3, 3, 3}, std::vector<float>(27, 5.0f));
    const auto q = quantize(v, 32);
    CHECK(std::all_of(q.begin(), q.end(), [](int l) { return l == 0; }));
    const auto f = glcm_features(v);
    CHECK(f[0] == 0.0);
    CHECK(f[2] == 1.0);
    CHECK(f[3] == 1.0);
    CHECK(f[4] == 0.0);
    CHECK(f[5] == 0.0);
  }

  TEST_CASE("two-voxel volume, two levels") {
    const auto v = from_values({2, 1, 1}, {0.0f, 1.0f});
    const GlcmConfig cfg{2, 1, true};
    const auto p = glcm_average(v, cfg);
    CHECK(p(0, 1) == 0.5);
    CHECK(p(1, 0) == 0.5);
    const auto f = glcm_features(v, cfg);
    CHECK(f[0] == 1.0);
    CHECK(f[1] == 1.0);
    CHECK(f[2] == 0.5);
    CHECK(f[3] == 0.5);
    CHECK(f[4] == doctest::Approx(std::log(2.0)));
    CHECK(f[5] == doctest::Approx(-1.0));
    // Only the x offset fits; the other 12 have no pairs.
    CHECK(glcm_matrix(v, cfg, {0, 1, 0}).sum() == 0.0);
  }

  TEST_CASE("checkerboard contrast") {
    std::vector<float> vals;
    for (int z = 0; z < 4; ++z)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) vals.push_back(static_cast<float>((x + y + z) % 2));
    const GlcmConfig cfg{2, 1, true};
    const auto v = from_values({4, 4, 4}, vals);
    int odd = 0;
    for (const auto& d : glcm_directions()) {
      const bool flips = (std::abs(d[0]) + std::abs(d[1]) + std::abs(d[2])) % 2 == 1;
      odd += flips;
      CHECK(haralick_features(glcm_matrix(v, cfg, d))[0] == (flips ? 1.0 : 0.0));
    }
    CHECK(odd == 7);
    CHECK(glcm_features(v, cfg)[0] == doctest::Approx(7.0 / 13.0));
  }

  TEST_CASE("matrices are normalized and symmetric") {
    const auto v = testing::random_volume({6, 5, 4}, 3);
    for (const auto& d : glcm_directions()) {
      const auto p = glcm_matrix(v, GlcmConfig{}, d);
      CHECK(std::abs(p.sum() - 1.0) < 1e-12);
      CHECK((p - p.transpose()).cwiseAbs().maxCoeff() == 0.0);
      const auto a = glcm_matrix(v, GlcmConfig{32, 1, false}, d);
      CHECK(std::abs(a.sum() - 1.0) < 1e-12);
    }
    CHECK(std::abs(glcm_average(v, GlcmConfig{8, 2, true}).sum() - 1.0) < 1e-12);
  }

  TEST_CASE("features are invariant to positive intensity scaling") {
    auto v = testing::random_volume({8, 8, 8}, 4);
    const auto f = glcm_features(v);
    v.data *= 4.0f;
    CHECK(glcm_features(v) == f);
  }

  TEST_CASE("feature CSV round trip") {
    LabeledSet set;
    set.push_back(testing::random_volume({6, 6, 6}, 5), 0, "a");
    set.push_back(testing::random_volume({6, 6, 6}, 6), 1, "b");
    const auto t = extract_features(set);
    const auto back = parse_feature_csv(feature_csv(t));
    CHECK(back.subjects == t.subjects);
    CHECK(back.labels == t.labels);
    CHECK(back.features == t.features);
    CHECK_THROWS_AS(parse_feature_csv("subject_id,label\n"), FormatError);
  }
}

TEST_SUITE("forest") {
  TEST_CASE("separable data is classified perfectly") {
    auto [x, y] = blobs(60, 20.0, 1);
    ForestConfig cfg;
    cfg.n_trees = 25;
    const auto f = forest_fit(x, y, cfg);
    const auto s = forest_predict(f, x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK((s[i] > 0.5) == (y[i] == 1));
    CHECK(roc_auc({s, y}) == 1.0);
  }

  TEST_CASE("fully grown trees without bootstrap have pure leaves") {
    auto [x, y] = blobs(40, 0.5, 2);
    ForestConfig cfg;
    cfg.n_trees = 5;
    cfg.bootstrap = false;
    const auto f = forest_fit(x, y, cfg);
    for (const auto& t : f.trees) {
      for (const auto& n : t.nodes) {
        if (n.feature < 0) CHECK((n.n0 == 0 || n.n1 == 0));
      }
      CHECK(t.nodes[0].n0 == 20);
      CHECK(t.nodes[0].n1 == 20);
    }
  }

  TEST_CASE("duplicate rows with conflicting labels stop at a mixed leaf") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 2);
    const std::vector<int> y{0, 1, 0, 1};
    ForestConfig cfg;
    cfg.n_trees = 3;
    cfg.bootstrap = false;
    const auto f = forest_fit(x, y, cfg);
    for (const auto& t : f.trees) {
      REQUIRE(t.nodes.size() == 1);
      CHECK(t.nodes[0].n0 == 2);
      CHECK(t.nodes[0].n1 == 2);
    }
    CHECK(forest_predict(f, x) == std::vector<double>(4, 0.0));
  }

  TEST_CASE("scores are vote fractions") {
    auto [x, y] = blobs(50, 1.0, 3);
    ForestConfig cfg;
    cfg.n_trees = 7;
    const auto s = forest_predict(forest_fit(x, y, cfg), x);
    for (double v : s) CHECK(std::abs(v * 7 - std::round(v * 7)) < 1e-12);
  }

  TEST_CASE("fitting is deterministic per seed") {
    auto [x, y] = blobs(50, 1.0, 4);
    ForestConfig cfg;
    cfg.n_trees = 10;
    const auto a = forest_fit(x, y, cfg);
    CHECK(a == forest_fit(x, y, cfg));
    cfg.seed = 1;
    CHECK_FALSE(a == forest_fit(x, y, cfg));
  }

  TEST_CASE("serialization round trip and corruption") {
    auto [x, y] = blobs(30, 1.0, 5);
    ForestConfig cfg;
    cfg.n_trees = 4;
    const auto f = forest_fit(x, y, cfg);
    const auto bytes = encode_forest(f);
    CHECK(decode_forest(bytes) == f);
    CHECK(encode_forest(decode_forest(bytes)) == bytes);
    testing::TempDir dir;
    save_forest(dir.path() / "f.rfor", f);
    CHECK(load_forest(dir.path() / "f.rfor") == f);
    CHECK(testing::read_bytes(dir.path() / "f.rfor") == bytes);
    std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(decode_forest(cut), FormatError);
    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(decode_forest(bad), FormatError);
  }

  TEST_CASE("invalid inputs") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 2);
    CHECK_THROWS_AS(forest_fit(x, std::vector<int>{1, 1, 1, 1}, ForestConfig{}), ContractError);
    CHECK_THROWS_AS(forest_fit(x, std::vector<int>{0, 1}, ForestConfig{}), ContractError);
    ForestConfig bad;
    bad.n_trees = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("GLCM features separate a strong synthetic effect") {
    SynthSpec spec;
    spec.n_per_class = 30;
    spec.dims = {16, 16, 16};
    spec.effect_size = 3.0;
    spec.seed = 11;
    auto [vols, manifest] = generate_synthetic(spec);
    LabeledSet train, test;
    for (std::size_t i = 0; i < vols.size(); ++i) {
      (i < 40 ? train : test).push_back(vols[i], manifest.entries[i].label, manifest.entries[i].subject_id);
    }
    const auto ftrain = extract_features(train);
    const auto ftest = extract_features(test);
    const auto forest = forest_fit(ftrain.features, ftrain.labels, ForestConfig{});
    CHECK(roc_auc({forest_predict(forest, ftest.features), ftest.labels}) > 0.8);
  }
}
