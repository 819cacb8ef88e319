#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "mvprior/layout.hpp"
#include "mvprior/model_io.hpp"

using namespace mvprior;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mvprior_test_layout";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Eigen::VectorXd random_params(const TemplateLayout& l, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::VectorXd p(Eigen::Index(l.param_count()));
  for (auto& x : p) x = n(rng);
  return p;
}

}  // namespace

TEST(Layout, ParameterCount) {
  const TemplateLayout l(8, 5, 6, 4, true);
  EXPECT_EQ(l.param_count(), 8u * 5 * 6 * 4 + 8);
  const TemplateLayout nb(3, 2, 2, 5, false);
  EXPECT_EQ(nb.param_count(), 3u * 2 * 2 * 5);
  EXPECT_THROW(TemplateLayout(0, 1, 1, 1, true), InvalidArgument);
}

TEST(Layout, AzimuthsUniformAndIncreasing) {
  const TemplateLayout l(8, 1, 1, 1, true);
  const auto az = l.azimuths();
  ASSERT_EQ(az.size(), 8u);
  for (std::size_t i = 0; i < az.size(); ++i) {
    EXPECT_DOUBLE_EQ(az[i], 45.0 * double(i));
    EXPECT_LT(az[i], 360.0);
  }
}

TEST(Layout, ParamRangeSmallCases) {
  EXPECT_EQ(param_range(TemplateLayout(1, 1, 1, 2, false), {0, 0, 0}), (IndexRange{0, 2}));
  EXPECT_EQ(param_range(TemplateLayout(2, 1, 1, 2, false), {1, 0, 0}), (IndexRange{2, 4}));
}

TEST(Layout, ParamRangeMatchesCounterEnumeration) {
  const TemplateLayout l(2, 2, 2, 3, true);
  std::size_t counter = 0, expected_begin = 0;
  for (int v = 0; v < l.views; ++v)
    for (int r = 0; r < l.rows; ++r)
      for (int c = 0; c < l.cols; ++c) {
        if (v == 1 && r == 1 && c == 1) expected_begin = counter;
        const auto range = param_range(l, {v, r, c});
        EXPECT_EQ(range.begin, counter);
        EXPECT_EQ(range.size(), 3u);
        counter += std::size_t(l.cell_dim);
      }
  EXPECT_EQ(expected_begin, 21u);
  EXPECT_EQ(param_range(l, {1, 1, 1}), (IndexRange{21, 24}));
}

TEST(Layout, FlatteningIsABijection) {
  for (const TemplateLayout l : {TemplateLayout(3, 2, 4, 3, true), TemplateLayout(1, 3, 1, 2, false),
                                 TemplateLayout(4, 1, 3, 1, true)}) {
    std::vector<int> cover(l.param_count(), 0);
    for (std::size_t id = 0; id < l.cell_count(); ++id) {
      const auto cell = l.cell_at(id);
      EXPECT_EQ(l.cell_id(cell), id);
      const auto r = param_range(l, cell);
      for (std::size_t p = r.begin; p < r.end; ++p) ++cover[p];
    }
    for (std::size_t p = 0; p < l.param_count(); ++p) {
      if (l.is_bias_slot(p))
        EXPECT_EQ(cover[p], 0) << p;
      else
        EXPECT_EQ(cover[p], 1) << p;
    }
    if (l.per_view_bias)
      for (int v = 0; v < l.views; ++v) EXPECT_EQ(l.view_of_param(l.bias_index(v)), v);
  }
}

TEST(Layout, OutOfRangeCellThrows) {
  const TemplateLayout l(2, 2, 2, 1, true);
  EXPECT_THROW(param_range(l, {2, 0, 0}), IndexError);
  EXPECT_THROW(param_range(l, {0, -1, 0}), IndexError);
  EXPECT_THROW(param_range(l, {0, 0, 2}), IndexError);
  EXPECT_THROW(l.view_range(5), IndexError);
  EXPECT_THROW(TemplateLayout(2, 1, 1, 1, false).bias_index(0), IndexError);
}

TEST(Layout, CyclicViewDistance) {
  EXPECT_EQ(cyclic_view_distance(0, 7, 8), 1);
  EXPECT_EQ(cyclic_view_distance(1, 5, 8), 4);
  EXPECT_EQ(cyclic_view_distance(2, 2, 8), 0);
  EXPECT_EQ(cyclic_view_distance(0, 1, 2), 1);
}

TEST(MultiViewModel, RejectsBadParams) {
  const TemplateLayout l(2, 1, 1, 2, true);
  EXPECT_THROW(MultiViewModel(l, Eigen::VectorXd::Zero(3)), InvalidArgument);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(6);
  p[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(MultiViewModel(l, p), InvalidArgument);
}

TEST(MultiViewModel, SliceView) {
  const TemplateLayout one(1, 2, 2, 2, false);
  const MultiViewModel m1(one, random_params(one, 3));
  EXPECT_EQ(m1.slice_view(0).weights, m1.params());

  const TemplateLayout l(2, 2, 1, 3, true);
  const MultiViewModel zero(l);
  EXPECT_TRUE(zero.slice_view(1).weights.isZero(0.0));
  EXPECT_EQ(zero.slice_view(1).bias, 0.0);
  EXPECT_THROW(zero.slice_view(2), IndexError);

  const MultiViewModel m(l, random_params(l, 5));
  const auto s0 = m.slice_view(0), s1 = m.slice_view(1);
  Eigen::VectorXd joined(m.params().size());
  joined << s0.weights, s1.weights, s0.bias, s1.bias;
  EXPECT_EQ(joined, m.params());
  EXPECT_EQ(assemble_views(l, {s0, s1}).params(), m.params());
}

TEST(ModelIo, RoundTripIsBitExact) {
  const TemplateLayout l(3, 2, 3, 4, true);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    Eigen::VectorXd p = seed == 0 ? Eigen::VectorXd::Zero(Eigen::Index(l.param_count()))
                                  : random_params(l, seed);
    if (seed == 2) {
      p[0] = std::numeric_limits<double>::denorm_min();
      p[1] = -0.0;
      p[2] = std::numeric_limits<double>::max();
    }
    const MultiViewModel m(l, p, "target car");
    const auto path = temp_file("roundtrip.mvpm").string();
    save_model(m, path);
    const MultiViewModel back = load_model(path);
    EXPECT_EQ(back.layout(), l);
    EXPECT_EQ(back.meta(), "target car");
    ASSERT_EQ(back.params().size(), p.size());
    EXPECT_EQ(std::memcmp(back.params().data(), p.data(), sizeof(double) * std::size_t(p.size())), 0);
  }
}

TEST(ModelIo, HeaderLayoutIsLittleEndian) {
  const TemplateLayout l(2, 1, 1, 1, true);
  Eigen::VectorXd p(4);
  p << 1.0, -2.0, 0.5, 0.25;
  const auto path = temp_file("header.mvpm").string();
  save_model(MultiViewModel(l, p, "m"), path);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), {});
  ASSERT_EQ(b.size(), 8u + 4 + 16 + 4 + 8 + 4 + 1 + 4 * 8);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "MVPMODEL");
  EXPECT_EQ(b[8], 1);   // version
  EXPECT_EQ(b[12], 2);  // views
  EXPECT_EQ(b[28], 1);  // bias flag
  EXPECT_EQ(b[32], 4);  // P
  double first;
  std::memcpy(&first, b.data() + 8 + 4 + 16 + 4 + 8 + 4 + 1, 8);
  EXPECT_EQ(first, 1.0);
}

TEST(ModelIo, CorruptFilesAreRejected) {
  const TemplateLayout l(2, 1, 2, 1, true);
  const auto good = temp_file("good.mvpm").string();
  save_model(MultiViewModel(l, random_params(l, 9)), good);
  std::ifstream in(good, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});

  auto write = [&](const std::string& name, const std::string& data) {
    const auto p = temp_file(name).string();
    std::ofstream(p, std::ios::binary) << data;
    return p;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_model(write("magic.mvpm", bad_magic)), FormatError);

  std::string bad_version = bytes;
  bad_version[8] = 7;
  EXPECT_THROW(load_model(write("version.mvpm", bad_version)), FormatError);

  EXPECT_THROW(load_model(write("trunc.mvpm", bytes.substr(0, bytes.size() - 3))), FormatError);
  EXPECT_THROW(load_model(write("trailing.mvpm", bytes + "x")), FormatError);

  std::string bad_count = bytes;
  bad_count[32] = char(bad_count[32] + 1);
  EXPECT_THROW(load_model(write("count.mvpm", bad_count)), FormatError);
  EXPECT_THROW(load_model(temp_file("missing.mvpm").string()), FormatError);
}
