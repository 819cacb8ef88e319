#pragma once

#include <cstdint>
#include <string>

#include "mvprior/binary_io.hpp"
#include "mvprior/layout.hpp"

// Model file layout (all integers little-endian):
//   8 bytes  magic "MVPMODEL"
//   u32      format version (1)
//   u32 x4   views, rows, cols, cell_dim
//   u32      flags (bit 0: per-view bias)
//   u64      parameter count P
//   u32 + n  meta string (length-prefixed UTF-8)
//   P x f64  parameters, IEEE-754 binary64
namespace mvprior {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline const io::Magic kModelMagic = io::make_magic("MVPMODEL");

namespace io {

inline void write_layout(Writer& w, const TemplateLayout& l) {
  w.integer(std::uint32_t(l.views));
  w.integer(std::uint32_t(l.rows));
  w.integer(std::uint32_t(l.cols));
  w.integer(std::uint32_t(l.cell_dim));
  w.integer(std::uint32_t(l.per_view_bias ? 1 : 0));
}

inline TemplateLayout read_layout(Reader& r) {
  const auto v = r.integer<std::uint32_t>();
  const auto n = r.integer<std::uint32_t>();
  const auto m = r.integer<std::uint32_t>();
  const auto l = r.integer<std::uint32_t>();
  const auto flags = r.integer<std::uint32_t>();
  constexpr std::uint32_t kMax = 1u << 16;
  if (v == 0 || n == 0 || m == 0 || l == 0 || v > kMax || n > kMax || m > kMax || l > kMax ||
      flags > 1)
    throw FormatError(r.path() + ": invalid layout header");
  return TemplateLayout(int(v), int(n), int(m), int(l), flags & 1u);
}

}  // namespace io

inline void save_model(const MultiViewModel& model, const std::string& path) {
  io::Writer w(path);
  w.magic(kModelMagic);
  w.integer(kModelFormatVersion);
  io::write_layout(w, model.layout());
  w.integer(std::uint64_t(model.params().size()));
  w.string(model.meta());
  w.reals(model.params().data(), std::size_t(model.params().size()));
  w.close();
}

inline MultiViewModel load_model(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kModelMagic);
  const auto version = r.integer<std::uint32_t>();
  if (version != kModelFormatVersion)
    throw FormatError(path + ": unsupported model format version " + std::to_string(version));
  const TemplateLayout layout = io::read_layout(r);
  const auto count = r.integer<std::uint64_t>();
  if (count != layout.param_count())
    throw FormatError(path + ": parameter count disagrees with layout");
  std::string meta = r.string();
  Eigen::VectorXd params(static_cast<Eigen::Index>(count));
  r.reals(params.data(), count);
  r.expect_end();
  return MultiViewModel(layout, std::move(params), std::move(meta));
}

}  // namespace mvprior
