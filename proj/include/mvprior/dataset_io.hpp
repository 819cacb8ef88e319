#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mvprior/binary_io.hpp"
#include "mvprior/detect.hpp"
#include "mvprior/error.hpp"
#include "mvprior/eval.hpp"
#include "mvprior/svm.hpp"

// On-disk dataset formats. A split is a directory holding
//   windows.bin      labeled training windows (may be empty)
//   maps/<id>.fmap   one feature map per image
//   annotations.txt  ground-truth boxes, one per line
//
// Window file (little-endian):
//   8 bytes "MVPWINDS", u32 version (1), u32 rows, u32 cols, u32 cell_dim,
//   u64 count, then per window: i32 view (-1 negative), f64 weight,
//   rows*cols*cell_dim f64 features.
//
// Feature map file:
//   8 bytes "MVPFMAP\0", u32 version (1), u32 height, u32 width, u32 cell_dim,
//   u32 cell_size, u32 + n image id, height*width*cell_dim f64 (row-major,
//   channel fastest).
//
// Annotation line: "image x y w h view category difficult" with x, y, w, h
// in pixels and difficult 0 or 1 (optional on read, default 0).
namespace mvprior {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline const io::Magic kWindowsMagic = io::make_magic("MVPWINDS");
inline const io::Magic kFeatureMapMagic = io::make_magic("MVPFMAP");

struct WindowShape {
  int rows = 1;
  int cols = 1;
  int cell_dim = 1;
  std::size_t size() const { return std::size_t(rows) * cols * cell_dim; }
  bool operator==(const WindowShape&) const = default;
};

inline void save_windows(const LabeledWindowSet& windows, const WindowShape& shape,
                         const std::string& path) {
  io::Writer w(path);
  w.magic(kWindowsMagic);
  w.integer(kDatasetFormatVersion);
  w.integer(std::uint32_t(shape.rows));
  w.integer(std::uint32_t(shape.cols));
  w.integer(std::uint32_t(shape.cell_dim));
  w.integer(std::uint64_t(windows.size()));
  for (const auto& win : windows) {
    if (std::size_t(win.features.size()) != shape.size())
      throw InvalidArgument("window size does not match the declared shape");
    w.integer(std::int32_t(win.view < 0 ? -1 : win.view));
    w.real(win.weight);
    w.reals(win.features.data(), std::size_t(win.features.size()));
  }
  w.close();
}

inline LabeledWindowSet load_windows(const std::string& path, WindowShape* shape_out = nullptr) {
  io::Reader r(path);
  r.expect_magic(kWindowsMagic);
  const auto version = r.integer<std::uint32_t>();
  if (version != kDatasetFormatVersion)
    throw FormatError(path + ": unsupported window format version " + std::to_string(version));
  WindowShape shape;
  shape.rows = int(r.integer<std::uint32_t>());
  shape.cols = int(r.integer<std::uint32_t>());
  shape.cell_dim = int(r.integer<std::uint32_t>());
  if (shape.rows < 1 || shape.cols < 1 || shape.cell_dim < 1 || shape.size() > (1u << 24))
    throw FormatError(path + ": invalid window shape");
  const auto count = r.integer<std::uint64_t>();
  LabeledWindowSet out;
  for (std::uint64_t i = 0; i < count; ++i) {
    LabeledWindow win;
    win.view = r.integer<std::int32_t>();
    win.weight = r.real();
    win.features.resize(Eigen::Index(shape.size()));
    r.reals(win.features.data(), shape.size());
    out.push_back(std::move(win));
  }
  r.expect_end();
  if (shape_out) *shape_out = shape;
  return out;
}

inline void save_feature_map(const FeatureMap& map, const std::string& path) {
  io::Writer w(path);
  w.magic(kFeatureMapMagic);
  w.integer(kDatasetFormatVersion);
  w.integer(std::uint32_t(map.height));
  w.integer(std::uint32_t(map.width));
  w.integer(std::uint32_t(map.cell_dim));
  w.integer(std::uint32_t(map.cell_size));
  w.string(map.image_id);
  w.reals(map.data.data(), map.data.size());
  w.close();
}

inline FeatureMap load_feature_map(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kFeatureMapMagic);
  const auto version = r.integer<std::uint32_t>();
  if (version != kDatasetFormatVersion)
    throw FormatError(path + ": unsupported feature map version " + std::to_string(version));
  const auto h = r.integer<std::uint32_t>(), w = r.integer<std::uint32_t>();
  const auto l = r.integer<std::uint32_t>(), cs = r.integer<std::uint32_t>();
  if (h == 0 || w == 0 || l == 0 || cs == 0 || std::uint64_t(h) * w * l > (1ull << 28))
    throw FormatError(path + ": invalid feature map header");
  std::string id = r.string();
  FeatureMap map(int(h), int(w), int(l), std::move(id), int(cs));
  r.reals(map.data.data(), map.data.size());
  r.expect_end();
  return map;
}

inline void write_annotations(std::ostream& os, const std::vector<GroundTruthBox>& gts) {
  os.precision(17);
  for (const auto& g : gts) {
    if (g.image.find_first_of(" \t\n") != std::string::npos ||
        g.category.find_first_of(" \t\n") != std::string::npos)
      throw InvalidArgument("image ids and categories must not contain whitespace");
    os << g.image << ' ' << g.box.x << ' ' << g.box.y << ' ' << g.box.width << ' '
       << g.box.height << ' ' << g.view << ' ' << g.category << ' ' << (g.difficult ? 1 : 0)
       << '\n';
  }
}

inline std::vector<GroundTruthBox> read_annotations(std::istream& is) {
  std::vector<GroundTruthBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    GroundTruthBox g;
    if (!(ss >> g.image >> g.box.x >> g.box.y >> g.box.width >> g.box.height >> g.view >>
          g.category))
      throw FormatError("annotation line " + std::to_string(lineno) + " is malformed");
    int difficult = 0;
    if (ss >> difficult) {
      if (difficult != 0 && difficult != 1)
        throw FormatError("annotation line " + std::to_string(lineno) + ": difficult must be 0/1");
    }
    g.difficult = difficult == 1;
    if (!(g.box.width > 0 && g.box.height > 0))
      throw FormatError("annotation line " + std::to_string(lineno) + ": empty box");
    out.push_back(std::move(g));
  }
  return out;
}

struct SplitFiles {
  LabeledWindowSet windows;
  WindowShape shape;
  std::vector<FeatureMap> maps;
  std::vector<GroundTruthBox> gts;
};

// Writes a split directory; returns the paths written, relative to `dir`.
inline std::vector<std::string> save_split(const std::filesystem::path& dir,
                                           const LabeledWindowSet& windows,
                                           const WindowShape& shape,
                                           const std::vector<FeatureMap>& maps,
                                           const std::vector<GroundTruthBox>& gts) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "maps");
  std::vector<std::string> written;
  save_windows(windows, shape, (dir / "windows.bin").string());
  written.push_back("windows.bin");
  for (const auto& m : maps) {
    const std::string rel = "maps/" + m.image_id + ".fmap";
    save_feature_map(m, (dir / rel).string());
    written.push_back(rel);
  }
  std::ofstream ann(dir / "annotations.txt");
  if (!ann) throw FormatError("cannot write " + (dir / "annotations.txt").string());
  write_annotations(ann, gts);
  ann.close();
  written.push_back("annotations.txt");
  return written;
}

// Maps are read in image-id order.
inline SplitFiles load_split(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw FormatError(dir.string() + " is not a split directory");
  SplitFiles s;
  s.windows = load_windows((dir / "windows.bin").string(), &s.shape);
  std::vector<fs::path> files;
  if (fs::is_directory(dir / "maps"))
    for (const auto& e : fs::directory_iterator(dir / "maps"))
      if (e.path().extension() == ".fmap") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) s.maps.push_back(load_feature_map(f.string()));
  std::ifstream ann(dir / "annotations.txt");
  if (ann) s.gts = read_annotations(ann);
  return s;
}

}  // namespace mvprior
