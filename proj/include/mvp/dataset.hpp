#pragma once

#include "mvp/common.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace mvp {

// 8-bit RGB, interleaved, row-major — the layout PPM P6 and the packed format
// share on disk.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const Image&) const = default;
};

// Flat channel-major float buffer in [0, 1], the layout embed_patches consumes.
template <typename Scalar>
VectorX<Scalar> to_chw(const Image& img) {
  VectorX<Scalar> out(static_cast<Index>(3) * img.height * img.width);
  const Index plane = static_cast<Index>(img.height) * img.width;
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < 3; ++c)
      out[c * plane + i] = static_cast<Scalar>(img.rgb[static_cast<std::size_t>(3 * i + c)]) / Scalar(255);
  return out;
}

// --- PPM (P6, maxval 255) ---------------------------------------------------------

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed: " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path.string());
  auto fail = [&](const std::string& why) -> std::runtime_error {
    return std::runtime_error("undecodable file " + path.string() + ": " + why);
  };
  auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {  // comment to end of line
        while ((ch = in.get()) != EOF && ch != '\n') {}
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw fail("unexpected end of header");
    return tok;
  };
  if (next_token() != "P6") throw fail("not a binary PPM (P6)");
  Image img;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (maxval != 255) throw fail("unsupported maxval");
  } catch (const std::invalid_argument&) {
    throw fail("malformed header");
  }
  if (img.width <= 0 || img.height <= 0) throw fail("non-positive dimensions");
  img.rgb.resize(static_cast<std::size_t>(3) * img.width * img.height);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw fail("truncated pixel data");
  return img;
}

// --- packed format ------------------------------------------------------------------
//
// "MVPD1\n", then per sample: u32 class id, u16 height, u16 width (all
// little-endian), followed by 3*H*W interleaved RGB bytes.

inline constexpr const char* kPackedMagic = "MVPD1";

inline void write_packed_dataset(const std::filesystem::path& path,
                                 const std::vector<std::pair<std::uint32_t, Image>>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_packed_dataset: cannot open " + path.string());
  out << kPackedMagic << "\n";
  auto put16 = [&](std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
  };
  auto put32 = [&](std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
  };
  for (const auto& [cls, img] : samples) {
    put32(cls);
    put16(static_cast<std::uint16_t>(img.height));
    put16(static_cast<std::uint16_t>(img.width));
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
  }
  if (!out) throw std::runtime_error("write_packed_dataset: write failed: " + path.string());
}

inline std::vector<std::pair<std::uint32_t, Image>> read_packed_dataset(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_packed_dataset: cannot open " + path.string());
  auto fail = [&](const std::string& why) -> std::runtime_error {
    return std::runtime_error("undecodable file " + path.string() + ": " + why);
  };
  std::string magic(6, '\0');
  in.read(magic.data(), 6);
  if (in.gcount() != 6 || magic != std::string(kPackedMagic) + "\n") throw fail("bad magic");
  std::vector<std::pair<std::uint32_t, Image>> samples;
  for (;;) {
    unsigned char head[8];
    in.read(reinterpret_cast<char*>(head), 8);
    if (in.gcount() == 0) break;
    if (in.gcount() != 8) throw fail("truncated sample header");
    const std::uint32_t cls = static_cast<std::uint32_t>(head[0]) | (head[1] << 8) |
                              (head[2] << 16) | (static_cast<std::uint32_t>(head[3]) << 24);
    Image img;
    img.height = head[4] | (head[5] << 8);
    img.width = head[6] | (head[7] << 8);
    if (img.height <= 0 || img.width <= 0) throw fail("non-positive sample dimensions");
    img.rgb.resize(static_cast<std::size_t>(3) * img.height * img.width);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw fail("truncated pixel data");
    samples.emplace_back(cls, std::move(img));
  }
  return samples;
}

// --- manifest -------------------------------------------------------------------------

struct DatasetManifest {
  std::string id;  // normalized source path; used for source/target disjointness
  std::vector<std::string> class_names;          // sorted, defines class order
  std::vector<std::vector<int>> class_samples;   // global sample indices per class
  std::vector<Image> images;
  std::vector<std::string> sample_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// In-memory manifest from (class id, image) pairs; classes ordered by id.
inline DatasetManifest make_manifest(std::vector<std::pair<std::uint32_t, Image>> samples,
                                     std::string id) {
  DatasetManifest m;
  m.id = std::move(id);
  std::map<std::uint32_t, std::vector<int>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_class[samples[i].first].push_back(static_cast<int>(i));
    m.images.push_back(std::move(samples[i].second));
    m.sample_names.push_back(m.id + "#" + std::to_string(i));
  }
  for (auto& [cls, ids] : by_class) {
    m.class_names.push_back("class_" + std::to_string(cls));
    m.class_samples.push_back(std::move(ids));
  }
  return m;
}

// Loads either a class-per-directory tree of PPMs or a single packed file.
// Class ordering is sorted (by directory name / numeric class id) so episode
// sampling is reproducible across filesystems.
inline DatasetManifest load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.id = root.lexically_normal().string();
  if (fs::is_regular_file(root)) {
    m = make_manifest(read_packed_dataset(root), m.id);
  } else if (fs::is_directory(root)) {
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& dir : class_dirs) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (files.empty()) continue;
      std::vector<int> ids;
      for (const auto& f : files) {
        ids.push_back(static_cast<int>(m.images.size()));
        m.images.push_back(read_ppm(f));
        m.sample_names.push_back(dir.filename().string() + "/" + f.filename().string());
      }
      m.class_names.push_back(dir.filename().string());
      m.class_samples.push_back(std::move(ids));
    }
  } else {
    throw std::runtime_error("load_dataset: no such file or directory: " + root.string());
  }
  if (m.num_classes() < 5)
    throw std::runtime_error("load_dataset: insufficient classes in " + root.string() + " (have " +
                             std::to_string(m.num_classes()) + ", sampling needs at least 5)");
  return m;
}

}  // namespace mvp
