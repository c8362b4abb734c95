#pragma once

#include "mvp/common.hpp"
#include "mvp/vit.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace mvp {

// Checkpoint container: a textual header (magic line "MVPCKPT1", key:value
// lines, blank line) followed by raw little-endian 32-bit floats. Prompt
// checkpoints carry exactly the keys d, N, p, seed, precision; the same
// container holds backbone arrays under kind:backbone with extra geometry keys.

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, DimMismatch };
  CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

inline constexpr const char* kCheckpointMagic = "MVPCKPT1";

namespace detail {

inline void append_le32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t read_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float bits_to_float(std::uint32_t b) {
  float f;
  std::memcpy(&f, &b, 4);
  return f;
}

inline std::uint32_t float_to_bits(float f) {
  std::uint32_t b;
  std::memcpy(&b, &f, 4);
  return b;
}

}  // namespace detail

struct CheckpointBlob {
  std::vector<std::pair<std::string, std::string>> fields;
  std::vector<float> payload;

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return &v;
    return nullptr;
  }

  std::int64_t get_int(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw CheckpointError(CheckpointError::Kind::DimMismatch, "checkpoint: missing header key " + key);
    return std::stoll(*v);
  }
};

inline void write_checkpoint_blob(const std::filesystem::path& path,
                                  const std::vector<std::pair<std::string, std::string>>& fields,
                                  const std::vector<float>& payload) {
  std::string bytes;
  bytes += kCheckpointMagic;
  bytes += '\n';
  for (const auto& [k, v] : fields) bytes += k + ":" + v + "\n";
  bytes += '\n';
  bytes.reserve(bytes.size() + payload.size() * 4);
  for (float f : payload) detail::append_le32(bytes, detail::float_to_bits(f));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: write failed: " + path.string());
}

inline CheckpointBlob read_checkpoint_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos)
      throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint: truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kCheckpointMagic)
    throw CheckpointError(CheckpointError::Kind::BadMagic, "checkpoint: bad magic");
  CheckpointBlob blob;
  for (;;) {
    std::string line = next_line();
    if (line.empty()) break;
    std::size_t colon = line.find(':');
    if (colon == std::string::npos)
      throw CheckpointError(CheckpointError::Kind::BadMagic, "checkpoint: malformed header line");
    blob.fields.emplace_back(line.substr(0, colon), line.substr(colon + 1));
  }
  const std::size_t payload_bytes = bytes.size() - pos;
  if (payload_bytes % 4 != 0)
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint: truncated payload");
  blob.payload.resize(payload_bytes / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  for (std::size_t i = 0; i < blob.payload.size(); ++i)
    blob.payload[i] = detail::bits_to_float(detail::read_le32(p + 4 * i));
  return blob;
}

// --- backbone files -------------------------------------------------------------

template <typename Scalar>
void save_backbone(const std::filesystem::path& path, const BackboneWeights<Scalar>& w,
                   const ViTConfig& cfg, std::uint64_t seed) {
  std::vector<float> payload;
  payload.reserve(static_cast<std::size_t>(count_backbone_params(cfg)));
  for_each_backbone_array(w, [&](const char*, const MatrixX<Scalar>& m, ArrayKind) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) payload.push_back(static_cast<float>(m(i, j)));
  });
  write_checkpoint_blob(path,
                        {{"kind", "backbone"},
                         {"d", std::to_string(cfg.embed_dim)},
                         {"N", std::to_string(cfg.num_layers)},
                         {"H", std::to_string(cfg.image_height)},
                         {"W", std::to_string(cfg.image_width)},
                         {"h", std::to_string(cfg.patch_height)},
                         {"w", std::to_string(cfg.patch_width)},
                         {"heads", std::to_string(cfg.num_heads)},
                         {"mlp_num", std::to_string(cfg.mlp_num)},
                         {"mlp_den", std::to_string(cfg.mlp_den)},
                         {"seed", std::to_string(seed)},
                         {"precision", "f32"}},
                        payload);
}

template <typename Scalar>
BackboneWeights<Scalar> load_backbone(const std::filesystem::path& path, const ViTConfig& cfg) {
  CheckpointBlob blob = read_checkpoint_blob(path);
  const std::string* kind = blob.find("kind");
  if (!kind || *kind != "backbone")
    throw CheckpointError(CheckpointError::Kind::BadMagic, "backbone checkpoint: wrong kind");
  if (blob.get_int("d") != cfg.embed_dim || blob.get_int("N") != cfg.num_layers ||
      blob.get_int("H") != cfg.image_height || blob.get_int("W") != cfg.image_width ||
      blob.get_int("h") != cfg.patch_height || blob.get_int("w") != cfg.patch_width)
    throw CheckpointError(CheckpointError::Kind::DimMismatch,
                          "backbone checkpoint: header does not match configuration");
  if (blob.payload.size() != static_cast<std::size_t>(count_backbone_params(cfg)))
    throw CheckpointError(CheckpointError::Kind::DimMismatch, "backbone checkpoint: payload size mismatch");
  auto w = make_backbone_shell<Scalar>(cfg);
  std::size_t k = 0;
  for_each_backbone_array(w, [&](const char*, MatrixX<Scalar>& m, ArrayKind) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(blob.payload[k++]);
  });
  return w;
}

}  // namespace mvp
