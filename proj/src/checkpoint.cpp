#include "gridflow/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

namespace gridflow {

namespace {

// Anything wider would not fit in memory as doubles anyway.
constexpr std::uint32_t kMaxWidth = 1u << 20;
constexpr std::uint32_t kMaxLayers = 1024;

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t take(int width, const char* field) {
    if (bytes_.size() - pos_ < static_cast<std::size_t>(width)) {
      throw FormatError(std::string("checkpoint truncated while reading ") + field + " at byte " +
                            std::to_string(pos_),
                        pos_);
    }
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) {
      v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(b)])}
           << (8 * b);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(take(4, field)); }
  double f64(const char* field) { return std::bit_cast<double>(take(8, field)); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_policy(const Policy& policy) {
  std::string out(kCheckpointMagic);
  const auto& sizes = policy.layer_sizes();
  put_u32(out, static_cast<std::uint32_t>(sizes.size() - 1));
  for (int w : sizes) put_u32(out, static_cast<std::uint32_t>(w));
  // The flat parameter order already matches the file order.
  for (Eigen::Index i = 0; i < policy.num_params(); ++i) put_f64(out, policy.params()(i));
  return out;
}

Policy deserialize_policy(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size()) {
    throw FormatError("checkpoint truncated in magic bytes at byte " + std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.substr(0, 3) != kCheckpointMagic.substr(0, 3)) {
    throw FormatError("not a policy checkpoint: bad magic at byte 0", 0);
  }
  if (bytes[3] != kCheckpointMagic[3]) {
    throw FormatError(std::string("unsupported checkpoint version '") + bytes[3] +
                          "' at byte 3, expected version '" + kCheckpointMagic[3] + "'",
                      3);
  }
  Reader in(bytes.substr(kCheckpointMagic.size()));
  const auto offset = [&] { return kCheckpointMagic.size() + in.pos(); };

  const std::uint32_t layers = in.u32("layer count");
  if (layers < 1 || layers > kMaxLayers) {
    throw FormatError("bad layer count " + std::to_string(layers) + " at byte 4", 4);
  }
  std::vector<int> sizes;
  for (std::uint32_t k = 0; k <= layers; ++k) {
    const std::size_t at = offset();
    const std::uint32_t w = in.u32("layer width");
    if (w < 1 || w > kMaxWidth) {
      throw FormatError("bad layer width " + std::to_string(w) + " at byte " + std::to_string(at),
                        at);
    }
    sizes.push_back(static_cast<int>(w));
  }
  Policy policy(sizes);
  if (in.remaining() / 8 < static_cast<std::size_t>(policy.num_params())) {
    throw FormatError("checkpoint truncated: parameter block needs " +
                          std::to_string(policy.num_params() * 8) + " bytes at byte " +
                          std::to_string(offset()),
                      offset());
  }
  Policy::Vector params(policy.num_params());
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = in.f64("parameter");
  if (in.remaining() != 0) {
    throw FormatError("trailing bytes after checkpoint at byte " + std::to_string(offset()),
                      offset());
  }
  policy.set_params(params);
  return policy;
}

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_policy(policy);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_policy(buf.str());
}

}  // namespace gridflow
