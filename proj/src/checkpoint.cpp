#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "spa/error.hpp"
#include "spa/numerics.hpp"

namespace spa::nn {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                     std::uint8_t>>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFFu));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                       std::uint8_t>>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t length) {
    need(length);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), length);
    pos_ += length;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.names().size()));
  for (const std::string& name : params.names()) {
    const Tensor& t = params.at(name);
    if (name.size() > 0xFFFF) throw DataError("parameter name too long: " + name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape().size()));
    for (std::size_t dim : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    for (double v : t.values()) put_le<double>(out, v);
  }
  return out;
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.get_string(4) != std::string(kMagic, 4)) throw DataError("not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  ParamSet params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = in.get<std::uint16_t>();
    std::string name = in.get_string(len);
    const auto rank = in.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint32_t>();
    std::vector<double> values(numel(shape));
    for (double& v : values) v = in.get<double>();
    params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint tensors");
  return params;
}

void save_checkpoint(const ParamSet& params, const std::string& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace spa::nn
