#include "pfsa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pfsa/errors.hpp"

namespace pfsa {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T)) throw ParseError(std::string("checkpoint truncated while reading ") + what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated while reading ") + what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Params& params) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

Params decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof kCheckpointMagic, "magic") != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw ParseError("bad magic: not a checkpoint file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("entry count");
  Params params;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.take(name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 4) throw ParseError("checkpoint entry '" + name + "' has invalid rank " + std::to_string(rank));
    Shape shape;
    std::size_t count_values = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dimension");
      if (d == 0 || d > r.remaining()) throw ParseError("checkpoint entry '" + name + "' has an invalid dimension");
      shape.push_back(static_cast<std::size_t>(d));
      count_values *= shape.back();
      if (count_values > r.remaining()) throw ParseError("checkpoint truncated in entry '" + name + "'");
    }
    std::vector<double> data(count_values);
    for (auto& v : data) v = r.get<double>("payload");
    if (!params.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw ParseError("duplicate checkpoint entry '" + name + "'");
    }
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint table");
  return params;
}

void write_checkpoint(const Params& params, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(params);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

Params read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace pfsa
