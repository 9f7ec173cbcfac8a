#include "lmpt/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "lmpt/errors.hpp"

namespace lmpt {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const unsigned char*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
  void put_section(const std::string& s) {
    put<std::uint64_t>(s.size());
    put_bytes(s);
  }
  std::vector<unsigned char> bytes;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::string get_section() { return get_string(get<std::uint64_t>()); }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CheckpointError("checkpoint truncated");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json parse_section(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint ") + what + " section: " + e.what());
  }
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  Writer payload;
  payload.put_section(to_json(c.model).dump());
  payload.put_section(to_json(c.train).dump());
  payload.put_section(c.registry.to_json().dump());
  const auto named = c.params.named();
  payload.put<std::uint32_t>(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    payload.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    payload.put_bytes(name);
    payload.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) payload.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.data()) payload.put<float>(static_cast<float>(v));
  }

  Writer out;
  out.put_bytes("LMPT");
  out.put<std::uint16_t>(kCheckpointVersion);
  out.put<std::uint32_t>(crc32_of(payload.bytes.data(), payload.bytes.size()));
  out.bytes.insert(out.bytes.end(), payload.bytes.begin(), payload.bytes.end());
  return out.bytes;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader header(bytes.data(), bytes.size());
  if (header.get_string(4) != "LMPT") throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = header.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto stored_crc = header.get<std::uint32_t>();
  constexpr std::size_t kHeader = 4 + 2 + 4;
  const unsigned char* payload = bytes.data() + kHeader;
  const std::size_t payload_size = bytes.size() - kHeader;
  if (crc32_of(payload, payload_size) != stored_crc) throw CheckpointError("checkpoint checksum mismatch");

  Reader in(payload, payload_size);
  Checkpoint c;
  try {
    c.model = model_config_from_json(parse_section(in.get_section(), "model config"));
    c.train = train_config_from_json(parse_section(in.get_section(), "train config"));
    c.registry = LabelRegistry::from_json(parse_section(in.get_section(), "registry"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  c.params = build_model(c.model, 0);
  std::map<std::string, ad::Tensor> by_name;
  for (auto& [name, t] : c.params.named()) by_name.emplace(name, t);

  const auto count = in.get<std::uint32_t>();
  if (count != by_name.size()) throw CheckpointError("checkpoint parameter count does not match its model config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.get_string(in.get<std::uint32_t>());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint has unknown parameter '" + name + "'");
    const auto ndim = in.get<std::uint32_t>();
    ad::Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(in.get<std::uint32_t>());
    auto& t = it->second;
    if (shape != t.shape()) throw CheckpointError("checkpoint parameter '" + name + "' has the wrong shape");
    for (auto& v : t.mutable_data()) v = static_cast<double>(in.get<float>());
  }
  if (!in.done()) throw CheckpointError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

namespace {
std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_all(path)); }

std::string file_checksum(const std::string& path) {
  const auto bytes = read_all(path);
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc32_of(bytes.data(), bytes.size()));
  return buf;
}

}  // namespace lmpt
