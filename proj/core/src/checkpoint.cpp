#include "bgpt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bgpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void put_string32(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, need(sizeof(U)), sizeof(U));
    return v;
  }
  std::string get_string(std::size_t n) {
    const auto* p = need(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const std::uint8_t* need(std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint: truncated");
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

ModelConfig without_head(ModelConfig c) {
  c.class_count = 0;
  return c;
}

}  // namespace

Bytes serialize_checkpoint(const ModelParams<float>& params) {
  Writer w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string json = nlohmann::json(params.config).dump();
  w.put<std::uint64_t>(json.size());
  w.put_bytes(json.data(), json.size());
  const auto list = params.list();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
  for (const Parameter<float>* p : list) {
    w.put_string32(p->name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.shape().size()));
    for (std::size_t d : p->value.shape()) w.put<std::uint64_t>(d);
    w.put_bytes(p->value.ptr(), p->value.size() * sizeof(float));
  }
  return w.take();
}

ModelParams<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                          const std::optional<ModelConfig>& expected) {
  Reader r(bytes);
  if (std::memcmp(r.need(sizeof(kCheckpointMagic)), kCheckpointMagic,
                  sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto json_len = r.get<std::uint64_t>();
  ModelConfig config;
  try {
    config = nlohmann::json::parse(r.get_string(json_len)).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad config block: ") + e.what());
  }
  if (expected && without_head(*expected) != without_head(config)) {
    throw FormatError("checkpoint: config mismatch (stored " + nlohmann::json(config).dump() +
                      ", expected " + nlohmann::json(*expected).dump() + ")");
  }
  ModelParams<float> params(config);
  auto list = params.list();
  const auto count = r.get<std::uint32_t>();
  if (count != list.size()) throw FormatError("checkpoint: parameter count mismatch");
  for (Parameter<float>* p : list) {
    const std::string name = r.get_string(r.get<std::uint32_t>());
    if (name != p->name) throw FormatError("checkpoint: expected " + p->name + ", got " + name);
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != p->value.shape()) throw FormatError("checkpoint: shape mismatch for " + name);
    std::memcpy(p->value.ptr(), r.need(p->value.size() * sizeof(float)),
                p->value.size() * sizeof(float));
    if (!p->value.all_finite()) throw FormatError("checkpoint: non-finite values in " + name);
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return params;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  write_file(path, serialize_checkpoint(params));
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path,
                                   const std::optional<ModelConfig>& expected) {
  return deserialize_checkpoint(read_file(path), expected);
}

}  // namespace bgpt
