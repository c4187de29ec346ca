#include "curvegcn/checkpoint.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

namespace curvegcn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'G', 'C', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return buf_; }
  std::string& data() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, std::string file) : buf_(buf), end_(end), file_(std::move(file)) {}
  void bytes(void* p, std::size_t n) {
    if (n > end_ - pos_) throw ParseError(file_ + ": truncated checkpoint");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0, end_;
  std::string file_;
};

void write_store(Writer& w, const ParamStore<Real>& store) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store) {
    w.str(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
    for (Index d : p.shape) w.put<std::int64_t>(d);
    w.bytes(p.value.data(), sizeof(Real) * static_cast<std::size_t>(p.value.size()));
  }
}

void read_store(Reader& r, ParamStore<Real>& store, const std::string& file) {
  const auto count = r.get<std::uint32_t>();
  if (count != store.size()) throw ParseError(file + ": parameter count does not match the configuration");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const std::size_t idx = store.find(name);
    if (idx == ParamStore<Real>::npos) throw ParseError(file + ": unexpected parameter " + name);
    std::vector<Index> shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::int64_t>();
    auto& p = store[idx];
    if (shape != p.shape) throw ParseError(file + ": shape mismatch for " + name);
    r.bytes(p.value.data(), sizeof(Real) * static_cast<std::size_t>(p.value.size()));
  }
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t crc_of(const std::string& data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(n)));
}

}  // namespace

void save_checkpoint(const fs::path& file, const CurveGcn& model, const InteractiveGcn* interactive,
                     const json& metadata) {
  json header{{"model", model.config()},
              {"scalar", sizeof(Real) == 8 ? "f64" : "f32"},
              {"interactive", interactive != nullptr},
              {"metadata", metadata}};
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string h = header.dump();
  w.put<std::uint64_t>(h.size());
  w.bytes(h.data(), h.size());
  write_store(w, model.params());
  if (interactive) write_store(w, interactive->params());
  w.put<std::uint32_t>(crc_of(w.data(), w.data().size()));

  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("write failed for " + file.string());
}

Checkpoint load_checkpoint(const fs::path& file) {
  const std::string name = file.string();
  const std::string buf = read_file(file);
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0) throw ParseError(name + ": not a checkpoint");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (stored_crc != crc_of(buf, buf.size() - 4)) throw ParseError(name + ": checksum mismatch");

  Reader r(buf, buf.size() - 4, name);
  char magic[4];
  r.bytes(magic, 4);
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw ParseError(name + ": unsupported checkpoint version");
  std::string h(r.get<std::uint64_t>(), '\0');
  r.bytes(h.data(), h.size());
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw ParseError(name + ": bad header: " + e.what());
  }
  if (header.value("scalar", "") != (sizeof(Real) == 8 ? "f64" : "f32"))
    throw ParseError(name + ": scalar type differs from this build");

  const auto cfg = header.at("model").get<ModelConfig>();
  Checkpoint ck{CurveGcn(cfg, 0), std::nullopt, header.value("metadata", json::object())};
  read_store(r, ck.model.params(), name);
  if (header.value("interactive", false)) {
    ck.interactive.emplace(cfg, 0);
    read_store(r, ck.interactive->params(), name);
  }
  if (!r.done()) throw ParseError(name + ": trailing data");
  return ck;
}

std::string checkpoint_hash(const fs::path& file) {
  const std::string buf = read_file(file);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!EVP_Digest(buf.data(), buf.size(), md.data(), &len, EVP_sha256(), nullptr))
    throw Error("checkpoint_hash: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void copy_parameters(const ParamStore<Real>& from, ParamStore<Real>& to) {
  if (from.size() != to.size()) throw ShapeError("copy_parameters: stores differ");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].shape != to[i].shape)
      throw ShapeError("copy_parameters: parameter " + from[i].name + " differs");
    to[i].value = from[i].value;
  }
}

}  // namespace curvegcn
