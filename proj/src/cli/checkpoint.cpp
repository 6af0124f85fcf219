#include "rbp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rbp/error.hpp"

namespace rbp {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }

  template <typename T>
  void tensor(const Tensor<T>& t) {
    u8(std::is_same_v<T, float> ? 0 : 1);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (T v : t.data()) {
      if constexpr (std::is_same_v<T, float>) f32(v);
      else f64(v);
    }
  }

  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(in_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(in_[pos_++])} << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string fixed(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  Tensor<T> tensor() {
    const std::uint8_t dtype = u8();
    if (dtype != (std::is_same_v<T, float> ? 0 : 1)) fail("unexpected tensor dtype " + std::to_string(dtype));
    const std::uint32_t rank = u32();
    if (rank == 0) return Tensor<T>();  // unallocated optimizer slot
    if (rank > 8) fail("tensor rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u64();
      n *= d;
    }
    need(n * sizeof(T));
    std::vector<T> data(n);
    for (T& v : data) {
      if constexpr (std::is_same_v<T, float>) v = f32();
      else v = f64();
    }
    return Tensor<T>(shape, std::move(data));
  }

  bool done() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint: " + what + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail("truncated (needs " + std::to_string(n) + " more bytes)");
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);

  nlohmann::json extra = c.meta.extra;
  nlohmann::json steps = nlohmann::json::object();
  std::size_t tensors = 0;
  for (const auto& [name, p] : c.model.params()) {
    ++tensors;
    if (!p.first_moment.empty()) ++tensors;
    if (!p.second_moment.empty()) ++tensors;
    if (p.steps) steps[name] = p.steps;
  }
  extra["optimizer_steps"] = steps;

  w.u64(c.meta.config_hash);
  w.str(c.meta.phase);
  w.u64(c.meta.stage);
  w.u64(c.meta.epoch);
  w.u64(c.meta.seed);
  w.str(extra.dump());
  w.str(to_json(c.model.architecture()).dump());

  w.u64(tensors);
  for (const auto& [name, p] : c.model.params()) {
    w.str(name);
    w.tensor(p.value);
    if (!p.first_moment.empty()) {
      w.str(name + "@m");
      w.tensor(p.first_moment);
    }
    if (!p.second_moment.empty()) {
      w.str(name + "@v");
      w.tensor(p.second_moment);
    }
  }

  w.u64(c.gates.size());
  for (const GateState& g : c.gates) {
    w.str(g.layer_id);
    w.u8(static_cast<std::uint8_t>(g.status));
    w.f64(g.prior_variance);
    w.tensor(g.rates.value);
    w.tensor(g.rates.first_moment);
    w.tensor(g.rates.second_moment);
    w.u64(static_cast<std::uint64_t>(g.rates.steps));
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.fixed(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw DataError("checkpoint: bad magic (not an rbp checkpoint)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.meta.config_hash = r.u64();
  c.meta.phase = r.str();
  c.meta.stage = r.u64();
  c.meta.epoch = r.u64();
  c.meta.seed = r.u64();
  nlohmann::json steps;
  Architecture arch;
  try {
    c.meta.extra = nlohmann::json::parse(r.str());
    steps = c.meta.extra.value("optimizer_steps", nlohmann::json::object());
    c.meta.extra.erase("optimizer_steps");
    arch = architecture_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("malformed JSON section: ") + e.what());
  }

  ParamStore<float> params;
  const std::uint64_t tensors = r.u64();
  for (std::uint64_t i = 0; i < tensors; ++i) {
    const std::string name = r.str();
    Tensor<float> t = r.tensor<float>();
    const auto at = name.rfind('@');
    if (at == std::string::npos) {
      params.set(name, std::move(t));
      continue;
    }
    const std::string base = name.substr(0, at), slot = name.substr(at + 1);
    if (!params.contains(base)) r.fail("optimizer slot '" + name + "' precedes its parameter");
    Parameter<float>& p = params.at(base);
    if (slot == "m") p.first_moment = std::move(t);
    else if (slot == "v") p.second_moment = std::move(t);
    else r.fail("unknown optimizer slot '" + name + "'");
  }
  for (const auto& [name, n] : steps.items()) params.at(name).steps = n.get<std::int64_t>();

  const std::uint64_t gates = r.u64();
  for (std::uint64_t i = 0; i < gates; ++i) {
    GateState g;
    g.layer_id = r.str();
    const std::uint8_t status = r.u8();
    if (status > static_cast<std::uint8_t>(GateStatus::folded)) r.fail("unknown gate status");
    g.status = static_cast<GateStatus>(status);
    g.prior_variance = r.f64();
    g.rates.value = r.tensor<double>();
    g.rates.first_moment = r.tensor<double>();
    g.rates.second_moment = r.tensor<double>();
    g.rates.steps = static_cast<std::int64_t>(r.u64());
    c.gates.push_back(std::move(g));
  }
  if (!r.done()) r.fail("trailing bytes");
  try {
    c.model = Model<float>(std::move(arch), std::move(params));
  } catch (const Error& e) {
    throw DataError(std::string("checkpoint: parameters do not match the architecture: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("could not write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace rbp
