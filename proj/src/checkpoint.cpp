#include "adareg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adareg/error.hpp"

namespace adareg::model {

namespace {

constexpr std::string_view kMagic{"ADAREGCK", 8};

class Writer {
 public:
  template <class T>
  void put(T v) {
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>) {
      bits = std::bit_cast<std::uint64_t>(v);
    } else {
      bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
  }
  void str32(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string str32(const char* what) { return bytes(get<std::uint32_t>(what), what); }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw ValidationError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<FactorRecord> factor_records(const ad::ParameterStore& params, std::span<const reg::RegFactor> factors) {
  std::vector<FactorRecord> out;
  out.reserve(factors.size());
  for (const auto& f : factors) out.push_back({params.name(f.theta), params.name(f.param), f.category});
  return out;
}

std::string encode(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(c.config.size()));
  w.raw(c.config);
  w.put(c.iteration);
  w.put(static_cast<std::uint64_t>(c.params.size()));
  for (ad::ParamId id = 0; id < c.params.size(); ++id) {
    const ad::Tensor& t = c.params.value(id);
    w.str32(c.params.name(id));
    w.put(static_cast<std::uint8_t>(c.params.role(id)));
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    for (double v : t.data()) w.put(v);
  }
  w.put(static_cast<std::uint64_t>(c.factors.size()));
  for (const auto& f : c.factors) {
    w.str32(f.theta);
    w.str32(f.param);
    w.put(static_cast<std::uint8_t>(f.category));
  }
  return w.take();
}

Checkpoint decode(std::string_view bytes) {
  Reader r(bytes);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size(), "magic") != kMagic) {
    throw ValidationError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  c.config = r.bytes(r.get<std::uint64_t>("config length"), "config");
  c.iteration = r.get<std::uint64_t>("iteration");
  const auto count = r.get<std::uint64_t>("array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str32("array name");
    const auto role = r.get<std::uint8_t>("role");
    if (role > static_cast<std::uint8_t>(ad::ParamRole::buffer)) {
      throw ValidationError("array '" + name + "' has unknown role " + std::to_string(role));
    }
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw ValidationError("array '" + name + "' has invalid rank " + std::to_string(rank));
    ad::Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("dimension");
      if (d == 0 || total > r.remaining() / d) throw ValidationError("array '" + name + "' has invalid shape");
      total *= d;
    }
    if (total * 8 > r.remaining()) {
      throw ValidationError("checkpoint truncated in array '" + name + "': needs " + std::to_string(total * 8) +
                            " bytes, " + std::to_string(r.remaining()) + " left");
    }
    std::vector<double> data(total);
    for (auto& v : data) v = r.get<double>("array data");
    c.params.add(std::move(name), ad::Tensor(std::move(shape), std::move(data)), static_cast<ad::ParamRole>(role));
  }
  const auto nf = r.get<std::uint64_t>("factor count");
  for (std::uint64_t i = 0; i < nf; ++i) {
    FactorRecord f;
    f.theta = r.str32("theta name");
    f.param = r.str32("param name");
    const auto cat = r.get<std::uint8_t>("category");
    if (cat >= reg::kCategories.size()) throw ValidationError("factor '" + f.theta + "' has unknown category");
    f.category = static_cast<reg::Category>(cat);
    if (!c.params.find(f.theta) || !c.params.find(f.param)) {
      throw ValidationError("factor '" + f.theta + "' refers to a missing array");
    }
    c.factors.push_back(std::move(f));
  }
  if (!r.done()) throw ValidationError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = encode(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return decode(bytes);
}

void restore_into(ad::ParameterStore& target, const ad::ParameterStore& source) {
  if (target.size() != source.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(source.size()) + " arrays, model has " +
                          std::to_string(target.size()));
  }
  for (ad::ParamId id = 0; id < target.size(); ++id) {
    const std::string& name = target.name(id);
    auto src = source.find(name);
    if (!src) throw ValidationError("checkpoint is missing array '" + name + "'");
    if (source.role(*src) != target.role(id)) throw ValidationError("array '" + name + "' has a different role");
    if (source.value(*src).shape() != target.value(id).shape()) {
      throw ValidationError("array '" + name + "' has shape " + ad::to_string(source.value(*src).shape()) +
                            " in the checkpoint, model expects " + ad::to_string(target.value(id).shape()));
    }
    target.value(id) = source.value(*src);
  }
}

}  // namespace adareg::model
