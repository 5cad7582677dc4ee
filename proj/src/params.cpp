#include "dsm/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace dsm {

namespace {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  return n;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  bool eof() const { return pos >= n; }

  void need(std::size_t k, const char* what) {
    if (pos + k > n) throw FormatError(std::string("checkpoint truncated in ") + what, pos);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[pos + i]) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
};

constexpr char kMagic[] = "DSMCKPT1";

}  // namespace

Tensor& ParamSet::add(const std::string& name, const std::vector<int>& shape) {
  if (find(name)) throw ArgumentError("ParamSet: duplicate tensor name " + name);
  for (int d : shape)
    if (d <= 0) throw ArgumentError("ParamSet: nonpositive dim in " + name);
  auto t = std::make_unique<Tensor>();
  t->name = name;
  t->shape = shape;
  t->value.assign(shape_size(shape), 0.0);
  t->grad.assign(t->value.size(), 0.0);
  tensors_.push_back(std::move(t));
  return *tensors_.back();
}

Tensor* ParamSet::find(const std::string& name) {
  for (auto& t : tensors_)
    if (t->name == name) return t.get();
  return nullptr;
}

const Tensor* ParamSet::find(const std::string& name) const {
  for (auto& t : tensors_)
    if (t->name == name) return t.get();
  return nullptr;
}

Tensor& ParamSet::require(const std::string& name) {
  Tensor* t = find(name);
  if (!t) throw ArgumentError("ParamSet: missing tensor " + name);
  return *t;
}

const Tensor& ParamSet::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw ArgumentError("ParamSet: missing tensor " + name);
  return *t;
}

void ParamSet::zero_grad() {
  for (auto& t : tensors_) t->zero_grad();
}

bool ParamSet::values_finite() const {
  for (auto& t : tensors_)
    for (double v : t->value)
      if (!std::isfinite(v)) return false;
  return true;
}

bool ParamSet::grads_finite() const {
  for (auto& t : tensors_)
    for (double g : t->grad)
      if (!std::isfinite(g)) return false;
  return true;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (auto& t : tensors_) out.tensors_.push_back(std::make_unique<Tensor>(*t));
  return out;
}

void fill_he_uniform(Tensor& t, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ArgumentError("fill_he_uniform: fan_in must be positive");
  const double limit = std::sqrt(6.0 / fan_in);
  for (double& v : t.value) v = rng.uniform(-limit, limit);
}

void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 8);
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    const Tensor& t = params.tensor(i);
    put_u32(buf, std::uint32_t(t.name.size()));
    buf.append(t.name);
    put_u32(buf, std::uint32_t(t.shape.size()));
    for (int d : t.shape) put_u32(buf, std::uint32_t(d));
    for (double v : t.value) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw ArgumentError("short write to checkpoint: " + path);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};
  r.need(8, "magic");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("bad checkpoint magic", 0);
  r.pos = 8;

  ParamSet ps;
  while (!r.eof()) {
    const std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "name");
    std::string name(bytes.data() + r.pos, name_len);
    r.pos += name_len;
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("bad tensor rank", r.pos - 4);
    std::vector<int> shape(rank);
    for (auto& d : shape) {
      d = int(r.u32("dims"));
      if (d <= 0) throw FormatError("bad tensor dim", r.pos - 4);
    }
    Tensor& t = ps.add(name, shape);
    for (auto& v : t.value) v = r.f64("values");
  }
  return ps;
}

}  // namespace dsm
