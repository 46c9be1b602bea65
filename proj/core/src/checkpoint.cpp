#include "drivesim/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace drivesim::ckpt {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'I', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint: truncated file");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

// Manifest plus payload; everything the trailing hash covers.
std::string serialize_body(const policy::ParamStore& store) {
  std::string body;
  put<std::uint32_t>(body, static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& e : store.entries()) {
    put<std::uint32_t>(body, static_cast<std::uint32_t>(e.name.size()));
    body.append(e.name);
    put<std::uint32_t>(body, static_cast<std::uint32_t>(e.value.rank()));
    for (int d : e.value.shape()) put<std::int32_t>(body, d);
    for (double v : e.value.vec()) put<double>(body, v);
  }
  return body;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

policy::ParamStore parse(const std::string& text) {
  if (text.size() < sizeof(kMagic) + sizeof(std::uint32_t) ||
      std::memcmp(text.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(text, pos);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  if (text.size() < pos + sizeof(std::uint64_t))
    throw std::runtime_error("checkpoint: truncated file");
  const std::size_t body_end = text.size() - sizeof(std::uint64_t);
  const std::uint64_t stored = [&] {
    std::size_t p = body_end;
    return take<std::uint64_t>(text, p);
  }();
  if (fnv1a(text.data() + pos, body_end - pos) != stored)
    throw std::runtime_error("checkpoint: hash mismatch (corrupted file)");

  policy::ParamStore store;
  const auto n = take<std::uint32_t>(text, pos);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = take<std::uint32_t>(text, pos);
    if (pos + name_len > body_end) throw std::runtime_error("checkpoint: truncated file");
    std::string name(text.data() + pos, name_len);
    pos += name_len;
    const auto rank = take<std::uint32_t>(text, pos);
    std::vector<int> shape;
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = take<std::int32_t>(text, pos);
      if (dim < 0) throw std::runtime_error("checkpoint: negative dimension");
      shape.push_back(dim);
      count *= static_cast<std::size_t>(dim);
    }
    std::vector<double> data(count);
    for (auto& v : data) v = take<double>(text, pos);
    store.add(name, ad::Tensor(std::move(shape), std::move(data)));
  }
  if (pos != body_end) throw std::runtime_error("checkpoint: trailing bytes");
  return store;
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t param_hash(const policy::ParamStore& store) {
  const std::string body = serialize_body(store);
  return fnv1a(body.data(), body.size());
}

void save_params(const policy::ParamStore& store, const std::string& path) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string body = serialize_body(store);
  out += body;
  put<std::uint64_t>(out, fnv1a(body.data(), body.size()));
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("checkpoint: cannot write " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("checkpoint: write failed for " + path);
}

policy::ParamStore read_params(const std::string& path) { return parse(read_file(path)); }

void load_params(policy::ParamStore& store, const std::string& path) {
  policy::ParamStore fresh = parse(read_file(path));
  if (fresh.entries().size() != store.entries().size())
    throw std::runtime_error("checkpoint: entry count mismatch");
  for (std::size_t i = 0; i < store.entries().size(); ++i) {
    auto& dst = store.entries()[i];
    const auto& src = fresh.entries()[i];
    if (dst.name != src.name)
      throw std::runtime_error("checkpoint: entry name mismatch at " + dst.name);
    if (!dst.value.same_shape(src.value))
      throw std::runtime_error("checkpoint: shape mismatch at " + dst.name);
    dst.value.vec() = src.value.vec();
  }
}

}  // namespace drivesim::ckpt
