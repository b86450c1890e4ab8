#include "cgforge/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "cgforge/error.hpp"

namespace cgforge {

static_assert(std::endian::native == std::endian::little,
              "model containers are written in host order and assume little-endian");

namespace {

constexpr char kMagic[8] = {'C', 'G', 'F', 'O', 'R', 'G', 'E', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("truncated model container");
  return v;
}

}  // namespace

void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  nlohmann::json header = c.header;
  header["kind"] = c.kind;
  const std::string text = header.dump();
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, c.tensors.size());
  for (const auto& t : c.tensors) {
    put<std::uint64_t>(out, t.size());
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw Error("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(path.string() + " is not a model container");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion)
    throw MismatchError(path.string() + ": unsupported container version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated model container header");
  Container c;
  c.header = nlohmann::json::parse(text);
  c.kind = c.header.value("kind", "");
  if (c.kind != expected_kind)
    throw MismatchError(path.string() + " holds a '" + c.kind + "' model, expected '" +
                        expected_kind + "'");
  const auto count = get<std::uint64_t>(in);
  c.tensors.resize(count);
  for (auto& t : c.tensors) {
    const auto n = get<std::uint64_t>(in);
    t.resize(n);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw DataError("truncated model tensor");
  }
  return c;
}

}  // namespace cgforge
