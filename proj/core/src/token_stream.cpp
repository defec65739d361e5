#include "longctx/token_stream.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <string>

#include "longctx/error.hpp"
#include "text_format.hpp"

namespace longctx {

namespace {

constexpr std::array<char, 4> kMagic = {'T', 'O', 'K', 'S'};

template <typename T>
void put(std::ostream& out, T v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
bool get(std::istream& in, T& v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return true;
}

}  // namespace

std::vector<std::uint32_t> read_token_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open token stream " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError(path.string() + " is not a token stream (bad magic)");
  }
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  if (!get(in, version) || !get(in, count)) {
    throw DataError(path.string() + ": truncated token stream header");
  }
  if (version != kTokenStreamVersion) {
    throw DataError(path.string() + ": unsupported token stream version " +
                    std::to_string(version));
  }
  const auto header = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  if (size - header != count * 4) {
    throw DataError(path.string() + ": header declares " + std::to_string(count) +
                    " ids (" + std::to_string(count * 4) + " bytes) but " +
                    std::to_string(size - header) + " bytes follow");
  }
  in.seekg(static_cast<std::streamoff>(header));
  std::vector<std::uint32_t> tokens(count);
  for (auto& t : tokens) get(in, t);
  return tokens;
}

void write_token_stream(const std::filesystem::path& path,
                        std::span<const std::uint32_t> tokens) {
  auto out = detail::open_for_write(path);
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kTokenStreamVersion);
  put<std::uint64_t>(out, tokens.size());
  for (auto t : tokens) put(out, t);
  if (!out) throw DataError("failed writing " + path.string());
}

std::uint64_t token_hash(std::span<const std::uint32_t> tokens) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto t : tokens) {
    for (int i = 0; i < 4; ++i) {
      h ^= (t >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace longctx
