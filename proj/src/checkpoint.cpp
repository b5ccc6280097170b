#include "esppct/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "esppct/error.hpp"

namespace esppct {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

struct Header {
  nlohmann::json json;
  std::size_t payload_start = 0;
};

Header read_header(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw DataError(source + ": not a checkpoint (bad magic)");
  }
  const auto len = static_cast<std::size_t>(get_le(bytes, 8, 4));
  if (bytes.size() < 12 + len) throw DataError(source + ": truncated checkpoint header");
  Header h;
  try {
    h.json = nlohmann::json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": bad checkpoint header: " + e.what());
  }
  h.payload_start = 12 + len;
  return h;
}

}  // namespace

std::string encode_checkpoint(const ParamStore& params, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "ESPPCT01";
  auto entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor2& v = params.value(i);
    entries.push_back({{"name", params.name(i)}, {"shape", {v.rows, v.cols}}, {"offset", offset}});
    offset += v.size();
  }
  header["params"] = std::move(entries);
  header["scalars"] = offset;
  if (!meta.is_null()) header["meta"] = meta;

  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + 8 * offset);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double d : params.value(i).data) put_f64(out, d);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  const Header h = read_header(bytes, source);
  Checkpoint ck;
  std::size_t scalars = 0;
  try {
    for (const auto& e : h.json.at("params")) {
      const auto rows = e.at("shape").at(0).get<std::size_t>();
      const auto cols = e.at("shape").at(1).get<std::size_t>();
      const auto offset = e.at("offset").get<std::size_t>();
      const std::size_t at = h.payload_start + 8 * offset;
      if (at + 8 * rows * cols > bytes.size()) throw DataError(source + ": truncated payload");
      Tensor2 t(rows, cols);
      for (std::size_t k = 0; k < t.data.size(); ++k) {
        t.data[k] = std::bit_cast<double>(get_le(bytes, at + 8 * k, 8));
      }
      scalars += t.data.size();
      ck.params.add(e.at("name").get<std::string>(), std::move(t));
    }
    if (bytes.size() != h.payload_start + 8 * scalars) {
      throw DataError(source + ": payload length does not match the header");
    }
    if (h.json.contains("meta")) ck.meta = h.json.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": bad checkpoint header: " + e.what());
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                      const nlohmann::json& meta) {
  const std::string bytes = encode_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

std::size_t checkpoint_scalar_count(const std::string& bytes) {
  const Header h = read_header(bytes, "<memory>");
  return (bytes.size() - h.payload_start) / 8;
}

}  // namespace esppct
