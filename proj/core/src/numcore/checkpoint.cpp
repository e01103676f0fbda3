#include "mal/numcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "mal/digest.hpp"
#include "mal/error.hpp"

namespace mal::numcore {
namespace {

constexpr char kMagic[8] = {'M', 'A', 'L', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_double(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

}  // namespace

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  std::string payload;
  payload.reserve(store.parameter_count() * 8);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& [name, e] : store.entries()) {
    tensors.push_back({{"name", name}, {"shape", e.value.shape()}, {"offset", payload.size()}, {"count", e.value.size()}});
    for (const double v : e.value.values()) put_double(payload, v);
  }
  nlohmann::ordered_json header;
  header["format"] = 1;
  header["payload_bytes"] = payload.size();
  header["payload_sha256"] = sha256_hex(payload);
  header["tensors"] = std::move(tensors);
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u64(out, header_text.size());
  out += header_text;
  out += payload;
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorKind::Io, "cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) fail(ErrorKind::Io, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorKind::Corruption, where + "missing checkpoint magic");
  }
  const std::uint64_t header_len = get_u64(raw + 8);
  if (header_len > bytes.size() - 16) fail(ErrorKind::Corruption, where + "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, where + "unreadable header: " + e.what());
  }
  const std::size_t payload_start = 16 + header_len;
  const std::string_view payload(bytes.data() + payload_start, bytes.size() - payload_start);
  ParamStore store;
  try {
    if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
      fail(ErrorKind::Corruption, where + "payload is " + std::to_string(payload.size()) + " bytes, header says " +
                                      std::to_string(header.at("payload_bytes").get<std::size_t>()));
    }
    if (sha256_hex(payload) != header.at("payload_sha256").get<std::string>()) {
      fail(ErrorKind::Corruption, where + "checksum mismatch");
    }
    for (const auto& t : header.at("tensors")) {
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      const auto shape = t.at("shape").get<Shape>();
      if (shape_size(shape) != count || offset + 8 * count > payload.size()) {
        fail(ErrorKind::Corruption, where + "tensor " + t.at("name").get<std::string>() + " out of bounds");
      }
      std::vector<double> values(count);
      const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
      for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_u64(p + 8 * i));
      store.add(t.at("name").get<std::string>(), Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, where + "malformed header: " + e.what());
  }
  return store;
}

void load_checkpoint_into(ParamStore& store, const std::filesystem::path& path) {
  ParamStore loaded = load_checkpoint(path);
  std::string offending;
  auto note = [&](const std::string& s) { offending += (offending.empty() ? "" : ", ") + s; };
  for (const auto& [name, e] : store.entries()) {
    if (!loaded.contains(name)) {
      note(name + " (missing)");
    } else if (loaded.value(name).shape() != e.value.shape()) {
      note(name + " " + shape_string(loaded.value(name).shape()) + " vs " + shape_string(e.value.shape()));
    }
  }
  for (const auto& [name, _] : loaded.entries()) {
    if (!store.contains(name)) note(name + " (unexpected)");
  }
  if (!offending.empty()) fail(ErrorKind::Shape, "checkpoint does not match architecture: " + offending);
  for (auto& [name, e] : store.entries()) e.value = std::move(loaded.value(name));
}

}  // namespace mal::numcore
