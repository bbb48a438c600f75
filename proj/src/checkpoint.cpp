#include "translico/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "translico/errors.hpp"

namespace translico {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr const char* kMetadataKey = "__metadata__";

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors, const json& metadata) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (name == kMetadataKey) throw FormatError("reserved tensor name " + name);
    if (header.contains(name)) throw FormatError("duplicate tensor name " + name);
    header[name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}};
    offset += t.numel() * sizeof(float);
  }
  if (!metadata.empty()) header[kMetadataKey] = metadata;
  const std::string text = header.dump();
  const auto header_len = static_cast<std::uint64_t>(text.size());

  // Write to a sibling temp file so an interrupted save never clobbers the
  // previous checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
      out.write(reinterpret_cast<const char*>(t.values().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || header_len > (1ULL << 30)) throw FormatError(path.string() + ": bad checkpoint header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError(path.string() + ": truncated checkpoint header");
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": checkpoint header is not JSON: " + e.what());
  }
  struct Entry {
    std::uint64_t offset;
    std::string name;
    Shape shape;
  };
  std::vector<Entry> entries;
  try {
    for (const auto& [name, spec] : header.items()) {
      if (name == kMetadataKey) {
        ckpt.metadata = spec;
        continue;
      }
      if (spec.at("dtype").get<std::string>() != "f32") throw FormatError(path.string() + ": unsupported dtype for " + name);
      entries.push_back({spec.at("offset").get<std::uint64_t>(), name, spec.at("shape").get<Shape>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
  for (auto& e : entries) {
    const auto n = shape_numel(e.shape);
    if (e.offset + n * sizeof(float) > payload.size()) throw FormatError(path.string() + ": payload too short for " + e.name);
    std::vector<float> values(n);
    std::memcpy(values.data(), payload.data() + e.offset, n * sizeof(float));
    ckpt.tensors.emplace_back(e.name, Tensor<float>::from(std::move(e.shape), std::move(values)));
  }
  return ckpt;
}

}  // namespace translico
