#include "omrd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace omrd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are not supported");

namespace {

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["model"] = cp.model;
  manifest["train"] = cp.train;
  manifest["extra"] = cp.extra;
  nlohmann::json tensors = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, entry] : cp.tensors) {  // std::map iterates in name order
    const auto& [shape, data] = entry;
    check(numel(shape) == static_cast<std::int64_t>(data.size()),
          "checkpoint: tensor " + name + " data does not match shape");
    const std::uint64_t nbytes = data.size() * sizeof(float);
    tensors[name] = {{"dtype", "f32"}, {"shape", shape}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  manifest["tensors"] = std::move(tensors);
  const std::string manifest_str = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u64(out, manifest_str.size());
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  for (const auto& [name, entry] : cp.tensors) {
    const auto& data = entry.second;
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("not an OMRD checkpoint: " + path);
  }
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t manifest_len = read_u64(in);
  std::string manifest_str(manifest_len, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw std::runtime_error("truncated checkpoint manifest: " + path);
  nlohmann::json manifest = nlohmann::json::parse(manifest_str);

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Checkpoint cp;
  cp.model = manifest.at("model");
  cp.train = manifest.at("train");
  cp.extra = manifest.value("extra", nlohmann::json::object());

  // manifest ranges must tile the payload exactly, in name order
  std::uint64_t expected_offset = 0;
  for (const auto& [name, meta] : manifest.at("tensors").items()) {
    check(meta.at("dtype").get<std::string>() == "f32", "checkpoint: unsupported dtype for " + name);
    const Shape shape = meta.at("shape").get<Shape>();
    const std::uint64_t offset = meta.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = meta.at("nbytes").get<std::uint64_t>();
    check(offset == expected_offset, "checkpoint: tensor " + name + " offset overlaps or leaves a gap");
    check(nbytes == static_cast<std::uint64_t>(numel(shape)) * sizeof(float),
          "checkpoint: tensor " + name + " byte count does not match shape");
    check(offset + nbytes <= payload.size(), "checkpoint: tensor " + name + " extends past payload");
    std::vector<float> data(static_cast<std::size_t>(numel(shape)));
    std::memcpy(data.data(), payload.data() + offset, nbytes);
    cp.tensors.emplace(name, std::make_pair(shape, std::move(data)));
    expected_offset = offset + nbytes;
  }
  check(expected_offset == payload.size(), "checkpoint: payload has trailing bytes not covered by manifest");
  return cp;
}

}  // namespace omrd
