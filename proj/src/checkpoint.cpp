#include "vagnmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "vagnmt/error.hpp"

namespace vagnmt {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are read and written with native little-endian layout");

namespace {

template <typename U>
void put(std::ofstream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::ifstream& in, const std::filesystem::path& path) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError("truncated checkpoint " + path.string());
  }
  return v;
}

struct RawTensor {
  ad::Shape shape;
  std::vector<float> values;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  auto meta = checkpoint.meta;
  meta["dims"] = checkpoint.params.dims;
  const auto named = named_parameters(checkpoint.params);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto data = tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  const std::string trailer = meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(trailer.size()));
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, path);
  std::map<std::string, RawTensor> raw;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint16_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("truncated checkpoint " + path.string());
    const auto rank = get<std::uint8_t>(in, path);
    RawTensor t;
    std::size_t size = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.shape.push_back(get<std::uint32_t>(in, path));
      size *= t.shape.back();
    }
    t.values.resize(size);
    if (!in.read(reinterpret_cast<char*>(t.values.data()),
                 static_cast<std::streamsize>(size * sizeof(float)))) {
      throw FormatError("truncated tensor '" + name + "' in " + path.string());
    }
    if (!raw.emplace(name, std::move(t)).second) {
      throw FormatError("duplicate tensor '" + name + "' in " + path.string());
    }
  }
  const auto trailer_len = get<std::uint32_t>(in, path);
  std::string trailer(trailer_len, '\0');
  if (!in.read(trailer.data(), trailer_len)) throw FormatError("truncated trailer in " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after checkpoint trailer in " + path.string());
  }

  Checkpoint out;
  try {
    out.meta = nlohmann::json::parse(trailer);
    const auto dims = out.meta.at("dims").get<ModelDims>();
    Rng rng(0);
    out.params = init_params<float>(dims, rng);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint trailer in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("bad checkpoint dimensions in " + path.string() + ": " + e.what());
  }
  for (auto& [name, tensor] : named_parameters(out.params)) {
    const auto it = raw.find(name);
    if (it == raw.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape != tensor.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + ad::shape_string(it->second.shape) +
                        ", expected " + ad::shape_string(tensor.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), tensor.mutable_data().begin());
    raw.erase(it);
  }
  if (!raw.empty()) throw FormatError("checkpoint holds unknown tensor '" + raw.begin()->first + "'");
  return out;
}

}  // namespace vagnmt
