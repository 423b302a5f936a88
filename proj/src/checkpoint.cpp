#include "airl/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"

#include "airl/dataset.hpp"

namespace airl {

namespace {

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <class U>
U get_le(std::string_view bytes, std::size_t pos) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return value;
}

std::uint64_t checksum(std::string_view payload) {
  return fnv1a64(std::as_bytes(std::span(payload.data(), payload.size())));
}

}  // namespace

std::string encode_checkpoint(const ModelParams& params) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.layout().tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string header =
      nlohmann::json{{"role", role_name(params.role())},
                     {"arch", params.arch()},
                     {"tensors", tensors}}
          .dump();
  std::string payload;
  payload.reserve(params.size() * 4);
  for (float v : params.values()) put_le(payload, std::bit_cast<std::uint32_t>(v));

  std::string out(kCheckpointMagic);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(header.size()));
  out += header;
  out += payload;
  put_le(out, checksum(payload));
  return out;
}

ModelParams decode_checkpoint(std::string_view bytes) {
  const std::size_t fixed = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < fixed || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error("checkpoint", "not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes, kCheckpointMagic.size());
  if (version != kCheckpointVersion) {
    throw Error("checkpoint", "unsupported checkpoint version " + std::to_string(version) +
                                  " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes, kCheckpointMagic.size() + 4);
  if (header_len > bytes.size() - fixed) {
    throw Error("checksum", "checkpoint truncated inside header");
  }
  nlohmann::json header;
  Role role;
  ArchConfig arch;
  try {
    header = nlohmann::json::parse(bytes.substr(fixed, header_len));
    role = role_from_name(header.at("role").get<std::string>());
    arch = header.at("arch").get<ArchConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint", std::string("malformed checkpoint header: ") + e.what());
  }
  ModelParams params(role, arch);
  const auto& specs = params.layout().tensors;
  const auto& listed = header.at("tensors");
  if (listed.size() != specs.size()) {
    throw Error("checkpoint", "checkpoint tensor list does not match the architecture");
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (listed[i].at("name") != specs[i].name ||
        listed[i].at("shape").get<std::vector<int>>() != specs[i].shape) {
      throw Error("checkpoint", "checkpoint tensor '" + specs[i].name + "' mismatch");
    }
  }
  const std::size_t payload_len = params.size() * 4;
  const std::size_t begin = fixed + header_len;
  if (bytes.size() != begin + payload_len + 8) {
    throw Error("checksum", "checkpoint size mismatch (truncated or trailing data)");
  }
  const std::string_view payload = bytes.substr(begin, payload_len);
  if (checksum(payload) != get_le<std::uint64_t>(bytes, begin + payload_len)) {
    throw Error("checksum", "checkpoint checksum mismatch");
  }
  auto values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload, 4 * i));
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace airl
