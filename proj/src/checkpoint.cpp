// Checkpoint file layout:
//   bytes 0..3   magic "HCUT"
//   bytes 4..7   u32 little-endian version (currently 1)
//   bytes 8..15  u64 little-endian header length
//   header       UTF-8 JSON: model/train configs, vocabulary, tensor manifest
//   payload      little-endian f64 arrays in manifest order
// Manifest offsets are relative to the payload start and are validated
// against the shapes implied by the model config and against the file size,
// so a truncated or edited file is rejected before any tensor is loaded.

#include <bit>
#include <cstring>
#include <fstream>

#include "hcut/config_json.hpp"
#include "hcut/trainkit.hpp"

namespace hcut {

namespace {

constexpr char kMagic[4] = {'H', 'C', 'U', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::string& buf, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[off + i])) << (8 * i);
  return v;
}

uint64_t read_u64(const std::string& buf, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[off + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<uint64_t>(d));
}

double read_f64(const std::string& buf, size_t off) {
  return std::bit_cast<double>(read_u64(buf, off));
}

}  // namespace

void save_checkpoint(const Model& model, const TrainConfig& cfg, const std::string& path) {
  const auto manifest = model.params.tensors();

  nlohmann::json header;
  header["model"] = to_json(model.config);
  header["train"] = to_json(cfg);
  header["vocab"] = model.vocab.id_to_token;
  nlohmann::json entries = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, ptr] : manifest) {
    entries.push_back({{"name", name},
                       {"rows", ptr->rows()},
                       {"cols", ptr->cols()},
                       {"offset", offset}});
    offset += ptr->size() * sizeof(double);
  }
  header["manifest"] = entries;
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, header_bytes.size());
  out += header_bytes;
  for (const auto& [name, ptr] : manifest)
    for (size_t i = 0; i < ptr->size(); ++i) put_f64(out, ptr->data()[i]);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("save_checkpoint: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 16) throw FormatError("load_checkpoint: file too short");
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError("load_checkpoint: bad magic");
  if (read_u32(buf, 4) != kVersion)
    throw FormatError("load_checkpoint: unsupported version");
  const uint64_t header_len = read_u64(buf, 8);
  if (16 + header_len > buf.size()) throw FormatError("load_checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: corrupt header: ") + e.what());
  }

  LoadedCheckpoint result;
  try {
    result.model.config = model_config_from_json(header.at("model"));
    result.train = train_config_from_json(header.at("train"));
    result.model.vocab.id_to_token = header.at("vocab").get<std::vector<std::string>>();
    result.model.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: corrupt header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("load_checkpoint: corrupt header: ") + e.what());
  }
  if (result.model.vocab.id_to_token.size() != result.model.config.vocab_size ||
      result.model.vocab.id_to_token.size() < 4)
    throw FormatError("load_checkpoint: vocabulary size disagrees with model config");
  result.model.vocab.token_to_id.clear();
  for (size_t i = 0; i < result.model.vocab.id_to_token.size(); ++i)
    result.model.vocab.token_to_id[result.model.vocab.id_to_token[i]] = i;

  result.model.params = EncoderParams::zeros(result.model.config);
  auto manifest = result.model.params.tensors();
  try {
    const auto& entries = header.at("manifest");
    if (!entries.is_array() || entries.size() != manifest.size())
      throw FormatError("load_checkpoint: manifest entry count disagrees with model config");

    const size_t payload_start = 16 + header_len;
    uint64_t expected_offset = 0;
    for (size_t i = 0; i < manifest.size(); ++i) {
      const auto& e = entries.at(i);
      const auto& [name, ptr] = manifest[i];
      if (e.at("name").get<std::string>() != name ||
          e.at("rows").get<size_t>() != ptr->rows() ||
          e.at("cols").get<size_t>() != ptr->cols())
        throw FormatError("load_checkpoint: manifest shape disagrees with model config at " +
                          name);
      if (e.at("offset").get<uint64_t>() != expected_offset)
        throw FormatError("load_checkpoint: bad manifest offset at " + name);
      const size_t bytes = ptr->size() * sizeof(double);
      if (payload_start + expected_offset + bytes > buf.size())
        throw FormatError("load_checkpoint: truncated payload at " + name);
      for (size_t j = 0; j < ptr->size(); ++j)
        ptr->data()[j] = read_f64(buf, payload_start + expected_offset + j * sizeof(double));
      expected_offset += bytes;
    }
    if (payload_start + expected_offset != buf.size())
      throw FormatError("load_checkpoint: trailing bytes after payload");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: corrupt manifest: ") + e.what());
  }
  return result;
}

}  // namespace hcut
