#include "ncm/checkpoint.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ncm {

namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

constexpr std::size_t kPrefixSize = 8 + 4 + 8;
constexpr std::size_t kCrcSize = 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32_z(0L, Z_NULL, 0);
  crc = crc32_z(crc, reinterpret_cast<const Bytef*>(bytes.data()), bytes.size());
  return static_cast<std::uint32_t>(crc);
}

json config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},         {"embedding_size", c.embedding_size},
          {"hidden_size", c.hidden_size},       {"num_layers", c.num_layers},
          {"projection_size", c.projection_size}, {"seed", c.seed},
          {"reverse_input", c.reverse_input}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embedding_size = j.at("embedding_size").get<std::size_t>();
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.projection_size = j.at("projection_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.reverse_input = j.at("reverse_input").get<bool>();
  return c;
}

json schedule_to_json(const TrainSchedule& s) {
  return {{"optimizer", to_string(s.optimizer)}, {"learning_rate", s.learning_rate},
          {"clip_threshold", s.clip_threshold},  {"epochs", s.epochs},
          {"batch_size", s.batch_size},          {"shuffle_seed", s.shuffle_seed},
          {"lr_halving", s.lr_halving},          {"patience", s.patience}};
}

TrainSchedule schedule_from_json(const json& j) {
  TrainSchedule s;
  s.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  s.learning_rate = j.at("learning_rate").get<double>();
  s.clip_threshold = j.at("clip_threshold").get<double>();
  s.epochs = j.at("epochs").get<std::size_t>();
  s.batch_size = j.at("batch_size").get<std::size_t>();
  s.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  s.lr_halving = j.at("lr_halving").get<bool>();
  s.patience = j.at("patience").get<std::size_t>();
  return s;
}

// Named tensors in file order: model tensors, then optimizer accumulators.
std::vector<std::pair<std::string, const Matrix<float>*>> directory(const Checkpoint& ck) {
  std::vector<std::pair<std::string, const Matrix<float>*>> out;
  ck.params.for_each([&](const std::string& name, const Matrix<float>& m) { out.emplace_back(name, &m); });
  if (ck.optimizer)
    ck.optimizer->accumulators.for_each(
        [&](const std::string& name, const Matrix<float>& m) { out.emplace_back("adagrad/" + name, &m); });
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  ck.config.validate();
  if (!ck.params.matches(ck.config))
    throw CheckpointError(Kind::kInconsistent, "checkpoint: params do not match config");
  if (ck.vocab.size() != ck.config.vocab_size)
    throw CheckpointError(Kind::kInconsistent,
                          "checkpoint: vocabulary has " + std::to_string(ck.vocab.size()) +
                              " entries, config says " + std::to_string(ck.config.vocab_size));
  if (ck.optimizer && !ck.optimizer->accumulators.matches(ck.config))
    throw CheckpointError(Kind::kInconsistent, "checkpoint: optimizer state does not match config");

  json tensors = json::array();
  std::uint64_t offset = 0;
  const auto dir = directory(ck);
  for (const auto& [name, m] : dir) {
    tensors.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}, {"offset", offset}});
    offset += m->size() * sizeof(float);
  }
  json header = {{"config", config_to_json(ck.config)},
                 {"vocab", ck.vocab.tokens()},
                 {"tensors", tensors},
                 {"optimizer", ck.optimizer.has_value()}};
  if (ck.optimizer) header["adagrad_epsilon"] = static_cast<double>(ck.optimizer->epsilon);
  if (ck.schedule) header["schedule"] = schedule_to_json(*ck.schedule);
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(kPrefixSize + header_text.size() + offset + kCrcSize);
  out.append(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (const auto& [name, m] : dir)
    for (float x : m->values()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  put_u32(out, crc32_of(out));
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw CheckpointError(Kind::kUnrecognizedFormat, "checkpoint: unrecognized format (bad magic)");
  if (bytes.size() < kPrefixSize + kCrcSize)
    throw CheckpointError(Kind::kCorrupt, "checkpoint: truncated file (" + std::to_string(bytes.size()) + " bytes)");
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::kVersionMismatch,
                          "checkpoint: format version " + std::to_string(version) + " found, " +
                              std::to_string(kCheckpointVersion) + " expected");
  const std::uint64_t header_len = get_u64(bytes, 12);
  if (header_len > bytes.size() - kPrefixSize - kCrcSize)
    throw CheckpointError(Kind::kCorrupt, "checkpoint: header length exceeds file size");
  const std::uint32_t stored_crc = get_u32(bytes, bytes.size() - kCrcSize);
  if (crc32_of(bytes.substr(0, bytes.size() - kCrcSize)) != stored_crc)
    throw CheckpointError(Kind::kCorrupt, "checkpoint: CRC mismatch");

  json header;
  try {
    header = json::parse(bytes.substr(kPrefixSize, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: unparsable header: ") + e.what());
  }

  Checkpoint ck;
  json dir;
  try {
    ck.config = config_from_json(header.at("config"));
    if (header.contains("schedule")) ck.schedule = schedule_from_json(header.at("schedule"));
    auto tokens = header.at("vocab").get<std::vector<std::string>>();
    ck.vocab = Vocabulary::from_tokens(std::move(tokens));
    dir = header.at("tensors");
    if (header.at("optimizer").get<bool>()) {
      ck.optimizer = AdagradState<float>{};
      ck.optimizer->epsilon = static_cast<float>(header.at("adagrad_epsilon").get<double>());
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: malformed header: ") + e.what());
  } catch (const Error& e) {
    throw CheckpointError(Kind::kInconsistent, std::string("checkpoint: ") + e.what());
  }

  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kInconsistent, std::string("checkpoint: ") + e.what());
  }
  if (ck.vocab.size() != ck.config.vocab_size)
    throw CheckpointError(Kind::kInconsistent,
                          "checkpoint: header says V=" + std::to_string(ck.config.vocab_size) +
                              " but vocabulary has " + std::to_string(ck.vocab.size()) + " entries");

  ck.params = Params<float>::zeros(ck.config);
  if (ck.optimizer) ck.optimizer->accumulators = Params<float>::zeros(ck.config);

  std::vector<std::pair<std::string, Matrix<float>*>> expected;
  ck.params.for_each([&](const std::string& name, Matrix<float>& m) { expected.emplace_back(name, &m); });
  if (ck.optimizer)
    ck.optimizer->accumulators.for_each(
        [&](const std::string& name, Matrix<float>& m) { expected.emplace_back("adagrad/" + name, &m); });

  if (!dir.is_array() || dir.size() != expected.size())
    throw CheckpointError(Kind::kInconsistent, "checkpoint: tensor directory does not match config");

  const std::string_view payload =
      bytes.substr(kPrefixSize + header_len, bytes.size() - kPrefixSize - header_len - kCrcSize);
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    auto& [name, m] = expected[i];
    std::string dname;
    std::size_t rows = 0, cols = 0;
    std::uint64_t doff = 0;
    try {
      dname = dir[i].at("name").get<std::string>();
      rows = dir[i].at("rows").get<std::size_t>();
      cols = dir[i].at("cols").get<std::size_t>();
      doff = dir[i].at("offset").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw CheckpointError(Kind::kCorrupt, std::string("checkpoint: malformed directory: ") + e.what());
    }
    if (dname != name || rows != m->rows() || cols != m->cols() || doff != offset)
      throw CheckpointError(Kind::kInconsistent,
                            "checkpoint: directory entry " + std::to_string(i) + " ('" + dname + "' [" +
                                std::to_string(rows) + "x" + std::to_string(cols) + "]) expected '" +
                                name + "' " + m->shape_string());
    if (offset + m->size() * sizeof(float) > payload.size())
      throw CheckpointError(Kind::kCorrupt, "checkpoint: payload shorter than directory");
    for (float& x : m->values()) {
      x = std::bit_cast<float>(get_u32(payload, offset));
      offset += sizeof(float);
    }
  }
  if (offset != payload.size())
    throw CheckpointError(Kind::kCorrupt, "checkpoint: payload has trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::kIo, "checkpoint: cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw CheckpointError(Kind::kIo, "checkpoint: write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw CheckpointError(Kind::kIo, "checkpoint: cannot move into place at " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "checkpoint: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace ncm
