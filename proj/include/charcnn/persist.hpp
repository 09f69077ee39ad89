#pragma once

// Model file layout (all integers little-endian):
//
//   "CCNN"                 4-byte magic
//   version                u32, currently 1
//   metadata_length        u32
//   metadata               UTF-8 JSON: alphabet code points (index order,
//                          from index 2), label names (index order), model
//                          config, training seed, declared tensor shapes
//   tensors                float32, row-major, canonical tensor order
//
// Nothing may follow the last tensor.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "ensemble.hpp"
#include "error.hpp"
#include "model.hpp"

namespace charcnn {

inline constexpr char model_magic[4] = {'C', 'C', 'N', 'N'};
inline constexpr std::uint32_t model_format_version = 1;
inline constexpr std::size_t model_header_bytes = 12;
inline constexpr const char* vote_rule_id = "plurality>probability_sum>lowest_index";

struct LoadedModel {
  ModelParams<float> params;
  ModelConfig config;
  Alphabet alphabet;
  LabelSet labels;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// JSON mapping for the config types; field names match the struct members.

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json filters = nlohmann::json::array();
  for (const auto& f : c.filters) filters.push_back({f.width, f.count});
  return {{"alphabet_size", c.alphabet_size}, {"num_classes", c.num_classes}, {"max_len", c.max_len},
          {"embed_dim", c.embed_dim},         {"filter_spec", filters},         {"fc_dim", c.fc_dim},
          {"dropout_embed", c.dropout_embed}, {"dropout_fc", c.dropout_fc}};
}

/// Parses "1:50,2:50,3:100" into filter specs.
inline std::vector<FilterSpec> parse_filter_spec(const std::string& text) {
  std::vector<FilterSpec> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto colon = item.find_first_of(":*");
    if (colon == std::string::npos) throw ConfigError("filter entry '" + item + "' is not width:count");
    try {
      std::size_t p1 = 0, p2 = 0;
      const auto w = std::stoul(item.substr(0, colon), &p1);
      const auto rest = item.substr(colon + 1);
      const auto n = std::stoul(rest, &p2);
      if (p1 != colon || p2 != rest.size()) throw std::invalid_argument("trailing characters");
      out.push_back({w, n});
    } catch (const std::logic_error&) {
      throw ConfigError("filter entry '" + item + "' is not width:count");
    }
    if (out.back().width == 0 || out.back().count == 0)
      throw ConfigError("filter entry '" + item + "' needs width and count >= 1");
  }
  if (out.empty()) throw ConfigError("empty filter specification");
  return out;
}

inline std::string format_filter_spec(const std::vector<FilterSpec>& filters) {
  std::string s;
  for (const auto& f : filters) {
    if (!s.empty()) s += ',';
    s += std::to_string(f.width) + ":" + std::to_string(f.count);
  }
  return s;
}

/// Overlays the fields present in `j` onto `c`. filter_spec may be an array
/// of [width, count] pairs or a "w:n,w:n" string.
inline void merge_json(ModelConfig& c, const nlohmann::json& j) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("alphabet_size", c.alphabet_size);
  get("num_classes", c.num_classes);
  get("max_len", c.max_len);
  get("embed_dim", c.embed_dim);
  get("fc_dim", c.fc_dim);
  get("dropout_embed", c.dropout_embed);
  get("dropout_fc", c.dropout_fc);
  if (j.contains("filter_spec")) {
    const auto& fs = j.at("filter_spec");
    if (fs.is_string()) {
      c.filters = parse_filter_spec(fs.get<std::string>());
    } else {
      c.filters.clear();
      for (const auto& pair : fs) {
        if (!pair.is_array() || pair.size() != 2) throw ConfigError("filter_spec entries must be [width, count]");
        c.filters.push_back({pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
      }
    }
  }
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  merge_json(c, j);
  return c;
}

// ---------------------------------------------------------------------------
// Little-endian primitives

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot move model into place at '" + path.string() + "': " + ec.message());
  }
}

inline nlohmann::json alphabet_json(const Alphabet& a) {
  nlohmann::json arr = nlohmann::json::array();
  for (char32_t c : a.characters()) arr.push_back(static_cast<std::uint32_t>(c));
  return arr;
}

} // namespace detail

/// Encodes a model into the on-disk byte layout.
inline std::string serialize_model(const ModelParams<float>& params, const ModelConfig& cfg, const Alphabet& alphabet,
                                   const LabelSet& labels, std::uint64_t seed) {
  cfg.validate();
  if (!shapes_match(params, cfg)) throw ConfigError("parameter shapes do not match the model config");
  if (alphabet.size() != cfg.alphabet_size) throw ConfigError("alphabet size does not match the model config");
  if (labels.size() != cfg.num_classes) throw ConfigError("label count does not match the model config");

  nlohmann::json tensors = nlohmann::json::array();
  for_each_tensor(params, [&](const std::string& name, const Tensor<float>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape}});
  });
  const nlohmann::json meta = {{"alphabet", detail::alphabet_json(alphabet)},
                               {"labels", labels.names()},
                               {"model_config", to_json(cfg)},
                               {"seed", seed},
                               {"tensors", tensors}};
  const auto meta_text = meta.dump();

  std::string out(model_magic, 4);
  detail::put_u32(out, model_format_version);
  detail::put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  for_each_tensor(params, [&](const std::string&, const Tensor<float>& t) {
    for (float v : t.data) detail::put_f32(out, v);
  });
  return out;
}

inline LoadedModel deserialize_model(const std::string& bytes, const std::string& source = "<model>") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), model_magic, 4) != 0)
    throw ModelFormatError(source + ": not a model file");
  if (bytes.size() < model_header_bytes) throw ModelFormatError(source + ": truncated header");
  const auto version = detail::get_u32(p + 4);
  if (version != model_format_version)
    throw VersionError(source + ": unsupported model format version " + std::to_string(version) + " (expected " +
                       std::to_string(model_format_version) + ")");
  const auto meta_len = detail::get_u32(p + 8);
  if (bytes.size() - model_header_bytes < meta_len) throw ModelFormatError(source + ": truncated metadata block");

  LoadedModel m;
  std::vector<std::vector<std::size_t>> declared;
  std::vector<std::string> declared_names;
  try {
    const auto meta = nlohmann::json::parse(bytes.begin() + model_header_bytes,
                                            bytes.begin() + static_cast<std::ptrdiff_t>(model_header_bytes + meta_len));
    std::vector<char32_t> chars;
    for (const auto& c : meta.at("alphabet")) chars.push_back(static_cast<char32_t>(c.get<std::uint32_t>()));
    const auto n_chars = chars.size();
    m.alphabet = Alphabet(std::move(chars));
    if (m.alphabet.characters().size() != n_chars) throw ModelFormatError("alphabet has duplicate characters");
    const auto names = meta.at("labels").get<std::vector<std::string>>();
    m.labels = LabelSet(names);
    if (m.labels.names() != names) throw ModelFormatError("label list is not sorted and unique");
    m.config = model_config_from_json(meta.at("model_config"));
    m.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& t : meta.at("tensors")) {
      declared_names.push_back(t.at("name").get<std::string>());
      declared.push_back(t.at("shape").get<std::vector<std::size_t>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(source + ": malformed metadata: " + e.what());
  } catch (const ModelFormatError& e) {
    throw ModelFormatError(source + ": " + e.what());
  }
  try {
    m.config.validate();
  } catch (const ConfigError& e) {
    throw ModelFormatError(source + ": invalid model config: " + e.what());
  }
  if (m.alphabet.size() != m.config.alphabet_size || m.labels.size() != m.config.num_classes)
    throw ModelFormatError(source + ": alphabet or label count disagrees with the model config");

  m.params = ModelParams<float>::zeros(m.config);
  std::size_t ti = 0;
  bool shapes_ok = true;
  for_each_tensor(m.params, [&](const std::string& name, const Tensor<float>& t) {
    shapes_ok = shapes_ok && ti < declared.size() && declared[ti] == t.shape && declared_names[ti] == name;
    ++ti;
  });
  if (!shapes_ok || ti != declared.size())
    throw ModelFormatError(source + ": declared tensor shapes do not fit the model config");

  std::size_t offset = model_header_bytes + meta_len;
  for_each_tensor(m.params, [&](const std::string& name, Tensor<float>& t) {
    const auto need = t.size() * 4;
    if (bytes.size() - offset < need) throw ModelFormatError(source + ": truncated tensor '" + name + "'");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::get_f32(p + offset + 4 * i);
    offset += need;
  });
  if (offset != bytes.size())
    throw ModelFormatError(source + ": " + std::to_string(bytes.size() - offset) + " trailing bytes after tensors");
  return m;
}

inline void save_model(const ModelParams<float>& params, const ModelConfig& cfg, const Alphabet& alphabet,
                       const LabelSet& labels, const std::filesystem::path& path, std::uint64_t seed = 0) {
  detail::write_file_atomic(path, serialize_model(params, cfg, alphabet, labels, seed));
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  return deserialize_model(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Ensembles: a directory of member_NNN.ccnn files plus manifest.json.

/// FNV-1a over the alphabet code points and label names; identifies the
/// shared vocabulary of ensemble members.
inline std::string vocabulary_fingerprint(const Alphabet& alphabet, const LabelSet& labels) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (char32_t c : alphabet.characters())
    for (int i = 0; i < 4; ++i) feed(static_cast<unsigned char>((c >> (8 * i)) & 0xFF));
  feed(0xFF);
  for (const auto& name : labels.names()) {
    for (char ch : name) feed(static_cast<unsigned char>(ch));
    feed(0);
  }
  std::ostringstream os;
  os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string member_file_name(std::size_t index) {
  std::ostringstream os;
  os << "member_" << std::setw(3) << std::setfill('0') << index << ".ccnn";
  return os.str();
}

inline constexpr const char* manifest_file_name = "manifest.json";

inline void save_ensemble(const Ensemble& ens, const std::filesystem::path& dir) {
  ens.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    const auto& m = ens.members[i];
    save_model(m.params, m.config, ens.alphabet, ens.labels, dir / member_file_name(i), m.seed);
    files.push_back(member_file_name(i));
    seeds.push_back(m.seed);
  }
  const nlohmann::json manifest = {{"format", "charcnn-ensemble"},
                                   {"version", model_format_version},
                                   {"members", files},
                                   {"member_seeds", seeds},
                                   {"vocabulary_fingerprint", vocabulary_fingerprint(ens.alphabet, ens.labels)},
                                   {"vote_rule", vote_rule_id}};
  detail::write_file_atomic(dir / manifest_file_name, manifest.dump(2) + "\n");
}

inline Ensemble load_ensemble(const std::filesystem::path& dir) {
  const auto manifest_path = dir / manifest_file_name;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  try {
    if (manifest.at("format") != "charcnn-ensemble") throw ModelFormatError("not an ensemble manifest");
    if (manifest.at("version").get<std::uint32_t>() != model_format_version)
      throw VersionError("unsupported ensemble manifest version");
    if (manifest.at("vote_rule") != vote_rule_id) throw ModelFormatError("unknown vote rule");
    const auto fingerprint = manifest.at("vocabulary_fingerprint").get<std::string>();
    Ensemble ens;
    bool first = true;
    for (const auto& name : manifest.at("members")) {
      auto m = load_model(dir / name.get<std::string>());
      if (vocabulary_fingerprint(m.alphabet, m.labels) != fingerprint)
        throw ModelFormatError("member " + name.get<std::string>() + " does not match the manifest vocabulary");
      if (first) {
        ens.alphabet = m.alphabet;
        ens.labels = m.labels;
        first = false;
      }
      ens.members.push_back({std::move(m.params), m.config, m.seed, {}});
    }
    ens.validate();
    return ens;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ModelFormatError(manifest_path.string() + ": " + e.what());
  }
}

} // namespace charcnn
