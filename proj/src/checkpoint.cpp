#include "mllm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "mllm/errors.hpp"

namespace mllm {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

uint32_t get_u32(std::istream& is, const std::string& field) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError("truncated checkpoint while reading " + field);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is, const std::string& field) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError("truncated checkpoint while reading " + field);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is, const std::string& field) {
  uint64_t bits = get_u64(is, field);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const CheckpointMap& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  for (const auto& [name, rec] : records) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(rec.shape.size()));
    size_t n = 1;
    for (size_t d : rec.shape) {
      put_u64(os, d);
      n *= d;
    }
    if (n != rec.values.size())
      throw IoError("checkpoint record '" + name + "': " +
                    std::to_string(rec.values.size()) + " values for shape " +
                    shape_str(rec.shape));
    for (double v : rec.values) put_f64(os, v);
  }
  if (!os) throw IoError("short write to checkpoint " + path.string());
}

CheckpointMap read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint " + path.string() + ": bad magic bytes");
  const uint32_t version = get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + path.string() + ": version " +
                  std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  CheckpointMap records;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const uint32_t name_len = get_u32(is, "record name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw IoError("truncated checkpoint while reading record name");
    const uint32_t rank = get_u32(is, "rank of '" + name + "'");
    CheckpointRecord rec;
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint64_t d = get_u64(is, "dims of '" + name + "'");
      rec.shape.push_back(static_cast<size_t>(d));
      n *= static_cast<size_t>(d);
    }
    rec.values.resize(n);
    for (size_t i = 0; i < n; ++i)
      rec.values[i] = get_f64(is, "payload of '" + name + "'");
    records.emplace(std::move(name), std::move(rec));
  }
  return records;
}

namespace {

CheckpointRecord scalar_rec(double v) { return {{1}, {v}}; }

double need_scalar(const CheckpointMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end())
    throw IoError("checkpoint missing record '" + name + "'");
  if (it->second.values.size() != 1)
    throw IoError("checkpoint record '" + name + "' is not scalar");
  return it->second.values[0];
}

const CheckpointRecord& need_rec(const CheckpointMap& m,
                                 const std::string& name) {
  auto it = m.find(name);
  if (it == m.end())
    throw IoError("checkpoint missing record '" + name + "'");
  return it->second;
}

}  // namespace

void save_model_checkpoint(const std::filesystem::path& path,
                           const TrainerSnapshot& snapshot) {
  CheckpointMap records;
  const ModelConfig& cfg = snapshot.model.config;
  const uint64_t hash = snapshot.model.config_hash();
  records["meta.config_hash"] = {
      {2},
      {static_cast<double>(hash >> 32), static_cast<double>(hash & 0xFFFFFFFFu)}};
  records["meta.embedding"] = scalar_rec(static_cast<double>(cfg.embedding));
  records["meta.hidden"] = scalar_rec(static_cast<double>(cfg.hidden));
  CheckpointRecord pat{{3}, {}};
  for (auto scope : cfg.pattern)
    pat.values.push_back(scope == LayerScope::kShared ? 0.0 : 1.0);
  records["meta.pattern"] = pat;
  std::string langs;
  CheckpointRecord vocabs{{cfg.languages.size()}, {}};
  for (size_t i = 0; i < cfg.languages.size(); ++i) {
    if (i) langs += ",";
    langs += cfg.languages[i];
    vocabs.values.push_back(static_cast<double>(cfg.vocab_sizes[i]));
  }
  records["meta.languages=" + langs] = scalar_rec(0.0);
  records["meta.vocab_sizes"] = vocabs;
  records["meta.epoch"] = scalar_rec(static_cast<double>(snapshot.epoch));
  records["meta.lr"] = scalar_rec(snapshot.lr);
  records["meta.valid_ppl"] = {{snapshot.valid_ppls.size()},
                               snapshot.valid_ppls};
  records["opt.no_improve"] =
      scalar_rec(static_cast<double>(snapshot.no_improve));
  records["opt.anneal_count"] =
      scalar_rec(static_cast<double>(snapshot.anneal_count));
  records["opt.asgd_active"] = scalar_rec(snapshot.asgd_active ? 1.0 : 0.0);
  records["opt.asgd_samples"] =
      scalar_rec(static_cast<double>(snapshot.asgd_samples));
  for (const auto& [name, t] : snapshot.model.named_parameters())
    records["param." + name] = {
        t->shape(), std::vector<double>(t->data().begin(), t->data().end())};
  for (const auto& [name, values] : snapshot.averaged) {
    auto it = records.find("param." + name);
    if (it == records.end())
      throw IoError("averaged buffer '" + name + "' has no parameter");
    records["avg." + name] = {it->second.shape, values};
  }
  write_checkpoint(path, records);
}

TrainerSnapshot load_model_checkpoint(const std::filesystem::path& path) {
  const CheckpointMap records = read_checkpoint(path);
  TrainerSnapshot snap;

  ModelConfig cfg;
  cfg.embedding = static_cast<size_t>(need_scalar(records, "meta.embedding"));
  cfg.hidden = static_cast<size_t>(need_scalar(records, "meta.hidden"));
  const auto& pat = need_rec(records, "meta.pattern");
  if (pat.values.size() != 3)
    throw IoError("checkpoint record 'meta.pattern' must have 3 entries");
  for (size_t i = 0; i < 3; ++i)
    cfg.pattern[i] = pat.values[i] == 0.0 ? LayerScope::kShared
                                          : LayerScope::kPerLanguage;
  std::string langs;
  for (const auto& [name, rec] : records)
    if (name.rfind("meta.languages=", 0) == 0)
      langs = name.substr(std::string("meta.languages=").size());
  if (langs.empty())
    throw IoError("checkpoint missing record 'meta.languages='");
  std::stringstream ls(langs);
  std::string lang;
  while (std::getline(ls, lang, ','))
    if (!lang.empty()) cfg.languages.push_back(lang);
  const auto& vocabs = need_rec(records, "meta.vocab_sizes");
  if (vocabs.values.size() != cfg.languages.size())
    throw IoError("checkpoint 'meta.vocab_sizes' disagrees with language list");
  for (double v : vocabs.values)
    cfg.vocab_sizes.push_back(static_cast<size_t>(v));

  // Structure-only build; every value is overwritten from records below.
  snap.model = build_model(cfg, Rng(0));
  for (const auto& [name, t] : snap.model.named_parameters()) {
    const auto& rec = need_rec(records, "param." + name);
    if (rec.shape != t->shape())
      throw IoError("checkpoint record 'param." + name + "': shape " +
                    shape_str(rec.shape) + " does not match model shape " +
                    shape_str(t->shape()));
    t->mutable_data().assign(rec.values.begin(), rec.values.end());
  }

  const auto& hash_rec = need_rec(records, "meta.config_hash");
  if (hash_rec.values.size() != 2)
    throw IoError("checkpoint record 'meta.config_hash' must have 2 entries");
  const uint64_t stored =
      (static_cast<uint64_t>(hash_rec.values[0]) << 32) |
      static_cast<uint64_t>(hash_rec.values[1]);
  if (stored != snap.model.config_hash())
    throw ConfigError("checkpoint config hash " + std::to_string(stored) +
                      " does not match reconstructed model hash " +
                      std::to_string(snap.model.config_hash()));

  snap.epoch = static_cast<size_t>(need_scalar(records, "meta.epoch"));
  snap.lr = need_scalar(records, "meta.lr");
  snap.valid_ppls = need_rec(records, "meta.valid_ppl").values;
  snap.no_improve = static_cast<int>(need_scalar(records, "opt.no_improve"));
  snap.anneal_count =
      static_cast<int>(need_scalar(records, "opt.anneal_count"));
  snap.asgd_active = need_scalar(records, "opt.asgd_active") != 0.0;
  snap.asgd_samples =
      static_cast<size_t>(need_scalar(records, "opt.asgd_samples"));
  for (const auto& [name, rec] : records)
    if (name.rfind("avg.", 0) == 0) snap.averaged[name.substr(4)] = rec.values;
  return snap;
}

void verify_checkpoint_compatible(const TrainerSnapshot& snapshot,
                                  const ModelConfig& expected) {
  ModelConfig canon = expected;
  if (canon.languages.size() == 1)
    canon.pattern = {LayerScope::kPerLanguage, LayerScope::kPerLanguage,
                     LayerScope::kPerLanguage};
  ModelParams probe;
  probe.config = canon;
  if (snapshot.model.config_hash() != probe.config_hash())
    throw ConfigError(
        "checkpoint is incompatible with this configuration (config hash " +
        std::to_string(snapshot.model.config_hash()) + " vs " +
        std::to_string(probe.config_hash()) + ")");
}

}  // namespace mllm
