#include "mllm/config.hpp"

#include <fstream>
#include <sstream>

#include "mllm/errors.hpp"

namespace mllm {

int64_t parse_threshold_value(const std::string& text) {
  if (text == "FULL" || text == "full") return kFullThreshold;
  std::string t = text;
  int64_t mult = 1;
  if (!t.empty() && (t.back() == 'K' || t.back() == 'k')) {
    mult = 1000;
    t.pop_back();
  }
  try {
    const int64_t v = std::stoll(t) * mult;
    if (v <= 0) throw ConfigError("threshold must be positive or FULL");
    return v;
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad threshold value '" + text + "'");
  } catch (const std::out_of_range&) {
    throw ConfigError("threshold value '" + text + "' out of range");
  }
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double to_double(const std::string& v, const std::string& key) {
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad number '" + v + "'");
  }
}

size_t to_size(const std::string& v, const std::string& key) {
  try {
    const long long n = std::stoll(v);
    if (n < 0) throw ConfigError("key '" + key + "': negative value");
    return static_cast<size_t>(n);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad integer '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': bad boolean '" + v + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::string section;
  size_t line_no = 0;
  std::stringstream ss(text);
  std::string raw;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' ||
                             line.back() == '\r'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": malformed section header");
      section = line.substr(1, line.size() - 2);
      if (section != "data" && section != "model" && section != "train" &&
          section != "sweep" && section != "output" && section != "run")
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    auto unknown = [&]() {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "' in [" + section + "]");
    };

    if (section == "data") {
      if (key == "languages") {
        cfg.data.languages = split_ws(value);
      } else if (key == "threshold") {
        cfg.data.threshold = parse_threshold_value(value);
      } else if (key.rfind("threshold.", 0) == 0) {
        cfg.data.language_thresholds[key.substr(10)] =
            parse_threshold_value(value);
      } else if (key.rfind("corpus.", 0) == 0) {
        const std::string rest = key.substr(7);
        const auto dot = rest.rfind('.');
        if (dot == std::string::npos) unknown();
        const std::string lang = rest.substr(0, dot);
        const std::string which = rest.substr(dot + 1);
        if (which == "train")
          cfg.data.corpora[lang].first = value;
        else if (which == "test")
          cfg.data.corpora[lang].second = value;
        else
          unknown();
      } else {
        unknown();
      }
    } else if (section == "model") {
      if (key == "embedding")
        cfg.model.embedding = to_size(value, key);
      else if (key == "hidden")
        cfg.model.hidden = to_size(value, key);
      else if (key == "pattern") {
        parse_pattern(value);  // validate now
        cfg.model.pattern = pattern_str(parse_pattern(value));
      } else
        unknown();
    } else if (section == "train") {
      auto& t = cfg.train.config;
      if (key == "batch_size") t.batch_size = to_size(value, key);
      else if (key == "base_length") t.base_length = to_size(value, key);
      else if (key == "learning_rate") t.learning_rate = to_double(value, key);
      else if (key == "max_epochs") t.max_epochs = to_size(value, key);
      else if (key == "dropout_input") t.dropout_input = to_double(value, key);
      else if (key == "dropout_output")
        t.dropout_output = to_double(value, key);
      else if (key == "dropout_hidden")
        t.dropout_hidden = to_double(value, key);
      else if (key == "dropout_embedding")
        t.dropout_embedding = to_double(value, key);
      else if (key == "weight_drop") t.weight_drop = to_double(value, key);
      else if (key == "alpha") t.alpha = to_double(value, key);
      else if (key == "beta") t.beta = to_double(value, key);
      else if (key == "grad_clip") t.grad_clip = to_double(value, key);
      else if (key == "patience")
        t.patience = static_cast<int>(to_size(value, key));
      else if (key == "lr_floor") t.lr_floor = to_double(value, key);
      else if (key == "variable_length")
        t.variable_length = to_bool(value, key);
      else if (key == "asgd") t.asgd = to_bool(value, key);
      else if (key == "embedding_drop_per_row")
        t.embedding_drop_per_row = to_bool(value, key);
      else if (key == "seed") t.seed = std::stoull(value);
      else if (key == "variant") {
        parse_variant(value);
        cfg.train.variant = value;
      } else if (key == "languages")
        cfg.train.languages = split_ws(value);
      else
        unknown();
    } else if (section == "sweep") {
      if (key == "variants") {
        cfg.sweep.variants = split_ws(value);
        for (const auto& v : cfg.sweep.variants) parse_variant(v);
      } else if (key == "thresholds") {
        cfg.sweep.thresholds.clear();
        for (const auto& v : split_ws(value))
          cfg.sweep.thresholds.push_back(parse_threshold_value(v));
      } else if (key == "seeds")
        cfg.sweep.seeds = to_size(value, key);
      else if (key == "jobs")
        cfg.sweep.jobs = to_size(value, key);
      else
        unknown();
    } else if (section == "output") {
      if (key == "dir")
        cfg.output.dir = value;
      else
        unknown();
    } else if (section == "run") {
      if (key == "paper_scale")
        cfg.paper_scale = to_bool(value, key);
      else
        unknown();
    } else {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": key outside any section");
    }
  }
  if (cfg.paper_scale) {
    cfg.model.embedding = 512;
    cfg.model.hidden = 1150;
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return parse_run_config(os.str());
}

namespace {

std::string threshold_text(int64_t t) {
  return t == kFullThreshold ? "FULL" : std::to_string(t);
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += " ";
    out += parts[i];
  }
  return out;
}

// %.17g survives the round trip exactly.
std::string num(double v) {
  char buf[64];
  snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string dump_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[run]\n";
  os << "paper_scale = " << (cfg.paper_scale ? "true" : "false") << "\n";
  os << "\n[data]\n";
  os << "languages = " << join(cfg.data.languages) << "\n";
  for (const auto& [lang, paths] : cfg.data.corpora) {
    os << "corpus." << lang << ".train = " << paths.first << "\n";
    os << "corpus." << lang << ".test = " << paths.second << "\n";
  }
  os << "threshold = " << threshold_text(cfg.data.threshold) << "\n";
  for (const auto& [lang, thr] : cfg.data.language_thresholds)
    os << "threshold." << lang << " = " << threshold_text(thr) << "\n";
  os << "\n[model]\n";
  os << "embedding = " << cfg.model.embedding << "\n";
  os << "hidden = " << cfg.model.hidden << "\n";
  os << "pattern = " << cfg.model.pattern << "\n";
  const auto& t = cfg.train.config;
  os << "\n[train]\n";
  os << "variant = " << cfg.train.variant << "\n";
  if (!cfg.train.languages.empty())
    os << "languages = " << join(cfg.train.languages) << "\n";
  os << "batch_size = " << t.batch_size << "\n";
  os << "base_length = " << t.base_length << "\n";
  os << "learning_rate = " << num(t.learning_rate) << "\n";
  os << "max_epochs = " << t.max_epochs << "\n";
  os << "dropout_input = " << num(t.dropout_input) << "\n";
  os << "dropout_output = " << num(t.dropout_output) << "\n";
  os << "dropout_hidden = " << num(t.dropout_hidden) << "\n";
  os << "dropout_embedding = " << num(t.dropout_embedding) << "\n";
  os << "weight_drop = " << num(t.weight_drop) << "\n";
  os << "alpha = " << num(t.alpha) << "\n";
  os << "beta = " << num(t.beta) << "\n";
  os << "grad_clip = " << num(t.grad_clip) << "\n";
  os << "patience = " << t.patience << "\n";
  os << "lr_floor = " << num(t.lr_floor) << "\n";
  os << "variable_length = " << (t.variable_length ? "true" : "false") << "\n";
  os << "asgd = " << (t.asgd ? "true" : "false") << "\n";
  os << "embedding_drop_per_row = "
     << (t.embedding_drop_per_row ? "true" : "false") << "\n";
  os << "seed = " << t.seed << "\n";
  os << "\n[sweep]\n";
  os << "variants = " << join(cfg.sweep.variants) << "\n";
  os << "thresholds =";
  for (const auto thr : cfg.sweep.thresholds)
    os << " " << threshold_text(thr);
  os << "\n";
  os << "seeds = " << cfg.sweep.seeds << "\n";
  os << "jobs = " << cfg.sweep.jobs << "\n";
  os << "\n[output]\n";
  os << "dir = " << cfg.output.dir << "\n";
  return os.str();
}

void validate_data_paths(const RunConfig& cfg) {
  if (cfg.data.languages.empty())
    throw ConfigError("[data] languages is empty");
  for (const auto& lang : cfg.data.languages) {
    auto it = cfg.data.corpora.find(lang);
    if (it == cfg.data.corpora.end() || it->second.first.empty() ||
        it->second.second.empty())
      throw ConfigError("[data] missing corpus paths for language '" + lang +
                        "'");
    for (const auto& p : {it->second.first, it->second.second})
      if (!std::filesystem::exists(p))
        throw ConfigError("[data] referenced path does not exist: " + p);
  }
}

ModelConfig model_config_from(const RunConfig& cfg) {
  ModelConfig m;
  m.embedding = cfg.model.embedding;
  m.hidden = cfg.model.hidden;
  m.pattern = parse_pattern(cfg.model.pattern);
  return m;
}

SweepSpec sweep_spec_from(const RunConfig& cfg) {
  SweepSpec spec;
  spec.data.languages = cfg.data.languages;
  for (const auto& [lang, paths] : cfg.data.corpora)
    spec.data.corpora[lang] = {paths.first, paths.second};
  for (const auto& v : cfg.sweep.variants)
    spec.variants.push_back(parse_variant(v));
  spec.thresholds = cfg.sweep.thresholds;
  if (cfg.paper_scale)
    spec.thresholds = {20000,  40000,  60000,  80000,  100000, 120000,
                       140000, 160000, 180000, 200000, 220000, 240000,
                       300000, 340000, 400000, kFullThreshold};
  spec.seeds_per_cell = cfg.sweep.seeds;
  return spec;
}

}  // namespace mllm
