#include "mllm/model.hpp"

#include <algorithm>
#include <sstream>

#include "mllm/errors.hpp"

namespace mllm {

SharingPattern parse_pattern(const std::string& text) {
  std::vector<LayerScope> tags;
  for (char c : text) {
    if (c == ',' || c == ' ') continue;
    if (c == 'S' || c == 's')
      tags.push_back(LayerScope::kShared);
    else if (c == 'P' || c == 'p')
      tags.push_back(LayerScope::kPerLanguage);
    else
      throw ConfigError("sharing pattern: unknown tag '" + std::string(1, c) +
                        "' in \"" + text + "\"");
  }
  if (tags.size() != 3)
    throw ConfigError("sharing pattern: expected exactly 3 layer tags, got " +
                      std::to_string(tags.size()) + " in \"" + text + "\"");
  return {tags[0], tags[1], tags[2]};
}

std::string pattern_str(const SharingPattern& pattern) {
  std::string s;
  for (size_t i = 0; i < pattern.size(); ++i) {
    if (i) s += ",";
    s += pattern[i] == LayerScope::kShared ? "S" : "P";
  }
  return s;
}

size_t ModelParams::language_index(const std::string& id) const {
  for (size_t i = 0; i < languages.size(); ++i)
    if (languages[i].language == id) return i;
  throw LookupError("unknown language id '" + id + "'");
}

const LstmLayerParams& ModelParams::layer(size_t slot, size_t lang_idx) const {
  if (slot >= config.pattern.size())
    throw IndexError("layer slot " + std::to_string(slot) + " out of range");
  if (lang_idx >= languages.size())
    throw IndexError("language index " + std::to_string(lang_idx) +
                     " out of range");
  if (config.pattern[slot] == LayerScope::kShared)
    return shared_layers.at(slot);
  return languages[lang_idx].own_layers.at(slot);
}

std::vector<std::pair<std::string, TensorPtr>> ModelParams::named_parameters()
    const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  auto add_layer = [&](const std::string& prefix, const LstmLayerParams& p) {
    out.emplace_back(prefix + ".w", p.w);
    out.emplace_back(prefix + ".u", p.u);
    out.emplace_back(prefix + ".b", p.b);
  };
  for (size_t slot = 0; slot < config.pattern.size(); ++slot)
    if (config.pattern[slot] == LayerScope::kShared)
      add_layer("lstm" + std::to_string(slot) + ".shared",
                shared_layers.at(slot));
  for (const auto& lang : languages) {
    out.emplace_back("emb." + lang.language, lang.embedding);
    out.emplace_back("dec_b." + lang.language, lang.decoder_bias);
    for (size_t slot = 0; slot < config.pattern.size(); ++slot)
      if (config.pattern[slot] == LayerScope::kPerLanguage)
        add_layer("lstm" + std::to_string(slot) + "." + lang.language,
                  lang.own_layers.at(slot));
  }
  return out;
}

size_t ModelParams::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t->size();
  return n;
}

ModelParams::Partition ModelParams::parameters_of(size_t lang_idx) const {
  if (lang_idx >= languages.size())
    throw IndexError("language index " + std::to_string(lang_idx) +
                     " out of range");
  Partition part;
  for (size_t slot = 0; slot < config.pattern.size(); ++slot) {
    if (config.pattern[slot] == LayerScope::kShared) {
      const auto& p = shared_layers.at(slot);
      part.shared.push_back(p.w);
      part.shared.push_back(p.u);
      part.shared.push_back(p.b);
    }
  }
  const auto& lang = languages[lang_idx];
  part.specific.push_back(lang.embedding);
  part.specific.push_back(lang.decoder_bias);
  for (size_t slot = 0; slot < config.pattern.size(); ++slot) {
    if (config.pattern[slot] == LayerScope::kPerLanguage) {
      const auto& p = lang.own_layers.at(slot);
      part.specific.push_back(p.w);
      part.specific.push_back(p.u);
      part.specific.push_back(p.b);
    }
  }
  return part;
}

uint64_t ModelParams::config_hash() const {
  std::ostringstream os;
  os << "emb=" << config.embedding << ";hidden=" << config.hidden
     << ";pattern=" << pattern_str(config.pattern) << ";languages=";
  for (size_t i = 0; i < config.languages.size(); ++i)
    os << config.languages[i] << ":" << config.vocab_sizes[i] << ",";
  return fnv1a(os.str());
}

namespace {

std::array<std::pair<size_t, size_t>, 3> layer_dims(const ModelConfig& c) {
  // The last layer emits embedding-sized vectors so the tied decoder is
  // dimensionally consistent.
  return {{{c.embedding, c.hidden}, {c.hidden, c.hidden},
           {c.hidden, c.embedding}}};
}

}  // namespace

ModelParams build_model(const ModelConfig& config, const Rng& rng) {
  if (config.embedding == 0 || config.hidden == 0)
    throw ConfigError("model: embedding and hidden sizes must be positive");
  if (config.languages.empty())
    throw ConfigError("model: at least one language required");
  if (config.vocab_sizes.size() != config.languages.size())
    throw ConfigError("model: one vocabulary size per language required");
  for (size_t v : config.vocab_sizes)
    if (v < 2) throw ConfigError("model: vocabulary sizes must be >= 2");

  ModelParams model;
  model.config = config;
  // With one language, shared and per-language slots are indistinguishable;
  // canonicalizing makes the multilingual path reduce to the monolithic one
  // bit for bit.
  if (config.languages.size() == 1)
    model.config.pattern = {LayerScope::kPerLanguage,
                            LayerScope::kPerLanguage,
                            LayerScope::kPerLanguage};

  const auto dims = layer_dims(model.config);
  for (size_t slot = 0; slot < model.config.pattern.size(); ++slot) {
    if (model.config.pattern[slot] == LayerScope::kShared) {
      model.shared_layers[slot] = init_lstm_layer(
          dims[slot].first, dims[slot].second,
          rng.fork("init/lstm" + std::to_string(slot) + "/shared"));
    }
  }
  for (size_t li = 0; li < model.config.languages.size(); ++li) {
    LanguageParams lang;
    lang.language = model.config.languages[li];
    const size_t vocab = model.config.vocab_sizes[li];
    lang.embedding =
        Tensor::zeros({vocab, model.config.embedding}, true);
    auto erng = rng.fork("init/emb/" + lang.language);
    for (auto& v : lang.embedding->mutable_data()) v = erng.uniform(-0.5, 0.5);
    lang.decoder_bias = Tensor::zeros({vocab}, true);
    for (size_t slot = 0; slot < model.config.pattern.size(); ++slot) {
      if (model.config.pattern[slot] == LayerScope::kPerLanguage) {
        lang.own_layers[slot] = init_lstm_layer(
            dims[slot].first, dims[slot].second,
            rng.fork("init/lstm" + std::to_string(slot) + "/" +
                     lang.language));
      }
    }
    model.languages.push_back(std::move(lang));
  }
  return model;
}

ModelParams clone_model(const ModelParams& model) {
  ModelParams out;
  out.config = model.config;
  auto copy_tensor = [](const TensorPtr& t) {
    auto c = Tensor::zeros(t->shape(), t->requires_grad());
    c->mutable_data() = t->data();
    return c;
  };
  auto copy_layer = [&](const LstmLayerParams& p) {
    LstmLayerParams c;
    c.in_dim = p.in_dim;
    c.out_dim = p.out_dim;
    c.w = copy_tensor(p.w);
    c.u = copy_tensor(p.u);
    c.b = copy_tensor(p.b);
    return c;
  };
  for (const auto& [slot, p] : model.shared_layers)
    out.shared_layers[slot] = copy_layer(p);
  for (const auto& lang : model.languages) {
    LanguageParams l;
    l.language = lang.language;
    l.embedding = copy_tensor(lang.embedding);
    l.decoder_bias = copy_tensor(lang.decoder_bias);
    for (const auto& [slot, p] : lang.own_layers)
      l.own_layers[slot] = copy_layer(p);
    out.languages.push_back(std::move(l));
  }
  return out;
}

std::vector<LstmState> zero_states(const ModelParams& model, size_t batch) {
  std::vector<LstmState> states;
  const auto dims = layer_dims(model.config);
  for (size_t slot = 0; slot < model.config.pattern.size(); ++slot)
    states.push_back(zero_state(batch, dims[slot].second));
  return states;
}

ForwardResult forward_language(Graph& g, const ModelParams& model,
                               size_t lang_idx,
                               const std::vector<int32_t>& tokens,
                               size_t batch, size_t timesteps,
                               const std::vector<LstmState>& states,
                               const LanguageMasks& masks) {
  if (lang_idx >= model.languages.size())
    throw LookupError("forward: language index " + std::to_string(lang_idx) +
                      " out of range");
  if (tokens.size() != batch * timesteps)
    throw DimensionError("forward: " + std::to_string(tokens.size()) +
                         " tokens for batch " + std::to_string(batch) +
                         " x " + std::to_string(timesteps) + " timesteps");
  const auto& lang = model.languages[lang_idx];

  TensorPtr x_all;
  const size_t vocab = lang.embedding->rows();
  if (masks.embedding_rows.empty()) {
    x_all = g.gather_rows(lang.embedding, tokens);
  } else {
    // One decision per type per segment (size V), or per type per batch row
    // (size B*V) under the alternative scope.
    const bool per_row = masks.embedding_rows.size() == batch * vocab;
    if (!per_row && masks.embedding_rows.size() != vocab)
      throw DimensionError("forward: embedding row mask of " +
                           std::to_string(masks.embedding_rows.size()) +
                           " entries for vocabulary of " +
                           std::to_string(vocab));
    std::vector<double> scales(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
      const size_t tok = static_cast<size_t>(tokens[i]);
      scales[i] = per_row ? masks.embedding_rows[(i % batch) * vocab + tok]
                          : masks.embedding_rows[tok];
    }
    x_all = g.gather_rows_scaled(lang.embedding, tokens, scales);
  }

  StackMasks stack_masks;
  stack_masks.boundary_masks = {masks.input, masks.hidden[0],
                                masks.hidden[1]};
  stack_masks.u_masks = {masks.weight[0], masks.weight[1], masks.weight[2]};
  std::vector<const LstmLayerParams*> layers;
  for (size_t slot = 0; slot < model.config.pattern.size(); ++slot)
    layers.push_back(&model.layer(slot, lang_idx));

  ForwardResult res;
  res.layer_traces =
      lstm_stack_forward(g, layers, x_all, timesteps, states, stack_masks);
  const auto& last = res.layer_traces.back();
  res.raw_final_steps = last.steps;
  res.dropped_final =
      masks.output
          ? g.apply_mask(last.stacked, tile_mask(masks.output, timesteps))
          : last.stacked;
  res.logits = g.add_rowwise(g.matmul_nt(res.dropped_final, lang.embedding),
                             lang.decoder_bias);
  for (const auto& trace : res.layer_traces)
    res.final_states.push_back(trace.final_state);
  return res;
}

}  // namespace mllm
