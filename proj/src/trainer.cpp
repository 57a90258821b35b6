#include "mllm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mllm/errors.hpp"
#include "mllm/evaluator.hpp"

namespace mllm {

Variant parse_variant(const std::string& text) {
  if (text == "mono-lstm") return Variant::kMonoLstm;
  if (text == "mono-awd") return Variant::kMonoAwd;
  if (text == "multi-awd") return Variant::kMultiAwd;
  throw ConfigError("unknown variant '" + text +
                    "' (expected mono-lstm, mono-awd or multi-awd)");
}

std::string variant_str(Variant v) {
  switch (v) {
    case Variant::kMonoLstm: return "mono-lstm";
    case Variant::kMonoAwd: return "mono-awd";
    case Variant::kMultiAwd: return "multi-awd";
  }
  return "?";
}

void TrainingConfig::validate() const {
  auto rate = [](double p, const char* what) {
    if (p < 0.0 || p >= 1.0)
      throw ConfigError(std::string(what) + " rate " + std::to_string(p) +
                        " outside [0, 1)");
  };
  rate(dropout_input, "input dropout");
  rate(dropout_output, "output dropout");
  rate(dropout_hidden, "variational dropout");
  rate(dropout_embedding, "embedding dropout");
  rate(weight_drop, "weight drop");
  if (learning_rate <= 0.0)
    throw ConfigError("learning rate must be positive");
  if (alpha < 0.0 || beta < 0.0)
    throw ConfigError("alpha and beta must be non-negative");
  if (grad_clip <= 0.0) throw ConfigError("gradient clip must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (base_length < 5) throw ConfigError("base sequence length must be >= 5");
  if (max_epochs == 0) throw ConfigError("max epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (lr_floor <= 0.0) throw ConfigError("lr floor must be positive");
}

void apply_variant(TrainingConfig& config, Variant v) {
  if (v == Variant::kMonoLstm) {
    config.dropout_hidden = 0.0;
    config.dropout_embedding = 0.0;
    config.weight_drop = 0.0;
    config.alpha = 0.0;
    config.beta = 0.0;
    config.variable_length = false;
  }
}

SharingPattern variant_pattern(Variant v) {
  if (v == Variant::kMultiAwd) return kDefaultPattern;
  return {LayerScope::kPerLanguage, LayerScope::kPerLanguage,
          LayerScope::kPerLanguage};
}

SegmentBatch to_time_major(const BatchStream::Segment& segment) {
  SegmentBatch out;
  out.batch = segment.batch;
  out.length = segment.length;
  out.inputs.resize(segment.inputs.size());
  out.targets.resize(segment.targets.size());
  for (size_t b = 0; b < segment.batch; ++b)
    for (size_t t = 0; t < segment.length; ++t) {
      out.inputs[t * segment.batch + b] = segment.inputs[b * segment.length + t];
      out.targets[t * segment.batch + b] =
          segment.targets[b * segment.length + t];
    }
  return out;
}

std::vector<LanguageMasks> sample_masks(const ModelParams& model,
                                        const TrainingConfig& config,
                                        Rng& seg_rng) {
  const size_t batch = config.batch_size;
  const auto& cfg = model.config;

  // Shared layers are weight-dropped once per segment; every language's
  // pass through them sees the same mask.
  std::array<TensorPtr, 3> shared_weight{};
  if (config.weight_drop > 0.0) {
    for (size_t slot = 0; slot < cfg.pattern.size(); ++slot)
      if (cfg.pattern[slot] == LayerScope::kShared)
        shared_weight[slot] = sample_weight_drop_mask(
            model.shared_layers.at(slot).u->shape(), config.weight_drop,
            seg_rng);
  }

  std::vector<LanguageMasks> out;
  for (size_t li = 0; li < model.languages.size(); ++li) {
    LanguageMasks m;
    if (config.dropout_input > 0.0)
      m.input = sample_variational_mask(batch, cfg.embedding,
                                        config.dropout_input, seg_rng);
    if (config.dropout_hidden > 0.0) {
      m.hidden[0] = sample_variational_mask(batch, cfg.hidden,
                                            config.dropout_hidden, seg_rng);
      m.hidden[1] = sample_variational_mask(batch, cfg.hidden,
                                            config.dropout_hidden, seg_rng);
    }
    if (config.dropout_output > 0.0)
      m.output = sample_variational_mask(batch, cfg.embedding,
                                         config.dropout_output, seg_rng);
    if (config.dropout_embedding > 0.0) {
      const size_t vocab = model.languages[li].embedding->rows();
      if (config.embedding_drop_per_row) {
        m.embedding_rows.reserve(batch * vocab);
        for (size_t b = 0; b < batch; ++b) {
          auto rows = sample_embedding_row_mask(
              vocab, config.dropout_embedding, seg_rng);
          m.embedding_rows.insert(m.embedding_rows.end(), rows.begin(),
                                  rows.end());
        }
      } else {
        m.embedding_rows = sample_embedding_row_mask(
            vocab, config.dropout_embedding, seg_rng);
      }
    }
    if (config.weight_drop > 0.0) {
      for (size_t slot = 0; slot < cfg.pattern.size(); ++slot) {
        if (cfg.pattern[slot] == LayerScope::kShared)
          m.weight[slot] = shared_weight[slot];
        else
          m.weight[slot] = sample_weight_drop_mask(
              model.languages[li].own_layers.at(slot).u->shape(),
              config.weight_drop, seg_rng);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

JointLoss joint_step(ModelParams& model,
                     const std::vector<SegmentBatch>& segments,
                     const std::vector<LanguageMasks>& masks,
                     std::vector<std::vector<LstmState>>& states,
                     const TrainingConfig& config, bool do_backward) {
  const size_t m_langs = model.languages.size();
  if (segments.size() != m_langs || masks.size() != m_langs ||
      states.size() != m_langs)
    throw DimensionError("joint_step: need one segment, mask set and state "
                         "per language");
  const size_t len = segments[0].length;
  for (const auto& s : segments)
    if (s.length != len)
      throw DimensionError(
          "joint_step: all languages must receive the same segment length");

  if (do_backward)
    for (const auto& [name, t] : model.named_parameters()) {
      t->grad_buffer();
      t->zero_grad();
    }

  JointLoss result;
  result.per_language.resize(m_langs);
  Graph g;
  TensorPtr total;
  TensorPtr ce_scaled_sum;
  std::vector<std::vector<LstmState>> new_states(m_langs);
  for (size_t li = 0; li < m_langs; ++li) {
    const auto& seg = segments[li];
    auto res = forward_language(g, model, li, seg.inputs, seg.batch,
                                seg.length, states[li], masks[li]);
    auto ce = g.softmax_cross_entropy(res.logits, seg.targets);
    result.per_language[li].ce = ce->item();
    result.ce_sum += ce->item();
    ce_scaled_sum = ce_scaled_sum ? g.add(ce_scaled_sum, ce) : ce;

    const double inv_m = 1.0 / static_cast<double>(m_langs);
    if (config.alpha > 0.0) {
      auto ar = g.scale(g.mean_all(g.square(res.dropped_final)),
                        config.alpha * inv_m);
      result.per_language[li].ar = ar->item();
      total = total ? g.add(total, ar) : ar;
    }
    if (config.beta > 0.0 && seg.length > 1) {
      std::vector<TensorPtr> diffs;
      diffs.reserve(seg.length - 1);
      for (size_t t = 0; t + 1 < seg.length; ++t)
        diffs.push_back(
            g.sub(res.raw_final_steps[t + 1], res.raw_final_steps[t]));
      auto tar = g.scale(g.mean_all(g.square(g.concat_rows(diffs))),
                         config.beta * inv_m);
      result.per_language[li].tar = tar->item();
      total = total ? g.add(total, tar) : tar;
    }
    for (const auto& s : res.final_states)
      new_states[li].push_back(detach(s));
  }
  auto ce_term = g.scale(ce_scaled_sum, 1.0 / static_cast<double>(m_langs));
  total = total ? g.add(ce_term, total) : ce_term;
  result.total = total->item();

  if (!std::isfinite(result.total)) {
    std::ostringstream os;
    os << "joint loss is non-finite; per-language cross entropies:";
    for (size_t li = 0; li < m_langs; ++li)
      os << " " << model.languages[li].language << "="
         << result.per_language[li].ce;
    throw NumericError(os.str());
  }
  if (do_backward) g.backward(total);
  states = std::move(new_states);
  return result;
}

double clip_global_norm(const ModelParams& model, double max_norm) {
  double sq = 0.0;
  const auto params = model.named_parameters();
  for (const auto& [name, t] : params) {
    if (!t->has_grad()) continue;
    for (double v : t->grad()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t->has_grad()) continue;
      for (double& v : t->grad_buffer()) v *= factor;
    }
  }
  return norm;
}

EpochStats train_epoch(ModelParams& model, std::vector<BatchStream>& streams,
                       const TrainingConfig& config, double lr, Rng& run_rng,
                       size_t epoch_no,
                       std::map<std::string, std::vector<double>>* averaged,
                       size_t* asgd_samples) {
  const auto t0 = std::chrono::steady_clock::now();
  const size_t m_langs = model.languages.size();
  if (streams.size() != m_langs)
    throw DimensionError("train_epoch: one stream per language required");

  EpochStats stats;
  stats.train_ce.assign(m_langs, 0.0);

  // Hidden state is carried and detached across segments, reset at epoch
  // boundaries.
  std::vector<std::vector<LstmState>> states;
  for (size_t li = 0; li < m_langs; ++li)
    states.push_back(zero_states(model, config.batch_size));

  size_t longest = 0;
  for (const auto& s : streams) longest = std::max(longest, s.length());

  Rng plan_rng = run_rng.fork("plan/e" + std::to_string(epoch_no));
  const auto params = model.named_parameters();

  size_t consumed = 0;
  size_t step = 0;
  while (consumed < longest) {
    const SegmentPlan plan = sample_segment_plan(plan_rng, config.base_length,
                                                 !config.variable_length);
    Rng seg_rng = run_rng.fork("masks/e" + std::to_string(epoch_no) + "/s" +
                               std::to_string(step));
    auto masks = sample_masks(model, config, seg_rng);
    std::vector<SegmentBatch> segments;
    segments.reserve(m_langs);
    for (auto& stream : streams)
      segments.push_back(to_time_major(stream.next(plan.length)));

    JointLoss loss;
    try {
      loss = joint_step(model, segments, masks, states, config, true);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch_no) + " step " +
                         std::to_string(step) + ": " + e.what());
    }
    clip_global_norm(model, config.grad_clip);
    const double step_lr = lr * plan.lr_scale;
    for (const auto& [name, t] : params) {
      auto& data = t->mutable_data();
      const auto& grad = t->grad();
      for (size_t i = 0; i < data.size(); ++i) data[i] -= step_lr * grad[i];
    }
    if (averaged && !averaged->empty()) {
      ++*asgd_samples;
      const double inv_n = 1.0 / static_cast<double>(*asgd_samples);
      for (const auto& [name, t] : params) {
        auto& avg = (*averaged)[name];
        const auto& data = t->data();
        for (size_t i = 0; i < avg.size(); ++i)
          avg[i] += (data[i] - avg[i]) * inv_n;
      }
    }

    for (size_t li = 0; li < m_langs; ++li)
      stats.train_ce[li] += loss.per_language[li].ce;
    stats.joint_mean += loss.total;
    stats.ce_mean += loss.ce_sum;
    consumed += plan.length;
    ++step;
  }

  stats.segments = step;
  for (auto& v : stats.train_ce) v /= static_cast<double>(step);
  stats.joint_mean /= static_cast<double>(step);
  stats.ce_mean /= static_cast<double>(step * m_langs);
  stats.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return stats;
}

ScheduleAction validate_and_schedule(ScheduleState& state,
                                     double mean_valid_ppl,
                                     const TrainingConfig& config,
                                     size_t epoch) {
  if (state.best_epoch < 0 || mean_valid_ppl < state.best_ppl) {
    state.best_ppl = mean_valid_ppl;
    state.best_epoch = static_cast<int>(epoch);
    state.no_improve = 0;
    return epoch >= config.max_epochs ? ScheduleAction::kStop
                                      : ScheduleAction::kContinue;
  }
  ++state.no_improve;
  if (epoch >= config.max_epochs) return ScheduleAction::kStop;
  if (state.no_improve < config.patience) return ScheduleAction::kContinue;
  state.no_improve = 0;
  if (config.asgd && !state.asgd_active) {
    state.asgd_active = true;
    return ScheduleAction::kSwitchAveraging;
  }
  state.lr /= 4.0;
  ++state.anneal_count;
  if (state.lr < config.lr_floor) return ScheduleAction::kStop;
  return ScheduleAction::kAnneal;
}

namespace {

ModelParams snapshot_for_eval(
    const ModelParams& model,
    const std::map<std::string, std::vector<double>>& averaged) {
  if (averaged.empty()) return clone_model(model);
  ModelParams snap = clone_model(model);
  for (const auto& [name, t] : snap.named_parameters()) {
    auto it = averaged.find(name);
    if (it != averaged.end())
      t->mutable_data().assign(it->second.begin(), it->second.end());
  }
  return snap;
}

}  // namespace

TrainRunResult train_run(const std::vector<const LanguagePack*>& packs,
                         ModelConfig model_config,
                         const TrainingConfig& config, std::ostream* log) {
  config.validate();
  if (packs.empty()) throw ConfigError("train_run: no language packs");
  model_config.languages.clear();
  model_config.vocab_sizes.clear();
  for (const auto* pack : packs) {
    model_config.languages.push_back(pack->language);
    model_config.vocab_sizes.push_back(pack->vocab.size());
  }

  Rng master(config.seed);
  ModelParams model = build_model(model_config, master.fork("model"));
  Rng run_rng = master.fork("run");

  std::vector<BatchStream> streams;
  for (const auto* pack : packs)
    streams.emplace_back(pack->language, pack->train, config.batch_size);

  ScheduleState sched;
  sched.lr = config.learning_rate;
  std::map<std::string, std::vector<double>> averaged;
  size_t asgd_samples = 0;

  TrainRunResult result;
  PerplexityOptions eval_opts;
  // Larger evaluation blocks keep the B=1 GEMMs efficient; the block size
  // only reshuffles rounding at the last ulp.
  eval_opts.chunk = std::max<size_t>(config.base_length, 280);

  for (size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (auto& s : streams) s.reset_cursor();
    EpochStats stats = train_epoch(model, streams, config, sched.lr, run_rng,
                                   epoch, &averaged, &asgd_samples);

    const ModelParams eval_model = snapshot_for_eval(model, averaged);
    std::vector<double> ppls;
    double mean_ppl = 0.0;
    for (size_t li = 0; li < packs.size(); ++li) {
      ppls.push_back(perplexity(eval_model, li, packs[li]->valid, eval_opts));
      mean_ppl += ppls.back();
    }
    mean_ppl /= static_cast<double>(packs.size());

    std::ostringstream line;
    line << "epoch " << epoch << " | lr " << std::setprecision(8) << sched.lr
         << std::fixed << std::setprecision(6);
    for (size_t li = 0; li < packs.size(); ++li)
      line << " | ce " << packs[li]->language << " " << stats.train_ce[li];
    for (size_t li = 0; li < packs.size(); ++li)
      line << " | ppl " << packs[li]->language << " " << ppls[li];
    line << " | mean_ppl " << mean_ppl;
    result.log_lines.push_back(line.str());
    if (log) *log << result.log_lines.back() << std::endl;

    const bool improved =
        result.best_epoch < 0 || mean_ppl < result.best_mean_ppl;
    if (improved) {
      result.best_mean_ppl = mean_ppl;
      result.best_epoch = static_cast<int>(epoch);
      result.best_valid_ppls = ppls;
      result.best_model = snapshot_for_eval(model, averaged);
    }
    result.epochs_run = epoch;

    const ScheduleAction action =
        validate_and_schedule(sched, mean_ppl, config, epoch);
    if (action == ScheduleAction::kSwitchAveraging) {
      // Tail averaging starts from the current parameters.
      averaged.clear();
      for (const auto& [name, t] : model.named_parameters())
        averaged[name].assign(t->data().begin(), t->data().end());
      asgd_samples = 1;
    }
    if (action == ScheduleAction::kStop) break;
  }

  result.final_snapshot.model = clone_model(result.best_model);
  result.final_snapshot.lr = sched.lr;
  result.final_snapshot.no_improve = sched.no_improve;
  result.final_snapshot.anneal_count = sched.anneal_count;
  result.final_snapshot.asgd_active = sched.asgd_active;
  result.final_snapshot.asgd_samples = asgd_samples;
  result.final_snapshot.epoch = static_cast<size_t>(
      result.best_epoch < 0 ? 0 : result.best_epoch);
  result.final_snapshot.valid_ppls = result.best_valid_ppls;
  return result;
}

}  // namespace mllm
