#include "mllm/evaluator.hpp"

#include <cmath>

#include "mllm/errors.hpp"
#include "mllm/graph.hpp"

namespace mllm {

double perplexity(const ModelParams& model, size_t lang_idx,
                  const std::vector<int32_t>& stream,
                  const PerplexityOptions& options) {
  if (lang_idx >= model.languages.size())
    throw LookupError("perplexity: language index out of range");
  if (stream.size() < 2)
    throw IngestionError("perplexity: evaluation stream is empty");
  if (options.batch == 0 || options.chunk == 0)
    throw ConfigError("perplexity: batch and chunk must be positive");

  const size_t predictions = stream.size() - 1;
  auto states = zero_states(model, 1);
  const LanguageMasks no_masks{};

  double nll_sum = 0.0;
  size_t pos = 0;
  while (pos < predictions) {
    const size_t len = std::min(options.chunk, predictions - pos);
    std::vector<int32_t> inputs(stream.begin() + pos,
                                stream.begin() + pos + len);
    std::vector<int32_t> targets(stream.begin() + pos + 1,
                                 stream.begin() + pos + 1 + len);
    Graph g;
    auto res =
        forward_language(g, model, lang_idx, inputs, 1, len, states, no_masks);
    // Positions contribute in stream order; the chunked mean equals the
    // whole-stream mean re-weighted by chunk length.
    auto nll = g.softmax_cross_entropy(res.logits, targets);
    nll_sum += nll->item() * static_cast<double>(len);
    if (options.logit_sink)
      options.logit_sink(res.logits->data().data(), res.logits->cols(),
                         targets);
    std::vector<LstmState> next;
    next.reserve(res.final_states.size());
    for (const auto& s : res.final_states) next.push_back(detach(s));
    states = std::move(next);
    pos += len;
  }
  const double mean_nll = nll_sum / static_cast<double>(predictions);
  if (!std::isfinite(mean_nll))
    throw NumericError("perplexity: non-finite negative log likelihood");
  return std::exp(mean_nll);
}

}  // namespace mllm
