#pragma once

#include <functional>

#include "mllm/model.hpp"

namespace mllm {

struct PerplexityOptions {
  // The eval stream is split into `batch` consecutive rows whose hidden
  // state is carried across row seams, which is arithmetically identical to
  // batch 1; the reported value is therefore invariant to this setting.
  size_t batch = 1;
  // Positions per graph; state is carried (detached) across chunks.
  size_t chunk = 70;
  // Receives every chunk's logits and targets, for independent recomputation.
  std::function<void(const double* logits, size_t vocab,
                     const std::vector<int32_t>& targets)>
      logit_sink;
};

// exp(mean over all predicted positions of -log p(target)), dropout off,
// weight matrices unmasked, hidden state carried across the whole stream.
// Every token including "<eos>" and "<unk>" is predicted.
double perplexity(const ModelParams& model, size_t lang_idx,
                  const std::vector<int32_t>& stream,
                  const PerplexityOptions& options = {});

}  // namespace mllm
