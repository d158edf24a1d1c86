#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vslnet/network.hpp"

namespace vslnet {

// 0.5 * (CE(start) + CE(end)) from boundary logits under a masked softmax.
// Throws DataError if a label index is out of range or masked.
Tensor span_loss(const Tensor& start_logits, const Tensor& end_logits, std::size_t start_index,
                 std::size_t end_index, std::span<const std::uint8_t> mask);

// Mean binary cross-entropy of the highlight logits over valid positions.
Tensor qgh_loss(const Tensor& highlight_logits, std::span<const std::uint8_t> labels,
                std::span<const std::uint8_t> mask);

// Mean BCE over segments per scale, then averaged over scales.
Tensor npm_loss(std::span<const Tensor> nil_logits,
                std::span<const std::vector<std::uint8_t>> nil_labels);

struct LossComponents {
  std::optional<Tensor> span;
  std::optional<Tensor> qgh;
  std::optional<Tensor> npm;
};

// Unweighted sum of the components the variant trains with.
Tensor total_loss(Variant variant, const LossComponents& components);

// All components of one sample's forward pass. Span and highlight terms of
// multi-scale models are summed over scales.
LossComponents sample_losses(const Model& model, const ForwardOutput& out,
                             const PreparedSample& sample);

}  // namespace vslnet
