#include "vslnet/losses.hpp"

#include <algorithm>

namespace vslnet {

namespace {

Tensor labels_tensor(std::span<const std::uint8_t> labels, DType dtype) {
  return mask_tensor(labels, dtype);
}

Tensor boundary_ce(const Tensor& logits, std::size_t index, const Tensor& mask,
                   std::span<const std::uint8_t> valid, const char* which) {
  if (index >= valid.size()) {
    throw DataError(std::string(which) + " label " + std::to_string(index) +
                    " is outside a sequence of length " + std::to_string(valid.size()));
  }
  if (!valid[index]) {
    throw DataError(std::string(which) + " label " + std::to_string(index) +
                    " falls on a padded position");
  }
  return scale(element(masked_log_softmax(logits, mask), index), -1.0);
}

}  // namespace

Tensor span_loss(const Tensor& start_logits, const Tensor& end_logits, std::size_t start_index,
                 std::size_t end_index, std::span<const std::uint8_t> mask) {
  if (start_logits.shape() != Shape{mask.size()} || end_logits.shape() != Shape{mask.size()}) {
    throw ShapeError("span_loss: logits " + shape_str(start_logits.shape()) + " / " +
                     shape_str(end_logits.shape()) + " vs mask of length " +
                     std::to_string(mask.size()));
  }
  const Tensor m = mask_tensor(mask, start_logits.dtype());
  const Tensor ce_s = boundary_ce(start_logits, start_index, m, mask, "start");
  const Tensor ce_e = boundary_ce(end_logits, end_index, m, mask, "end");
  return scale(add(ce_s, ce_e), 0.5);
}

Tensor qgh_loss(const Tensor& highlight_logits, std::span<const std::uint8_t> labels,
                std::span<const std::uint8_t> mask) {
  const DType dt = highlight_logits.dtype();
  return bce_with_logits(highlight_logits, labels_tensor(labels, dt), mask_tensor(mask, dt));
}

Tensor npm_loss(std::span<const Tensor> nil_logits,
                std::span<const std::vector<std::uint8_t>> nil_labels) {
  if (nil_logits.empty() || nil_logits.size() != nil_labels.size()) {
    throw ContractError("npm_loss needs one label vector per scale");
  }
  Tensor total;
  for (std::size_t i = 0; i < nil_logits.size(); ++i) {
    const DType dt = nil_logits[i].dtype();
    const std::vector<std::uint8_t> all(nil_labels[i].size(), 1);
    const Tensor l =
        bce_with_logits(nil_logits[i], labels_tensor(nil_labels[i], dt), mask_tensor(all, dt));
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(nil_logits.size()));
}

Tensor total_loss(Variant variant, const LossComponents& c) {
  auto need = [&](const std::optional<Tensor>& t, const char* name) -> const Tensor& {
    if (!t || !t->defined()) {
      throw ContractError(std::string(variant_name(variant)) + " loss needs the " + name +
                          " component");
    }
    return *t;
  };
  Tensor loss = need(c.span, "span");
  if (variant != Variant::kBase) loss = add(loss, need(c.qgh, "highlight"));
  if (variant == Variant::kNetL) loss = add(loss, need(c.npm, "nil"));
  return loss;
}

LossComponents sample_losses(const Model& model, const ForwardOutput& out,
                             const PreparedSample& sample) {
  const Variant v = model.config().variant;
  LossComponents c;
  std::vector<Tensor> nil_logits;
  for (const auto& s : out.scales) {
    Tensor span = span_loss(s.start_logits, s.end_logits, sample.start_index, sample.end_index,
                            out.mask);
    c.span = c.span ? add(*c.span, span) : span;
    if (v != Variant::kBase) {
      Tensor q = qgh_loss(s.highlight_logits, sample.highlight, out.mask);
      c.qgh = c.qgh ? add(*c.qgh, q) : q;
    }
    if (v == Variant::kNetL) nil_logits.push_back(s.nil_logits);
  }
  if (v == Variant::kNetL) c.npm = npm_loss(nil_logits, sample.nil_labels);
  return c;
}

}  // namespace vslnet
