#pragma once

#include <random>
#include <span>

#include "vslnet/tensor.hpp"

namespace vslnet {

// ---- Linear algebra and elementwise ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x[n x d] + row[d], the bias broadcast used by every affine layer.
Tensor add_row_vector(const Tensor& x, const Tensor& row);
// x[n x d] with row i multiplied by weights[i].
Tensor scale_rows(const Tensor& x, const Tensor& weights);
// x multiplied by a one-element tensor.
Tensor mul_scalar(const Tensor& x, const Tensor& factor);
// v[d] (or [1 x d]) stacked n times into [n x d].
Tensor repeat_rows(const Tensor& v, std::size_t n);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// The element at a flat index as a one-element tensor.
Tensor element(const Tensor& x, std::size_t flat);

// ---- Normalization and sequence layers ----

// Softmax along `axis` (-1 = last) of a rank-1 or rank-2 tensor; positions with
// mask 0 get probability exactly 0. Throws ShapeError if a slice is fully masked.
Tensor masked_softmax(const Tensor& logits, const Tensor& mask, int axis = -1);
Tensor masked_log_softmax(const Tensor& logits, const Tensor& mask, int axis = -1);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

// "Same" 1-D convolution of x[n x d_in] with kernels[w x d_in x d_out], w odd.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias);

// Inverted dropout. Callers skip it outside training.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

// Mean binary cross-entropy of sigmoid(logits) against targets over mask-1 positions.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& mask);

// s / max(max(s), eps) for a positive score vector.
Tensor normalize_by_max(const Tensor& scores, double eps = 1e-12);

// Unidirectional LSTM over all rows of x[n x d_in] from zero state; returns the
// hidden states [n x d]. Gate column layout in the weights is (i, f, g, o).
Tensor lstm_sequence(const Tensor& x, const Tensor& w_input, const Tensor& w_hidden,
                     const Tensor& bias);

// Sequence mask helpers: {1,1,0} -> tensor of 0/1 values.
Tensor mask_tensor(std::span<const std::uint8_t> mask, DType dtype);
// Zeroes the rows of x[n x d] whose mask entry is 0.
Tensor mask_rows(const Tensor& x, std::span<const std::uint8_t> mask);

}  // namespace vslnet
