#pragma once

#include "longctx/model.hpp"

namespace longctx {

// Residual stream helpers shared by forward() and the synthetic generator.
Matrix<float> embed(const ModelBundle& bundle, std::span<const TokenId> tokens);
Matrix<float> normalize_rows(const Matrix<float>& hidden,
                             std::span<const float> scale);
// hidden += block(norm(hidden)) for one layer.
void apply_layer(const ModelBundle& bundle, std::size_t layer,
                 Matrix<float>& hidden, const FilterPolicy* policy,
                 SsmInputs<float>* trace);

}  // namespace longctx
