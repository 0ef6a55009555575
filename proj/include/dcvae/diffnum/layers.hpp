#pragma once

#include <random>
#include <string>
#include <vector>

#include "dcvae/diffnum/graph.hpp"

namespace dcvae::diffnum {

/// y = W x + b, W stored out x in.
struct Dense {
  Parameter weight;
  Parameter bias;

  std::size_t in_features() const noexcept { return weight.value.cols(); }
  std::size_t out_features() const noexcept { return weight.value.rows(); }
  Var forward(Graph& g, Var x) const;
};

/// Glorot-uniform weights, zero bias. `zero_weights` gives an all-zero layer.
Dense make_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
                 bool zero_weights = false);

/// Stack of Dense layers with tanh between them and a linear last layer.
struct Mlp {
  std::vector<Dense> layers;

  std::size_t in_features() const { return layers.front().in_features(); }
  std::size_t out_features() const { return layers.back().out_features(); }
  Var forward(Graph& g, Var x) const;
  /// tanh after every layer, including the last.
  Var forward_hidden(Graph& g, Var x) const;
  void collect(std::vector<Parameter*>& out);
};

/// `sizes` = {in, hidden..., out}.
Mlp make_mlp(const std::string& name, const std::vector<std::size_t>& sizes,
             std::mt19937_64& rng, bool zero_last = false);

}  // namespace dcvae::diffnum
