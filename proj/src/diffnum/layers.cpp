#include "dcvae/diffnum/layers.hpp"

#include <cmath>

#include "dcvae/errors.hpp"

namespace dcvae::diffnum {

Var Dense::forward(Graph& g, Var x) const {
  return g.add(g.matvec(g.param(weight), x), g.param(bias));
}

Dense make_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
                 bool zero_weights) {
  Dense d{{name + ".weight", Tensor({out, in}, 0.0)}, {name + ".bias", Tensor({out}, 0.0)}};
  if (!zero_weights) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& w : d.weight.value.values()) w = u(rng);
  }
  return d;
}

Var Mlp::forward(Graph& g, Var x) const {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    x = layers[k].forward(g, x);
    if (k + 1 < layers.size()) x = g.tanh(x);
  }
  return x;
}

Var Mlp::forward_hidden(Graph& g, Var x) const {
  for (const Dense& layer : layers) x = g.tanh(layer.forward(g, x));
  return x;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (Dense& d : layers) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
}

Mlp make_mlp(const std::string& name, const std::vector<std::size_t>& sizes,
             std::mt19937_64& rng, bool zero_last) {
  if (sizes.size() < 2) throw ContractViolation("mlp needs at least input and output sizes");
  Mlp mlp;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const bool last = k + 2 == sizes.size();
    mlp.layers.push_back(make_dense(name + ".l" + std::to_string(k), sizes[k], sizes[k + 1], rng,
                                    last && zero_last));
  }
  return mlp;
}

}  // namespace dcvae::diffnum
