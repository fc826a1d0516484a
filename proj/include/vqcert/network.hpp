#pragma once

// Plain feed-forward stacks of convolutions, activations and upsampling, with
// a hand-written reverse pass.

#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert {

using Layer = std::variant<ConvLayer, ActivationSpec, Upsample>;

enum class NetworkRole { encoder, decoder };

inline std::string to_string(NetworkRole r) { return r == NetworkRole::encoder ? "encoder" : "decoder"; }

struct NetworkSpec {
  NetworkRole role = NetworkRole::encoder;
  std::vector<Layer> layers;

  // Output shape of the whole stack for `in`; throws if the chain breaks.
  Shape3 output_shape(Shape3 in) const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      try {
        in = std::visit(
            [&](const auto& l) -> Shape3 {
              using L = std::decay_t<decltype(l)>;
              if constexpr (std::is_same_v<L, ConvLayer>) {
                return l.output_shape(in);
              } else if constexpr (std::is_same_v<L, Upsample>) {
                require(l.factor >= 1, "upsample factor must be >= 1");
                return Shape3{in.c, in.h * l.factor, in.w * l.factor};
              } else {
                return in;
              }
            },
            layers[k]);
      } catch (const contract_error& e) {
        throw contract_error("layer " + std::to_string(k) + ": " + e.what());
      }
    }
    return in;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      if (const auto* c = std::get_if<ConvLayer>(&l)) n += c->kernel.size();
    return n;
  }

  std::vector<ConvLayer*> conv_layers() {
    std::vector<ConvLayer*> out;
    for (auto& l : layers)
      if (auto* c = std::get_if<ConvLayer>(&l)) out.push_back(c);
    return out;
  }
  std::vector<const ConvLayer*> conv_layers() const {
    std::vector<const ConvLayer*> out;
    for (const auto& l : layers)
      if (const auto* c = std::get_if<ConvLayer>(&l)) out.push_back(c);
    return out;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Inputs of every layer, kept for the reverse pass. activations[k] is the
// input of layer k; activations.back() is the network output.
struct ForwardTrace {
  std::vector<Tensor> activations;
  const Tensor& output() const { return activations.back(); }
};

inline Tensor apply_layer(const Layer& layer, const Tensor& x) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConvLayer>) {
          return conv2d_forward(x, l);
        } else if constexpr (std::is_same_v<L, Upsample>) {
          return upsample_forward(x, l);
        } else {
          return apply_activation(x, l);
        }
      },
      layer);
}

inline Tensor forward(const NetworkSpec& net, Tensor x) {
  for (const auto& l : net.layers) x = apply_layer(l, x);
  return x;
}

inline ForwardTrace forward_trace(const NetworkSpec& net, const Tensor& x) {
  ForwardTrace t;
  t.activations.reserve(net.layers.size() + 1);
  t.activations.push_back(x);
  for (const auto& l : net.layers) t.activations.push_back(apply_layer(l, t.activations.back()));
  return t;
}

// Kernel gradients, one per conv layer in network order.
struct NetworkGrads {
  std::vector<Kernel4> kernels;
  Tensor input;
};

inline NetworkGrads zero_grads(const NetworkSpec& net) {
  NetworkGrads g;
  for (const auto* c : net.conv_layers()) {
    const Kernel4& k = c->kernel;
    g.kernels.emplace_back(k.out_channels(), k.in_channels(), k.kh(), k.kw());
  }
  return g;
}

inline NetworkGrads backward(const NetworkSpec& net, const ForwardTrace& trace, Tensor grad_out) {
  require(trace.activations.size() == net.layers.size() + 1, "backward: trace does not match network");
  NetworkGrads g = zero_grads(net);
  std::size_t conv_index = g.kernels.size();
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const Tensor& in = trace.activations[k];
    if (const auto* c = std::get_if<ConvLayer>(&net.layers[k])) {
      ConvGrads cg = conv2d_backward(in, *c, grad_out);
      g.kernels[--conv_index] = std::move(cg.kernel);
      grad_out = std::move(cg.input);
    } else if (const auto* u = std::get_if<Upsample>(&net.layers[k])) {
      grad_out = upsample_backward(in.shape(), *u, grad_out);
    } else {
      grad_out = activation_backward(in, std::get<ActivationSpec>(net.layers[k]), std::move(grad_out));
    }
  }
  g.input = std::move(grad_out);
  return g;
}

}  // namespace vqcert
